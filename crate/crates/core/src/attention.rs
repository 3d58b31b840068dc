//! Reference causal scaled-dot-product attention over rotated keys/queries,
//! with grouped-query sharing and length-dependent logit temperature.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{dot, LatentCloud};
use crate::error::{Error, Result};
use crate::rope::FrequencySchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub head_dim: usize,
    pub n_query_heads: usize,
    pub n_kv_heads: usize,
    pub train_len: u64,
    pub temperature_scaling: bool,
    pub scale_coefficient: f64,
    pub scale_exponent: f64,
}

impl AttentionConfig {
    /// Single-head config without temperature scaling.
    pub fn single_head(head_dim: usize, train_len: u64) -> Self {
        Self {
            head_dim,
            n_query_heads: 1,
            n_kv_heads: 1,
            train_len,
            temperature_scaling: false,
            scale_coefficient: 0.1,
            scale_exponent: 2.0,
        }
    }

    pub fn with_temperature_scaling(mut self) -> Self {
        self.temperature_scaling = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || self.head_dim % 2 != 0 {
            return Err(Error::OddHeadDim(self.head_dim));
        }
        if self.n_kv_heads == 0 || self.n_query_heads % self.n_kv_heads != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} query heads cannot be grouped over {} kv heads",
                self.n_query_heads, self.n_kv_heads
            )));
        }
        if self.train_len == 0 {
            return Err(Error::InvalidParameter("training length must be positive".into()));
        }
        Ok(())
    }

    /// Query heads served by each kv head.
    pub fn group_size(&self) -> usize {
        self.n_query_heads / self.n_kv_heads
    }

    pub fn kv_head_for(&self, query_head: usize) -> usize {
        query_head / self.group_size()
    }
}

/// `(1 + c·ln(max(n, L)/L))^e`: exactly 1 up to the training length, then
/// growing slowly. Multiplies the usual `1/√d` logit scale.
pub fn temperature_factor(n: usize, config: &AttentionConfig) -> f64 {
    if !config.temperature_scaling {
        return 1.0;
    }
    let l = config.train_len as f64;
    let ratio = (n as f64).max(l) / l;
    (1.0 + config.scale_coefficient * ratio.ln()).powf(config.scale_exponent)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for w in &mut out {
        *w /= total;
    }
    out
}

/// Causal attention rows. Row `r` belongs to the query at
/// `query_positions[r]` and covers exactly the keys at positions `<=` it.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub query_positions: Vec<usize>,
    pub key_positions: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

impl AttentionWeights {
    /// Weight on key position `key_pos` in row `r` (0 for invisible keys).
    pub fn weight(&self, r: usize, key_pos: usize) -> f64 {
        match self.key_positions.binary_search(&key_pos) {
            Ok(idx) => self.rows[r].get(idx).copied().unwrap_or(0.0),
            Err(_) => 0.0,
        }
    }
}

/// Rotated keys plus the logit scale for one window; yields one attention
/// row at a time so long windows never materialize the full matrix.
#[derive(Debug, Clone)]
pub struct AttentionKernel<'a> {
    schedule: Option<&'a FrequencySchedule>,
    rotated_keys: Vec<f64>,
    key_positions: Vec<usize>,
    d: usize,
    scale: f64,
}

impl<'a> AttentionKernel<'a> {
    /// `schedule = None` treats the latents as already rotated (post-RoPE
    /// dumps) and takes plain dot products.
    pub fn new(
        keys: &LatentCloud,
        config: &AttentionConfig,
        schedule: Option<&'a FrequencySchedule>,
    ) -> Result<Self> {
        config.validate()?;
        let dims = [Some(keys.d()), schedule.map(FrequencySchedule::head_dim)];
        for d in dims.into_iter().flatten() {
            if d != config.head_dim {
                return Err(Error::DimensionMismatch {
                    expected: config.head_dim,
                    actual: d,
                });
            }
        }
        let rotated = match schedule {
            Some(s) => crate::rope::apply_rope(keys, s)?,
            None => keys.clone(),
        };
        let scale =
            temperature_factor(keys.n(), config) / (config.head_dim as f64).sqrt();
        Ok(Self {
            schedule,
            rotated_keys: rotated.into_data(),
            key_positions: keys.positions().to_vec(),
            d: config.head_dim,
            scale,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn key_positions(&self) -> &[usize] {
        &self.key_positions
    }

    /// Number of keys visible to a query at `position`.
    pub fn visible(&self, position: usize) -> usize {
        self.key_positions.partition_point(|&p| p <= position)
    }

    pub fn rotated_key(&self, idx: usize) -> &[f64] {
        &self.rotated_keys[idx * self.d..(idx + 1) * self.d]
    }

    /// Unscaled rotated dot products `⟨R_i q, R_j k_j⟩` over visible keys.
    pub fn raw_scores(&self, query: &[f64], position: usize) -> Vec<f64> {
        let mut rq = query.to_vec();
        if let Some(s) = self.schedule {
            s.rotate_into(query, position, &mut rq);
        }
        (0..self.visible(position))
            .map(|j| dot(&rq, self.rotated_key(j)))
            .collect()
    }

    pub fn logits(&self, query: &[f64], position: usize) -> Vec<f64> {
        let mut z = self.raw_scores(query, position);
        for v in &mut z {
            *v *= self.scale;
        }
        z
    }

    pub fn row(&self, query: &[f64], position: usize) -> Vec<f64> {
        softmax(&self.logits(query, position))
    }
}

fn check_queries(queries: &LatentCloud, keys: &LatentCloud) -> Result<()> {
    if queries.d() != keys.d() {
        return Err(Error::DimensionMismatch {
            expected: keys.d(),
            actual: queries.d(),
        });
    }
    for &p in queries.positions() {
        if keys.positions().binary_search(&p).is_err() {
            return Err(Error::PositionMismatch(format!(
                "query position {p} has no key at the same position"
            )));
        }
    }
    Ok(())
}

pub fn attend(
    queries: &LatentCloud,
    keys: &LatentCloud,
    config: &AttentionConfig,
    schedule: &FrequencySchedule,
) -> Result<AttentionWeights> {
    check_queries(queries, keys)?;
    let kernel = AttentionKernel::new(keys, config, Some(schedule))?;
    let rows = queries
        .positions()
        .par_iter()
        .enumerate()
        .map(|(r, &pos)| kernel.row(queries.row(r), pos))
        .collect();
    Ok(AttentionWeights {
        query_positions: queries.positions().to_vec(),
        key_positions: keys.positions().to_vec(),
        rows,
    })
}

/// Grouped-query attention: query head `h` reads kv head `h / group_size`.
pub fn attend_grouped(
    queries: &[LatentCloud],
    keys: &[LatentCloud],
    config: &AttentionConfig,
    schedule: &FrequencySchedule,
) -> Result<Vec<AttentionWeights>> {
    config.validate()?;
    if queries.len() != config.n_query_heads || keys.len() != config.n_kv_heads {
        return Err(Error::InvalidParameter(format!(
            "expected {} query and {} kv heads, got {} and {}",
            config.n_query_heads,
            config.n_kv_heads,
            queries.len(),
            keys.len()
        )));
    }
    let kernels = keys
        .iter()
        .map(|k| AttentionKernel::new(k, config, Some(schedule)))
        .collect::<Result<Vec<_>>>()?;
    queries
        .iter()
        .enumerate()
        .map(|(h, q)| {
            let kv = config.kv_head_for(h);
            check_queries(q, &keys[kv])?;
            let kernel = &kernels[kv];
            Ok(AttentionWeights {
                query_positions: q.positions().to_vec(),
                key_positions: kernel.key_positions().to_vec(),
                rows: q
                    .positions()
                    .iter()
                    .enumerate()
                    .map(|(r, &pos)| kernel.row(q.row(r), pos))
                    .collect(),
            })
        })
        .collect()
}

/// Rows that carry more than one visible key: every query except one at the
/// sink position itself.
pub fn default_sink_rows(weights: &AttentionWeights) -> Range<usize> {
    let start = weights.query_positions.partition_point(|&p| p == 0);
    if start >= weights.rows.len() {
        0..weights.rows.len()
    } else {
        start..weights.rows.len()
    }
}

/// Mean weight on key position 0 over the selected rows (default: all rows
/// whose query sits after the sink).
pub fn sink_share(weights: &AttentionWeights, query_range: Option<Range<usize>>) -> Result<f64> {
    if weights.rows.is_empty() {
        return Err(Error::Empty("attention weights have no rows".into()));
    }
    let range = query_range.unwrap_or_else(|| default_sink_rows(weights));
    if range.is_empty() || range.end > weights.rows.len() {
        return Err(Error::Empty(format!(
            "query range {range:?} selects no rows of {}",
            weights.rows.len()
        )));
    }
    let count = range.len() as f64;
    Ok(range.map(|r| weights.weight(r, 0)).sum::<f64>() / count)
}
