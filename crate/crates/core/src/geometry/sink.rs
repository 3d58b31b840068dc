use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{softmax, AttentionConfig, AttentionKernel};
use crate::cloud::{dot, norm, LatentCloud};
use crate::error::{Error, Result};
use crate::rope::FrequencySchedule;

/// Upper bound on parallel row blocks per window; fixes the reduction order.
const MAX_BLOCKS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkAtLength {
    pub length: usize,
    /// Mean weight on position 0 over queries after the sink.
    pub sink_share: f64,
    /// Largest mean weight received by any non-sink key.
    pub max_other_share: f64,
    /// Mean over queries of `max_k ⟨q, k⟩` (unscaled, rotated).
    pub max_qk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkReport {
    pub key_norms: Vec<f64>,
    /// Mean rotated dot product of each key against the queries after it.
    /// The final key has no later query and is omitted.
    pub key_scores: Vec<f64>,
    /// `key_scores` divided by their maximum (or by the largest magnitude
    /// when no score is positive).
    pub normalized_key_scores: Vec<f64>,
    pub by_length: Vec<SinkAtLength>,
}

impl SinkReport {
    pub fn sink_share_by_length(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.by_length.iter().map(|s| (s.length, s.sink_share))
    }

    pub fn max_qk_by_length(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.by_length.iter().map(|s| (s.length, s.max_qk))
    }
}

fn rotated(cloud: &LatentCloud, schedule: Option<&FrequencySchedule>) -> Result<LatentCloud> {
    match schedule {
        Some(s) => crate::rope::apply_rope(cloud, s),
        None => Ok(cloud.clone()),
    }
}

fn key_scores(keys: &LatentCloud, queries: &LatentCloud) -> Vec<f64> {
    let n = keys.n();
    let d = keys.d();
    let mut suffix = vec![0.0; d];
    let mut scores = vec![0.0; n.saturating_sub(1)];
    for j in (0..n.saturating_sub(1)).rev() {
        for (s, q) in suffix.iter_mut().zip(queries.row(j + 1)) {
            *s += q;
        }
        scores[j] = dot(&suffix, keys.row(j)) / (n - 1 - j) as f64;
    }
    scores
}

fn normalize(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom = if max > 0.0 {
        max
    } else {
        scores.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    };
    if denom == 0.0 {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| s / denom).collect()
}

struct BlockTotals {
    sink: f64,
    sink_rows: usize,
    per_key: Vec<f64>,
    max_qk: f64,
}

fn window_stats(
    keys: &LatentCloud,
    queries: &LatentCloud,
    schedule: Option<&FrequencySchedule>,
    config: &AttentionConfig,
    length: usize,
) -> Result<SinkAtLength> {
    let keys = keys.truncate(length)?;
    let queries = queries.truncate(length)?;
    let kernel = AttentionKernel::new(&keys, config, schedule)?;
    let positions = queries.positions();
    // Rows after the sink; a one-token window only has the sink row.
    let first = if length > 1 { positions.partition_point(|&p| p == 0) } else { 0 };

    let block = length.div_ceil(MAX_BLOCKS).max(1);
    let blocks: Vec<BlockTotals> = (0..length.div_ceil(block))
        .into_par_iter()
        .map(|b| {
            let mut t = BlockTotals {
                sink: 0.0,
                sink_rows: 0,
                per_key: vec![0.0; length],
                max_qk: 0.0,
            };
            for r in b * block..((b + 1) * block).min(length) {
                let raw = kernel.raw_scores(queries.row(r), positions[r]);
                t.max_qk += raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if r < first {
                    continue;
                }
                let scaled: Vec<f64> = raw.iter().map(|z| z * kernel.scale()).collect();
                let w = softmax(&scaled);
                t.sink += w[0];
                t.sink_rows += 1;
                for (acc, x) in t.per_key.iter_mut().zip(&w) {
                    *acc += x;
                }
            }
            t
        })
        .collect();

    let mut sink = 0.0;
    let mut sink_rows = 0;
    let mut max_qk = 0.0;
    let mut per_key = vec![0.0; length];
    for t in &blocks {
        sink += t.sink;
        sink_rows += t.sink_rows;
        max_qk += t.max_qk;
        for (a, b) in per_key.iter_mut().zip(&t.per_key) {
            *a += b;
        }
    }
    let key_positions = keys.positions();
    let max_other_share = (1..length)
        .map(|j| {
            let seen_by = length - positions.partition_point(|&p| p < key_positions[j]).max(first);
            per_key[j] / seen_by.max(1) as f64
        })
        .fold(0.0, f64::max);
    Ok(SinkAtLength {
        length,
        sink_share: sink / sink_rows.max(1) as f64,
        max_other_share,
        max_qk: max_qk / length as f64,
    })
}

/// Key norms, per-key alignment against later queries, and sink attention
/// share / max QK product for each window length in `lengths`.
///
/// `schedule = None` analyses the latents as given (already rotated).
pub fn sink_report(
    keys: &LatentCloud,
    queries: &LatentCloud,
    schedule: Option<&FrequencySchedule>,
    config: &AttentionConfig,
    lengths: &[usize],
) -> Result<SinkReport> {
    if keys.d() != queries.d() {
        return Err(Error::DimensionMismatch {
            expected: keys.d(),
            actual: queries.d(),
        });
    }
    if keys.positions() != queries.positions() {
        return Err(Error::PositionMismatch(
            "keys and queries must cover the same positions".into(),
        ));
    }
    if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > keys.n()) {
        return Err(Error::InvalidParameter(format!(
            "window length {bad} outside 1..={}",
            keys.n()
        )));
    }
    let rk = rotated(keys, schedule)?;
    let rq = rotated(queries, schedule)?;
    let scores = key_scores(&rk, &rq);
    let by_length = lengths
        .iter()
        .map(|&l| window_stats(keys, queries, schedule, config, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(SinkReport {
        key_norms: keys.rows().map(norm).collect(),
        normalized_key_scores: normalize(&scores),
        key_scores: scores,
        by_length,
    })
}
