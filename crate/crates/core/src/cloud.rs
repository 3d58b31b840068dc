//! Key/query point clouds: an `n × d` matrix of latent vectors with the token
//! position of each row and a provenance record.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Key,
    Query,
}

/// Whether a cloud was captured before or after rotary application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RopeStage {
    PreRope,
    PostRope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudMeta {
    pub model: String,
    pub layer: u32,
    pub head: u32,
    pub role: Role,
    pub stage: RopeStage,
}

impl Default for CloudMeta {
    fn default() -> Self {
        Self {
            model: String::new(),
            layer: 0,
            head: 0,
            role: Role::Key,
            stage: RopeStage::PreRope,
        }
    }
}

/// Row-major `n × d` matrix of f64 latents. Row `i` sits at token position
/// `positions[i]`; positions are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCloud {
    data: Vec<f64>,
    n: usize,
    d: usize,
    positions: Vec<usize>,
    pub meta: CloudMeta,
}

impl LatentCloud {
    /// Builds a cloud with default positions `0..n`.
    pub fn new(data: Vec<f64>, d: usize, meta: CloudMeta) -> Result<Self> {
        if d == 0 || d % 2 != 0 {
            return Err(Error::OddHeadDim(d));
        }
        if data.len() % d != 0 {
            return Err(Error::InvalidCloud(format!(
                "data length {} is not a multiple of d = {d}",
                data.len()
            )));
        }
        let n = data.len() / d;
        Self::with_positions(data, d, (0..n).collect(), meta)
    }

    pub fn with_positions(
        data: Vec<f64>,
        d: usize,
        positions: Vec<usize>,
        meta: CloudMeta,
    ) -> Result<Self> {
        if d == 0 || d % 2 != 0 {
            return Err(Error::OddHeadDim(d));
        }
        if data.is_empty() || data.len() % d != 0 {
            return Err(Error::InvalidCloud(format!(
                "data length {} is not a positive multiple of d = {d}",
                data.len()
            )));
        }
        let n = data.len() / d;
        if positions.len() != n {
            return Err(Error::PositionMismatch(format!(
                "{} positions for {n} rows",
                positions.len()
            )));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::PositionMismatch(
                "positions must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            data,
            n,
            d,
            positions,
            meta,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], meta: CloudMeta) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidCloud("ragged rows".into()));
        }
        Self::new(rows.concat(), d, meta)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    /// First `len` rows (a window starting at the sequence head).
    pub fn truncate(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.n {
            return Err(Error::InvalidCloud(format!(
                "window length {len} outside 1..={}",
                self.n
            )));
        }
        Ok(Self {
            data: self.data[..len * self.d].to_vec(),
            n: len,
            d: self.d,
            positions: self.positions[..len].to_vec(),
            meta: self.meta.clone(),
        })
    }

    /// Same rows, with every position replaced.
    pub fn reposition(&self, positions: Vec<usize>) -> Result<Self> {
        Self::with_positions(self.data.clone(), self.d, positions, self.meta.clone())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn from_parts(
        data: Vec<f64>,
        d: usize,
        positions: Vec<usize>,
        meta: CloudMeta,
    ) -> Self {
        let n = positions.len();
        debug_assert_eq!(data.len(), n * d);
        Self {
            data,
            n,
            d,
            positions,
            meta,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_dimension() {
        let err = LatentCloud::new(vec![0.0; 6], 3, CloudMeta::default()).unwrap_err();
        assert_eq!(err, Error::OddHeadDim(3));
    }

    #[test]
    fn rejects_non_increasing_positions() {
        let err =
            LatentCloud::with_positions(vec![0.0; 4], 2, vec![3, 3], CloudMeta::default())
                .unwrap_err();
        assert!(matches!(err, Error::PositionMismatch(_)));
    }

    #[test]
    fn rejects_empty() {
        assert!(LatentCloud::new(vec![], 2, CloudMeta::default()).is_err());
    }

    #[test]
    fn truncate_keeps_prefix() {
        let c = LatentCloud::new((0..8).map(f64::from).collect(), 2, CloudMeta::default())
            .unwrap();
        let t = c.truncate(2).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(t.positions(), &[0, 1]);
        assert!(c.truncate(5).is_err());
    }
}
