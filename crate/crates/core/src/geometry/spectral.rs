use serde::{Deserialize, Serialize};

use crate::cloud::LatentCloud;
use crate::error::{Error, Result};
use crate::linalg::{gram_of_rows, SymMatrix};
use crate::rope::{apply_rope, FrequencySchedule};

/// Singular-value summary of an (uncentered) `n × d` cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// Non-increasing, length `d`.
    pub singular_values: Vec<f64>,
    /// σ₁, the first singular value (FSV).
    pub spectral_norm: f64,
    pub frobenius_norm: f64,
    /// `‖X‖_F² / ‖X‖₂²`.
    pub stable_rank: f64,
    /// `σ₁² / Σσᵢ²`, the share of variance about the origin on the top
    /// direction.
    pub fsv_variance_fraction: f64,
}

impl SpectralSummary {
    /// Summary from the Gram matrix `XᵀX`.
    pub fn from_gram(gram: &SymMatrix) -> Result<Self> {
        let frob_sq = gram.trace();
        if !frob_sq.is_finite() {
            return Err(Error::NonFinite);
        }
        if frob_sq == 0.0 {
            return Err(Error::ZeroMatrix);
        }
        let eig = gram.eigen();
        let singular_values: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
        let spectral_norm = singular_values[0];
        let spectral_sq = spectral_norm * spectral_norm;
        Ok(Self {
            stable_rank: frob_sq / spectral_sq,
            fsv_variance_fraction: spectral_sq / frob_sq,
            frobenius_norm: frob_sq.sqrt(),
            spectral_norm,
            singular_values,
        })
    }

    /// Count of singular values above `rel_tol · σ₁`.
    pub fn numeric_rank(&self, rel_tol: f64) -> usize {
        self.singular_values
            .iter()
            .filter(|&&s| s > rel_tol * self.spectral_norm)
            .count()
    }
}

pub fn spectral_summary(cloud: &LatentCloud) -> Result<SpectralSummary> {
    if cloud.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    SpectralSummary::from_gram(&gram_of_rows(cloud.data(), cloud.d()))
}

/// Spectra of a cloud before and after rotary application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RopeSpectra {
    pub pre: SpectralSummary,
    pub post: SpectralSummary,
}

impl RopeSpectra {
    pub fn fsv_ratio(&self) -> f64 {
        self.post.spectral_norm / self.pre.spectral_norm
    }

    pub fn stable_rank_ratio(&self) -> f64 {
        self.post.stable_rank / self.pre.stable_rank
    }

    /// `|‖R(X)‖_F − ‖X‖_F| / ‖X‖_F`.
    pub fn frobenius_deviation(&self) -> f64 {
        (self.post.frobenius_norm - self.pre.frobenius_norm).abs() / self.pre.frobenius_norm
    }
}

pub fn rope_spectra(cloud: &LatentCloud, schedule: &FrequencySchedule) -> Result<RopeSpectra> {
    let pre = spectral_summary(cloud)?;
    let post = spectral_summary(&apply_rope(cloud, schedule)?)?;
    Ok(RopeSpectra { pre, post })
}

/// `‖R(X)‖₂ / ‖X‖₂`.
pub fn fsv_ratio(cloud: &LatentCloud, schedule: &FrequencySchedule) -> Result<f64> {
    rope_spectra(cloud, schedule).map(|s| s.fsv_ratio())
}

/// `srank(R(X)) / srank(X)`.
pub fn stable_rank_ratio(cloud: &LatentCloud, schedule: &FrequencySchedule) -> Result<f64> {
    rope_spectra(cloud, schedule).map(|s| s.stable_rank_ratio())
}
