//! Clustering, spectral, projection and sink statistics over latent clouds.

mod cluster;
mod pca;
mod sink;
mod spectral;

pub use cluster::{cluster_stats, ClusterStats, PairSampling};
pub use pca::{pca_snapshot, PcaSnapshot};
pub use sink::{sink_report, SinkAtLength, SinkReport};
pub use spectral::{
    fsv_ratio, rope_spectra, spectral_summary, stable_rank_ratio, RopeSpectra, SpectralSummary,
};
