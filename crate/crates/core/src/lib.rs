//! Rotary positional embedding variants and the geometry of rotated
//! key/query clouds.
//!
//! - [`rope`]: frequency schedules (Standard, HighFrequency, Partial,
//!   RoPE-ID) and their application to clouds.
//! - [`attention`]: reference causal attention with grouped-query sharing and
//!   length-dependent temperature.
//! - [`geometry`]: spectral summaries, cluster statistics, PCA snapshots and
//!   sink diagnostics.
//! - [`theory`]: rank-1 convergence checks and the synthetic variant
//!   comparison.
//! - [`io`]: the `.rkq` dump format and its manifest.
//!
//! All arithmetic is f64; f32 appears only in dump files.

pub mod attention;
pub mod cloud;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod rope;
pub mod theory;

pub use cloud::{CloudMeta, LatentCloud, Role, RopeStage};
pub use error::{Error, Result};
pub use rope::{apply_rope, relative_dot, BlockRotation, FrequencySchedule, RopeVariant};
