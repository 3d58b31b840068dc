//! Deterministic synthetic key/query clouds with known geometry.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cloud::{CloudMeta, LatentCloud, Role, RopeStage};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureParams {
    pub n: usize,
    pub d: usize,
    /// Distance of each cluster centre from the origin.
    pub separation: f64,
    /// Per-coordinate Gaussian noise scale.
    pub noise: f64,
    pub seed: u64,
}

fn meta(role: Role) -> CloudMeta {
    CloudMeta {
        model: "fixture".into(),
        layer: 0,
        head: 0,
        role,
        stage: RopeStage::PreRope,
    }
}

fn cluster(p: &FixtureParams, sign: f64, rng: &mut ChaCha8Rng, role: Role) -> Result<LatentCloud> {
    // Centre direction spreads evenly over every plane.
    let centre = sign * p.separation / (p.d as f64).sqrt();
    let data = (0..p.n * p.d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            centre + p.noise * z
        })
        .collect();
    LatentCloud::new(data, p.d, meta(role))
}

/// Keys around `+s·μ`, queries around `−s·μ`, with `μ = 1/√d`.
pub fn antipodal_clusters(p: &FixtureParams) -> Result<(LatentCloud, LatentCloud)> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let keys = cluster(p, 1.0, &mut rng, Role::Key)?;
    let queries = cluster(p, -1.0, &mut rng, Role::Query)?;
    Ok((keys, queries))
}

/// Keys and queries drawn from the same centred isotropic Gaussian.
pub fn overlapping_gaussians(p: &FixtureParams) -> Result<(LatentCloud, LatentCloud)> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let keys = cluster(&FixtureParams { separation: 0.0, ..*p }, 1.0, &mut rng, Role::Key)?;
    let queries = cluster(&FixtureParams { separation: 0.0, ..*p }, 1.0, &mut rng, Role::Query)?;
    Ok((keys, queries))
}

/// Antipodal clusters whose position-0 key sits exactly at the origin: the
/// only key with a non-negative logit against the query cluster.
pub fn origin_sink(p: &FixtureParams) -> Result<(LatentCloud, LatentCloud)> {
    let (keys, queries) = antipodal_clusters(p)?;
    let mut data = keys.into_data();
    data[..p.d].iter_mut().for_each(|x| *x = 0.0);
    Ok((LatentCloud::new(data, p.d, meta(Role::Key))?, queries))
}
