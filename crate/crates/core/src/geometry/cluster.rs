use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{dot, norm, LatentCloud};
use crate::error::{Error, Result};

/// Pair-subsampling policy for O(n²) statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSampling {
    pub seed: u64,
    /// Pairs drawn per statistic when sampling.
    pub budget: usize,
    /// Clouds with fewer rows than this are enumerated exactly.
    pub exact_below: usize,
}

impl PairSampling {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

impl Default for PairSampling {
    fn default() -> Self {
        Self {
            seed: 0,
            budget: 200_000,
            exact_below: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub mean_intra_key_cosine: f64,
    pub mean_intra_query_cosine: f64,
    pub mean_inter_cosine: f64,
    pub mean_intra_key_dot: f64,
    pub mean_intra_query_dot: f64,
    pub mean_inter_dot: f64,
    pub silhouette: f64,
    pub davies_bouldin: f64,
    /// Zero-norm rows left out of the cosine means.
    pub zero_keys_excluded: usize,
    pub zero_queries_excluded: usize,
    /// True when any statistic was estimated from sampled pairs.
    pub sampled: bool,
}

#[derive(Default)]
struct PairMeans {
    cos_sum: f64,
    cos_count: usize,
    dot_sum: f64,
    dot_count: usize,
}

impl PairMeans {
    fn add(&mut self, a: &[f64], na: f64, b: &[f64], nb: f64) {
        let p = dot(a, b);
        self.dot_sum += p;
        self.dot_count += 1;
        if na > 0.0 && nb > 0.0 {
            self.cos_sum += (p / (na * nb)).clamp(-1.0, 1.0);
            self.cos_count += 1;
        }
    }

    fn means(&self) -> (f64, f64) {
        let cos = if self.cos_count == 0 {
            0.0
        } else {
            self.cos_sum / self.cos_count as f64
        };
        (cos, self.dot_sum / self.dot_count.max(1) as f64)
    }
}

fn intra(cloud: &LatentCloud, norms: &[f64], sampling: &PairSampling, rng: &mut ChaCha8Rng) -> (PairMeans, bool) {
    let n = cloud.n();
    let mut m = PairMeans::default();
    if n < sampling.exact_below {
        for i in 0..n {
            for j in i + 1..n {
                m.add(cloud.row(i), norms[i], cloud.row(j), norms[j]);
            }
        }
        (m, false)
    } else {
        for _ in 0..sampling.budget {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            m.add(cloud.row(i), norms[i], cloud.row(j), norms[j]);
        }
        (m, true)
    }
}

fn inter(
    keys: &LatentCloud,
    kn: &[f64],
    queries: &LatentCloud,
    qn: &[f64],
    sampling: &PairSampling,
    rng: &mut ChaCha8Rng,
) -> (PairMeans, bool) {
    let mut m = PairMeans::default();
    if keys.n().max(queries.n()) < sampling.exact_below {
        for i in 0..keys.n() {
            for j in 0..queries.n() {
                m.add(keys.row(i), kn[i], queries.row(j), qn[j]);
            }
        }
        (m, false)
    } else {
        for _ in 0..sampling.budget {
            let i = rng.gen_range(0..keys.n());
            let j = rng.gen_range(0..queries.n());
            m.add(keys.row(i), kn[i], queries.row(j), qn[j]);
        }
        (m, true)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette over the points of two labelled clusters, Euclidean.
fn silhouette(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let score = |own: &[&[f64]], other: &[&[f64]], idx: usize| -> f64 {
        if own.len() < 2 {
            return 0.0;
        }
        let x = own[idx];
        let a_mean = own
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != idx)
            .map(|(_, y)| distance(x, y))
            .sum::<f64>()
            / (own.len() - 1) as f64;
        let b_mean = other.iter().map(|y| distance(x, y)).sum::<f64>() / other.len() as f64;
        let denom = a_mean.max(b_mean);
        if denom == 0.0 {
            0.0
        } else {
            (b_mean - a_mean) / denom
        }
    };
    let total: f64 = (0..a.len()).map(|i| score(a, b, i)).sum::<f64>()
        + (0..b.len()).map(|i| score(b, a, i)).sum::<f64>();
    total / (a.len() + b.len()) as f64
}

fn centroid(cloud: &LatentCloud) -> Vec<f64> {
    let mut c = vec![0.0; cloud.d()];
    for row in cloud.rows() {
        for (s, x) in c.iter_mut().zip(row) {
            *s += x;
        }
    }
    for s in &mut c {
        *s /= cloud.n() as f64;
    }
    c
}

/// Two-cluster Davies–Bouldin index. Coincident centroids give 0, the
/// scikit-learn convention.
fn davies_bouldin(keys: &LatentCloud, queries: &LatentCloud) -> f64 {
    let (ck, cq) = (centroid(keys), centroid(queries));
    let spread = |cloud: &LatentCloud, c: &[f64]| {
        cloud.rows().map(|r| distance(r, c)).sum::<f64>() / cloud.n() as f64
    };
    let sep = distance(&ck, &cq);
    if sep == 0.0 {
        return 0.0;
    }
    (spread(keys, &ck) + spread(queries, &cq)) / sep
}

fn subsample<'a>(cloud: &'a LatentCloud, size: usize, rng: &mut ChaCha8Rng) -> Vec<&'a [f64]> {
    if cloud.n() <= size {
        return cloud.rows().collect();
    }
    let mut picks = index::sample(rng, cloud.n(), size).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| cloud.row(i)).collect()
}

/// Alignment and separation statistics of a key cloud against a query cloud.
pub fn cluster_stats(
    keys: &LatentCloud,
    queries: &LatentCloud,
    sampling: &PairSampling,
) -> Result<ClusterStats> {
    if keys.d() != queries.d() {
        return Err(Error::DimensionMismatch {
            expected: keys.d(),
            actual: queries.d(),
        });
    }
    if keys.n() < 2 || queries.n() < 2 {
        return Err(Error::InvalidCloud("each cloud needs at least two rows".into()));
    }
    let kn: Vec<f64> = keys.rows().map(norm).collect();
    let qn: Vec<f64> = queries.rows().map(norm).collect();
    let zero_keys = kn.iter().filter(|&&x| x == 0.0).count();
    let zero_queries = qn.iter().filter(|&&x| x == 0.0).count();
    if zero_keys == keys.n() || zero_queries == queries.n() {
        return Err(Error::ZeroMatrix);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let (ik, s1) = intra(keys, &kn, sampling, &mut rng);
    let (iq, s2) = intra(queries, &qn, sampling, &mut rng);
    let (x, s3) = inter(keys, &kn, queries, &qn, sampling, &mut rng);

    let exact_sil = keys.n().max(queries.n()) < sampling.exact_below;
    let sil = if exact_sil {
        let a: Vec<&[f64]> = keys.rows().collect();
        let b: Vec<&[f64]> = queries.rows().collect();
        silhouette(&a, &b)
    } else {
        let per_cluster = ((sampling.budget as f64).sqrt() as usize).max(2);
        let a = subsample(keys, per_cluster, &mut rng);
        let b = subsample(queries, per_cluster, &mut rng);
        silhouette(&a, &b)
    };

    let (ck, dk) = ik.means();
    let (cq, dq) = iq.means();
    let (cx, dx) = x.means();
    Ok(ClusterStats {
        mean_intra_key_cosine: ck,
        mean_intra_query_cosine: cq,
        mean_inter_cosine: cx,
        mean_intra_key_dot: dk,
        mean_intra_query_dot: dq,
        mean_inter_dot: dx,
        silhouette: sil,
        davies_bouldin: davies_bouldin(keys, queries),
        zero_keys_excluded: zero_keys,
        zero_queries_excluded: zero_queries,
        sampled: s1 || s2 || s3 || !exact_sil,
    })
}
