//! Rotary frequency schedules and their application to latent clouds.
//!
//! Planes use the interleaved layout: plane `k` (0-based) rotates
//! coordinates `(2k, 2k + 1)`. The first `rotated_planes` planes rotate; the
//! remaining planes are the identity. Frequencies are stored fastest first.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cloud::{LatentCloud, RopeStage};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_WAVELENGTH: u64 = 32;
pub const DEFAULT_CYCLES_PER_TRAIN_LEN: u64 = 2;
pub const DEFAULT_ROPE_ID_FRACTION: f64 = 0.5;
pub const DEFAULT_HALF_ROPE_THETA: f64 = 500_000.0;

/// Parameters of one rotary variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RopeVariant {
    /// `θ_k = base^{-2(k-1)/d}` on every plane.
    Standard { base_theta: f64 },
    /// Log-uniform from frequency 1 down to exactly one cycle per `train_len`.
    HighFrequency { train_len: u64 },
    /// Standard schedule spread over the leading `fraction` of planes; the
    /// rest stay unrotated.
    Partial { base_theta: f64, fraction: f64 },
    /// High frequencies (one cycle per `max_wavelength_tokens` down to
    /// `cycles_per_train_len` cycles per `train_len`) on the leading
    /// `fraction` of planes.
    RopeId {
        train_len: u64,
        max_wavelength_tokens: u64,
        cycles_per_train_len: u64,
        fraction: f64,
    },
}

impl RopeVariant {
    pub fn standard(base_theta: f64) -> Self {
        Self::Standard { base_theta }
    }

    pub fn half_rope() -> Self {
        Self::Partial {
            base_theta: DEFAULT_HALF_ROPE_THETA,
            fraction: 0.5,
        }
    }

    pub fn rope_id(train_len: u64) -> Self {
        Self::RopeId {
            train_len,
            max_wavelength_tokens: DEFAULT_MAX_WAVELENGTH,
            cycles_per_train_len: DEFAULT_CYCLES_PER_TRAIN_LEN,
            fraction: DEFAULT_ROPE_ID_FRACTION,
        }
    }

    /// Short stable label used in reports and CSV columns.
    pub fn label(&self) -> &'static str {
        match self {
            Self::Standard { .. } => "standard",
            Self::HighFrequency { .. } => "high-frequency",
            Self::Partial { .. } => "partial",
            Self::RopeId { .. } => "rope-id",
        }
    }
}

/// Base θ at which a Standard schedule's `1/θ` frequency completes one
/// cycle in `train_len` tokens (≈ 651.9 for 4096). The HighFrequency variant
/// instead pins its slowest plane to exactly `2π / train_len`.
pub fn high_frequency_equivalent_base(train_len: u64) -> f64 {
    train_len as f64 / (2.0 * PI)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySchedule {
    frequencies: Vec<f64>,
    rotated_planes: usize,
    head_dim: usize,
    variant: RopeVariant,
}

fn log_interp(fastest: f64, slowest: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![fastest];
    }
    let (a, b) = (fastest.ln(), slowest.ln());
    (0..count)
        .map(|k| {
            let t = k as f64 / (count - 1) as f64;
            (a + t * (b - a)).exp()
        })
        .collect()
}

fn check_fraction(fraction: f64, planes: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let rotated = (fraction * planes as f64).round() as usize;
    if rotated < 1 || rotated > planes {
        return Err(Error::RotatedPlanes { rotated, planes });
    }
    Ok(rotated)
}

fn check_theta(base_theta: f64) -> Result<()> {
    if !(base_theta.is_finite() && base_theta >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "base theta must be finite and >= 1, got {base_theta}"
        )));
    }
    Ok(())
}

fn check_train_len(train_len: u64) -> Result<()> {
    if train_len == 0 {
        return Err(Error::InvalidParameter("training length must be positive".into()));
    }
    Ok(())
}

impl FrequencySchedule {
    pub fn build(variant: RopeVariant, head_dim: usize) -> Result<Self> {
        if head_dim < 2 || head_dim % 2 != 0 {
            return Err(Error::OddHeadDim(head_dim));
        }
        let planes = head_dim / 2;
        let (mut frequencies, rotated_planes) = match variant {
            RopeVariant::Standard { base_theta } => {
                check_theta(base_theta)?;
                let f = (0..planes)
                    .map(|k| base_theta.powf(-2.0 * k as f64 / head_dim as f64))
                    .collect();
                (f, planes)
            }
            RopeVariant::HighFrequency { train_len } => {
                check_train_len(train_len)?;
                let slowest = 2.0 * PI / train_len as f64;
                if slowest > 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "training length {train_len} is shorter than one unit-frequency cycle"
                    )));
                }
                (log_interp(1.0, slowest, planes), planes)
            }
            RopeVariant::Partial {
                base_theta,
                fraction,
            } => {
                check_theta(base_theta)?;
                let rotated = check_fraction(fraction, planes)?;
                let sub_dim = 2 * rotated;
                let f = (0..rotated)
                    .map(|k| base_theta.powf(-2.0 * k as f64 / sub_dim as f64))
                    .collect();
                (f, rotated)
            }
            RopeVariant::RopeId {
                train_len,
                max_wavelength_tokens,
                cycles_per_train_len,
                fraction,
            } => {
                check_train_len(train_len)?;
                if max_wavelength_tokens == 0 || cycles_per_train_len == 0 {
                    return Err(Error::InvalidParameter(
                        "wavelength and cycle counts must be positive".into(),
                    ));
                }
                let rotated = check_fraction(fraction, planes)?;
                let fastest = 2.0 * PI / max_wavelength_tokens as f64;
                let slowest = cycles_per_train_len as f64 * 2.0 * PI / train_len as f64;
                if slowest > fastest {
                    return Err(Error::InvalidParameter(format!(
                        "{cycles_per_train_len} cycles per {train_len} tokens is faster than \
                         one cycle per {max_wavelength_tokens} tokens"
                    )));
                }
                (log_interp(fastest, slowest, rotated), rotated)
            }
        };
        // Identity planes repeat the slowest rotated frequency so the list
        // stays positive and non-increasing; the value is never applied.
        let tail = *frequencies.last().expect("at least one rotated plane");
        frequencies.resize(planes, tail);
        Ok(Self {
            frequencies,
            rotated_planes,
            head_dim,
            variant,
        })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn rotated_frequencies(&self) -> &[f64] {
        &self.frequencies[..self.rotated_planes]
    }

    pub fn rotated_planes(&self) -> usize {
        self.rotated_planes
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn variant(&self) -> &RopeVariant {
        &self.variant
    }

    /// Wavelength in tokens (`2π/θ_k`) of each rotated plane.
    pub fn wavelengths(&self) -> Vec<f64> {
        self.rotated_frequencies()
            .iter()
            .map(|f| 2.0 * PI / f)
            .collect()
    }

    pub fn rotation_at(&self, position: usize) -> BlockRotation {
        BlockRotation {
            head_dim: self.head_dim,
            planes: self
                .rotated_frequencies()
                .iter()
                .map(|f| (position as f64 * f).sin_cos())
                .map(|(s, c)| (c, s))
                .collect(),
        }
    }

    /// Rotates `row` to `position`, writing into `out`. Unrotated planes are
    /// copied unchanged.
    pub fn rotate_into(&self, row: &[f64], position: usize, out: &mut [f64]) {
        debug_assert_eq!(row.len(), self.head_dim);
        let split = 2 * self.rotated_planes;
        let m = position as f64;
        for (k, f) in self.rotated_frequencies().iter().enumerate() {
            let (s, c) = (m * f).sin_cos();
            let (x, y) = (row[2 * k], row[2 * k + 1]);
            out[2 * k] = c * x - s * y;
            out[2 * k + 1] = s * x + c * y;
        }
        out[split..].copy_from_slice(&row[split..]);
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.head_dim {
            return Err(Error::DimensionMismatch {
                expected: self.head_dim,
                actual: d,
            });
        }
        Ok(())
    }
}

/// Block-diagonal `d × d` rotation: a 2×2 rotation on each rotated plane,
/// identity elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRotation {
    head_dim: usize,
    /// `(cos, sin)` per rotated plane.
    planes: Vec<(f64, f64)>,
}

impl BlockRotation {
    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn planes(&self) -> &[(f64, f64)] {
        &self.planes
    }

    /// Dense row-major matrix.
    pub fn to_dense(&self) -> Vec<f64> {
        let d = self.head_dim;
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        for (k, &(c, s)) in self.planes.iter().enumerate() {
            let (a, b) = (2 * k, 2 * k + 1);
            m[a * d + a] = c;
            m[a * d + b] = -s;
            m[b * d + a] = s;
            m[b * d + b] = c;
        }
        m
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for (k, &(c, s)) in self.planes.iter().enumerate() {
            let (a, b) = (x[2 * k], x[2 * k + 1]);
            out[2 * k] = c * a - s * b;
            out[2 * k + 1] = s * a + c * b;
        }
        out
    }
}

/// Rotates every row of `cloud` to its own position.
pub fn apply_rope(cloud: &LatentCloud, schedule: &FrequencySchedule) -> Result<LatentCloud> {
    schedule.check_dim(cloud.d())?;
    let d = cloud.d();
    let mut out = vec![0.0; cloud.data().len()];
    for ((row, dst), &pos) in cloud
        .rows()
        .zip(out.chunks_exact_mut(d))
        .zip(cloud.positions())
    {
        schedule.rotate_into(row, pos, dst);
    }
    let mut meta = cloud.meta.clone();
    meta.stage = RopeStage::PostRope;
    Ok(LatentCloud::from_parts(
        out,
        d,
        cloud.positions().to_vec(),
        meta,
    ))
}

/// `⟨R_i q, R_j k⟩`, evaluated through the relative rotation `R_{j-i}` so
/// only the displacement between the two positions enters.
pub fn relative_dot(
    q: &[f64],
    k: &[f64],
    i: usize,
    j: usize,
    schedule: &FrequencySchedule,
) -> Result<f64> {
    schedule.check_dim(q.len())?;
    schedule.check_dim(k.len())?;
    let offset = j as f64 - i as f64;
    let split = 2 * schedule.rotated_planes;
    let mut acc = 0.0;
    for (p, f) in schedule.rotated_frequencies().iter().enumerate() {
        let (s, c) = (offset * f).sin_cos();
        let (k1, k2) = (k[2 * p], k[2 * p + 1]);
        acc += q[2 * p] * (c * k1 - s * k2) + q[2 * p + 1] * (s * k1 + c * k2);
    }
    acc += q[split..]
        .iter()
        .zip(&k[split..])
        .map(|(a, b)| a * b)
        .sum::<f64>();
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::CloudMeta;
    use proptest::prelude::*;

    fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                for j in 0..d {
                    c[i * d + j] += a[i * d + k] * b[k * d + j];
                }
            }
        }
        c
    }

    fn matvec(m: &[f64], x: &[f64]) -> Vec<f64> {
        let d = x.len();
        (0..d)
            .map(|i| (0..d).map(|j| m[i * d + j] * x[j]).sum())
            .collect()
    }

    #[test]
    fn standard_d4() {
        let s = FrequencySchedule::build(RopeVariant::standard(10_000.0), 4).unwrap();
        assert_eq!(s.frequencies(), &[1.0, 0.01]);
        assert_eq!(s.rotated_planes(), 2);
    }

    #[test]
    fn standard_d2_single_plane() {
        let s = FrequencySchedule::build(RopeVariant::standard(10_000.0), 2).unwrap();
        assert_eq!(s.frequencies(), &[1.0]);
    }

    #[test]
    fn rope_id_endpoints() {
        let s = FrequencySchedule::build(RopeVariant::rope_id(4096), 8).unwrap();
        assert_eq!(s.rotated_planes(), 2);
        let f = s.rotated_frequencies();
        assert!((f[0] - 2.0 * PI / 32.0).abs() < 1e-15);
        assert!((f[1] - 4.0 * PI / 4096.0).abs() < 1e-15);
        let w = s.wavelengths();
        assert!((w[0] - 32.0).abs() < 1e-9 && (w[1] - 2048.0).abs() < 1e-9);
    }

    #[test]
    fn rope_id_slowest_plane_completes_cycles() {
        for d in [8, 64, 128, 256] {
            let s = FrequencySchedule::build(RopeVariant::rope_id(4096), d).unwrap();
            let slowest = *s.rotated_frequencies().last().unwrap();
            assert!((4096.0 * slowest - 2.0 * 2.0 * PI).abs() < 1e-9);
        }
    }

    #[test]
    fn high_frequency_slowest_is_one_cycle() {
        let s = FrequencySchedule::build(RopeVariant::HighFrequency { train_len: 4096 }, 128)
            .unwrap();
        assert_eq!(s.rotated_planes(), 64);
        assert_eq!(s.frequencies()[0], 1.0);
        assert!((s.frequencies()[63] - 2.0 * PI / 4096.0).abs() < 1e-15);
        assert!((high_frequency_equivalent_base(4096) - 651.898_646_923_5).abs() < 1e-6);
    }

    #[test]
    fn partial_spreads_over_rotated_subdimension() {
        let s = FrequencySchedule::build(
            RopeVariant::Partial {
                base_theta: 10_000.0,
                fraction: 0.5,
            },
            8,
        )
        .unwrap();
        assert_eq!(s.rotated_planes(), 2);
        assert_eq!(&s.frequencies()[..2], &[1.0, 0.01]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert_eq!(
            FrequencySchedule::build(RopeVariant::standard(10_000.0), 7).unwrap_err(),
            Error::OddHeadDim(7)
        );
        assert!(matches!(
            FrequencySchedule::build(
                RopeVariant::Partial {
                    base_theta: 1e4,
                    fraction: 0.1
                },
                8
            ),
            Err(Error::RotatedPlanes { .. })
        ));
        assert!(FrequencySchedule::build(RopeVariant::rope_id(0), 8).is_err());
        assert!(FrequencySchedule::build(RopeVariant::HighFrequency { train_len: 0 }, 8).is_err());
        assert!(FrequencySchedule::build(
            RopeVariant::Partial {
                base_theta: 1e4,
                fraction: 0.0
            },
            8
        )
        .is_err());
    }

    #[test]
    fn rotation_at_zero_is_identity() {
        let s = FrequencySchedule::build(RopeVariant::standard(10_000.0), 6).unwrap();
        let m = s.rotation_at(0).to_dense();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(m[i * 6 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn quarter_turn() {
        // No variant yields θ = π/2 on a single plane; build the block directly.
        let r = BlockRotation {
            head_dim: 2,
            planes: vec![((PI / 2.0).cos(), (PI / 2.0).sin())],
        };
        let m = r.to_dense();
        let want = [0.0, -1.0, 1.0, 0.0];
        for (a, b) in m.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn composition_matches_explicit_product() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let s = FrequencySchedule::build(RopeVariant::standard(10_000.0), 8).unwrap();
        for _ in 0..100 {
            let a = rng.gen_range(0..100_000usize);
            let b = rng.gen_range(0..100_000usize);
            let lhs = matmul(&s.rotation_at(a).to_dense(), &s.rotation_at(b).to_dense(), 8);
            let rhs = s.rotation_at(a + b).to_dense();
            for (x, y) in lhs.iter().zip(&rhs) {
                assert!((x - y).abs() < 1e-10, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn apply_positions_zero_is_exact() {
        let s = FrequencySchedule::build(RopeVariant::standard(10_000.0), 4).unwrap();
        let c = LatentCloud::with_positions(
            vec![0.3, -1.2, 5.0, 2.5],
            4,
            vec![0],
            CloudMeta::default(),
        )
        .unwrap();
        let r = apply_rope(&c, &s).unwrap();
        assert_eq!(r.data(), c.data());
        assert_eq!(r.meta.stage, RopeStage::PostRope);
    }

    #[test]
    fn apply_rejects_dimension_mismatch() {
        let s = FrequencySchedule::build(RopeVariant::standard(10_000.0), 8).unwrap();
        let c = LatentCloud::new(vec![1.0; 4], 4, CloudMeta::default()).unwrap();
        assert!(matches!(
            apply_rope(&c, &s),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn relative_dot_examples() {
        let s = FrequencySchedule::build(RopeVariant::standard(10_000.0), 8).unwrap();
        let q = [0.2, -0.7, 1.1, 0.4, -0.3, 0.9, 0.5, -1.5];
        let k = [1.3, 0.1, -0.6, 0.8, 0.2, -0.4, 1.0, 0.7];
        let plain: f64 = q.iter().zip(&k).map(|(a, b)| a * b).sum();
        assert!((relative_dot(&q, &k, 5, 5, &s).unwrap() - plain).abs() < 1e-10);
        let sq: f64 = q.iter().map(|a| a * a).sum();
        assert!((relative_dot(&q, &q, 9, 9, &s).unwrap() - sq).abs() < 1e-10);

        // Explicit R^T_7 R_3 = R_{-4} route.
        let r7 = s.rotation_at(7).to_dense();
        let r3 = s.rotation_at(3).to_dense();
        let direct: f64 = matvec(&r7, &q)
            .iter()
            .zip(matvec(&r3, &k))
            .map(|(a, b)| a * b)
            .sum();
        assert!((relative_dot(&q, &k, 7, 3, &s).unwrap() - direct).abs() < 1e-8);
    }

    fn variant_strategy() -> impl Strategy<Value = RopeVariant> {
        prop_oneof![
            (1.5f64..1e6).prop_map(RopeVariant::standard),
            (64u64..100_000).prop_map(|l| RopeVariant::HighFrequency { train_len: l }),
            (1.5f64..1e6, 0.3f64..=1.0).prop_map(|(t, f)| RopeVariant::Partial {
                base_theta: t,
                fraction: f
            }),
            (2048u64..100_000, 0.3f64..=1.0).prop_map(|(l, f)| RopeVariant::RopeId {
                train_len: l,
                max_wavelength_tokens: 32,
                cycles_per_train_len: 2,
                fraction: f
            }),
        ]
    }

    proptest! {
        #[test]
        fn schedule_invariants(variant in variant_strategy(), half in 1usize..64) {
            let d = 2 * half;
            if let Ok(s) = FrequencySchedule::build(variant, d) {
                prop_assert_eq!(s.frequencies().len(), d / 2);
                prop_assert!(s.frequencies().iter().all(|&f| f > 0.0));
                prop_assert!(s.frequencies().windows(2).all(|w| w[0] >= w[1]));
                prop_assert!(s.rotated_planes() >= 1 && s.rotated_planes() <= d / 2);
            }
        }

        #[test]
        fn norm_and_inertness(
            variant in variant_strategy(),
            row in proptest::collection::vec(-10.0f64..10.0, 16),
            pos in 0usize..1_000_000,
        ) {
            let s = FrequencySchedule::build(variant, 16).unwrap();
            let mut out = vec![0.0; 16];
            s.rotate_into(&row, pos, &mut out);
            let n0: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let n1: f64 = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n0 - n1).abs() <= 1e-6 * n0.max(1e-300));
            let split = 2 * s.rotated_planes();
            prop_assert_eq!(&out[split..], &row[split..]);
        }

        #[test]
        fn decomposition_identity(
            q in proptest::collection::vec(-3.0f64..3.0, 8),
            k in proptest::collection::vec(-3.0f64..3.0, 8),
            j in 0usize..50_000,
            gap in 0usize..50_000,
        ) {
            let s = FrequencySchedule::build(RopeVariant::standard(10_000.0), 8).unwrap();
            let i = j + gap;
            let mut rq = vec![0.0; 8];
            let mut rk = vec![0.0; 8];
            s.rotate_into(&q, i, &mut rq);
            s.rotate_into(&k, j, &mut rk);
            let absolute: f64 = rq.iter().zip(&rk).map(|(a, b)| a * b).sum();
            prop_assert!((relative_dot(&q, &k, i, j, &s).unwrap() - absolute).abs() < 1e-8);
        }
    }
}
