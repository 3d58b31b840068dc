//! Gram/Jacobi singular values against independent references: power
//! iteration with deflation on XᵀX, and closed-form trigonometric sums for
//! the rotated ones cloud.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rope_geometry::geometry::spectral_summary;
use rope_geometry::linalg::gram_streamed;
use rope_geometry::{CloudMeta, FrequencySchedule, LatentCloud, RopeVariant};

/// Top singular values by power iteration on XᵀX with Hotelling deflation.
fn power_deflation(x: &[f64], n: usize, d: usize, count: usize) -> Vec<f64> {
    let mut g = vec![0.0; d * d];
    for r in 0..n {
        for i in 0..d {
            for j in 0..d {
                g[i * d + j] += x[r * d + i] * x[r * d + j];
            }
        }
    }
    let mut out = Vec::new();
    for c in 0..count {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.01 * (i + c) as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| g[i * d + j] * v[j]).sum()).collect();
            let nw = w.iter().map(|a| a * a).sum::<f64>().sqrt();
            let next: Vec<f64> = w.iter().map(|a| a / nw).collect();
            let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            lambda = nw;
            if delta < 1e-14 {
                break;
            }
        }
        out.push(lambda.sqrt());
        for i in 0..d {
            for j in 0..d {
                g[i * d + j] -= lambda * v[i] * v[j];
            }
        }
    }
    out
}

#[test]
fn jacobi_matches_power_iteration_on_random_64x16() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..10 {
        let (n, d) = (64, 16);
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cloud = LatentCloud::new(x.clone(), d, CloudMeta::default()).unwrap();
        let s = spectral_summary(&cloud).unwrap();
        let oracle = power_deflation(&x, n, d, 4);
        for (k, want) in oracle.iter().enumerate() {
            let got = s.singular_values[k];
            assert!(
                (got - want).abs() <= 1e-6 * want,
                "trial {trial} σ{k}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn streamed_gram_matches_trig_sums() {
    // For rows R_j v with v = 1/√d on a Standard schedule, each Gram entry
    // between coordinates of planes k and l is a sum of cos/sin of j(θ_k ± θ_l).
    let d = 8;
    let n = 3000;
    let s = FrequencySchedule::build(RopeVariant::standard(10_000.0), d).unwrap();
    let v = vec![1.0 / (d as f64).sqrt(); d];
    let g = gram_streamed(n, d, |j, buf| s.rotate_into(&v, j, buf));
    let f = s.frequencies();
    let a = v[0];
    // Plane-k coordinates: (a cos jθ − a sin jθ, a sin jθ + a cos jθ).
    let coord = |p: usize, j: f64| {
        let (sn, cs) = (j * f[p / 2]).sin_cos();
        if p % 2 == 0 {
            a * (cs - sn)
        } else {
            a * (sn + cs)
        }
    };
    for p in 0..d {
        for q in 0..d {
            // Kahan-summed reference, independent of the chunked accumulator.
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for j in 0..n {
                let y = coord(p, j as f64) * coord(q, j as f64) - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
            }
            assert!((g.get(p, q) - sum).abs() < 1e-9 * n as f64, "({p},{q})");
        }
    }
}
