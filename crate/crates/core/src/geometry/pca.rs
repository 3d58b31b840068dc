use serde::{Deserialize, Serialize};

use crate::cloud::LatentCloud;
use crate::error::{Error, Result};
use crate::linalg::gram_of_rows;

/// A 2-D projection of one cloud through a basis fixed by a reference cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSnapshot {
    /// `d × 2`, row-major, orthonormal columns.
    pub basis: Vec<f64>,
    /// One `[x, y]` per target row.
    pub projected: Vec<[f64; 2]>,
    /// Share of the reference's variance captured by the two directions.
    pub explained_fraction: f64,
}

/// Projects every target through the top-2 right singular vectors of
/// `reference`. Variance is measured about the origin unless `centered`, in
/// which case the reference mean is removed from reference and targets alike.
pub fn pca_snapshot(
    reference: &LatentCloud,
    targets: &[&LatentCloud],
    centered: bool,
) -> Result<Vec<PcaSnapshot>> {
    let d = reference.d();
    if let Some(t) = targets.iter().find(|t| t.d() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: t.d(),
        });
    }
    let mean = if centered {
        let mut m = vec![0.0; d];
        for row in reference.rows() {
            for (s, x) in m.iter_mut().zip(row) {
                *s += x;
            }
        }
        m.iter_mut().for_each(|s| *s /= reference.n() as f64);
        m
    } else {
        vec![0.0; d]
    };

    let shifted: Vec<f64> = reference
        .data()
        .chunks_exact(d)
        .flat_map(|r| r.iter().zip(&mean).map(|(x, m)| x - m))
        .collect();
    let gram = gram_of_rows(&shifted, d);
    let total = gram.trace();
    let eig = gram.eigen();
    if !(total > 0.0) || eig.values[1] <= 1e-12 * eig.values[0] {
        return Err(Error::RankDeficient);
    }
    let (b0, b1) = (eig.vector(0), eig.vector(1));
    let basis: Vec<f64> = (0..d).flat_map(|i| [b0[i], b1[i]]).collect();
    let explained_fraction = (eig.values[0] + eig.values[1]) / total;

    Ok(targets
        .iter()
        .map(|t| PcaSnapshot {
            basis: basis.clone(),
            projected: t
                .rows()
                .map(|r| {
                    let mut p = [0.0; 2];
                    for i in 0..d {
                        let x = r[i] - mean[i];
                        p[0] += x * b0[i];
                        p[1] += x * b1[i];
                    }
                    p
                })
                .collect(),
            explained_fraction,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::CloudMeta;

    fn cloud(rows: Vec<Vec<f64>>) -> LatentCloud {
        LatentCloud::from_rows(&rows, CloudMeta::default()).unwrap()
    }

    #[test]
    fn planar_reference_is_fully_explained() {
        let r = cloud(vec![
            vec![1.0, 2.0, 0.0, 0.0],
            vec![-3.0, 0.5, 0.0, 0.0],
            vec![0.2, -1.0, 0.0, 0.0],
        ]);
        let snap = pca_snapshot(&r, &[&r], false).unwrap();
        assert!((snap[0].explained_fraction - 1.0).abs() < 1e-12);
        // Projection of an in-plane point preserves its norm.
        for (p, row) in snap[0].projected.iter().zip(r.rows()) {
            let a = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let b = (row[0] * row[0] + row[1] * row[1]).sqrt();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let r = cloud(
            (0..20)
                .map(|i| {
                    let t = i as f64;
                    vec![t.sin(), (2.0 * t).cos(), 0.3 * t, 1.0, -t.cos(), 0.5]
                })
                .collect(),
        );
        let snap = &pca_snapshot(&r, &[&r], false).unwrap()[0];
        let col = |k: usize| (0..6).map(move |i| snap.basis[i * 2 + k]);
        let g00: f64 = col(0).map(|x| x * x).sum();
        let g11: f64 = col(1).map(|x| x * x).sum();
        let g01: f64 = col(0).zip(col(1)).map(|(a, b)| a * b).sum();
        assert!((g00 - 1.0).abs() < 1e-8 && (g11 - 1.0).abs() < 1e-8 && g01.abs() < 1e-8);
    }

    #[test]
    fn rank_one_reference_rejected() {
        let r = cloud(vec![vec![1.0, 1.0], vec![2.0, 2.0]]);
        assert_eq!(pca_snapshot(&r, &[&r], false).unwrap_err(), Error::RankDeficient);
    }

    #[test]
    fn centered_option_removes_offset() {
        let r = cloud(vec![
            vec![10.0, 1.0, 0.0, 0.0],
            vec![10.0, -1.0, 0.0, 0.0],
            vec![10.0, 0.0, 2.0, 0.0],
            vec![10.0, 0.0, -2.0, 0.0],
        ]);
        let snap = &pca_snapshot(&r, &[&r], true).unwrap()[0];
        // The constant first coordinate carries no centered variance.
        assert!(snap.basis[0].abs() < 1e-12 && snap.basis[1].abs() < 1e-12);
        assert!((snap.explained_fraction - 1.0).abs() < 1e-12);
    }
}
