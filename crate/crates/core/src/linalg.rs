//! Small dense symmetric kernels: streaming Gram accumulation and a cyclic
//! Jacobi eigensolver.
//!
//! Singular values of a tall `n × d` cloud come from the eigenvalues of its
//! `d × d` Gram matrix, so `n` never enters the factorization.

use rayon::prelude::*;

/// Rows per parallel Gram chunk. Fixed so the summation order, and therefore
/// every bit of the result, does not depend on the thread count.
const GRAM_CHUNK: usize = 2048;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;

/// Accumulates `Σ x xᵀ` over streamed rows (upper triangle only).
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    d: usize,
    upper: Vec<f64>,
    rows: usize,
}

impl GramAccumulator {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            upper: vec![0.0; d * d],
            rows: 0,
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        let d = self.d;
        debug_assert_eq!(row.len(), d);
        for (i, &ri) in row.iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            let dst = &mut self.upper[i * d + i..(i + 1) * d];
            for (g, &rj) in dst.iter_mut().zip(&row[i..]) {
                *g += ri * rj;
            }
        }
        self.rows += 1;
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.upper.iter_mut().zip(&other.upper) {
            *a += b;
        }
        self.rows += other.rows;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn finish(self) -> SymMatrix {
        let d = self.d;
        let mut m = self.upper;
        for i in 0..d {
            for j in 0..i {
                m[i * d + j] = m[j * d + i];
            }
        }
        SymMatrix { d, data: m }
    }
}

/// Gram matrix of `n` rows produced on demand by `fill(index, buffer)`.
///
/// Rows are generated and accumulated in fixed-size chunks across the rayon
/// pool; partial sums are combined in chunk order.
pub fn gram_streamed<F>(n: usize, d: usize, fill: F) -> SymMatrix
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let chunks = n.div_ceil(GRAM_CHUNK);
    let partials: Vec<GramAccumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = GramAccumulator::new(d);
            let mut buf = vec![0.0; d];
            for j in c * GRAM_CHUNK..((c + 1) * GRAM_CHUNK).min(n) {
                fill(j, &mut buf);
                acc.push(&buf);
            }
            acc
        })
        .collect();
    let mut total = GramAccumulator::new(d);
    for p in &partials {
        total.merge(p);
    }
    total.finish()
}

/// Gram matrix of a row-major `n × d` slice.
pub fn gram_of_rows(data: &[f64], d: usize) -> SymMatrix {
    let n = data.len() / d;
    gram_streamed(n, d, |j, buf| buf.copy_from_slice(&data[j * d..(j + 1) * d]))
}

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    d: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn from_row_major(d: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), d * d);
        Self { d, data }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Eigen-decomposition by cyclic Jacobi sweeps.
    pub fn eigen(&self) -> Eigen {
        jacobi_eigen(self)
    }
}

/// Eigenvalues in non-increasing order with matching unit eigenvectors.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    /// Column `k` of this row-major `d × d` matrix pairs with `values[k]`.
    pub vectors: Vec<f64>,
    pub sweeps: usize,
}

impl Eigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        let d = self.values.len();
        (0..d).map(|i| self.vectors[i * d + k]).collect()
    }
}

fn off_diagonal_norm(a: &[f64], d: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                s += a[i * d + j] * a[i * d + j];
            }
        }
    }
    s.sqrt()
}

fn jacobi_eigen(m: &SymMatrix) -> Eigen {
    let d = m.d;
    let mut a = m.data.clone();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let threshold = JACOBI_REL_TOL * m.frobenius();
    let mut sweeps = 0;
    while sweeps < JACOBI_MAX_SWEEPS && off_diagonal_norm(&a, d) > threshold {
        sweeps += 1;
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                a[p * d + q] = 0.0;
                a[q * d + p] = 0.0;

                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| a[y * d + y].total_cmp(&a[x * d + x]));
    let values = order.iter().map(|&k| a[k * d + k]).collect();
    let mut vectors = vec![0.0; d * d];
    for (col, &k) in order.iter().enumerate() {
        // Sign convention: the largest-magnitude component is positive.
        let mut best = 0;
        for i in 0..d {
            if v[i * d + k].abs() > v[best * d + k].abs() {
                best = i;
            }
        }
        let sign = if v[best * d + k] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            vectors[i * d + col] = sign * v[i * d + k];
        }
    }
    Eigen {
        values,
        vectors,
        sweeps,
    }
}
