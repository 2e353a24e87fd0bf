//! Dense least-squares kernels used by the normal-equation solver.

// index loops mirror the textbook formulations and stay readable
#![allow(clippy::needless_range_loop)]

use crate::error::{Error, Result};

/// Householder QR of a row-major `m x n` matrix (`m >= n`).
#[derive(Debug, Clone)]
pub struct Qr {
    m: usize,
    n: usize,
    /// R in the upper triangle, Householder vectors (unit leading entry) below it.
    a: Vec<f64>,
    betas: Vec<f64>,
}

impl Qr {
    pub fn factor(m: usize, n: usize, data: &[f64]) -> Result<Self> {
        if m < n {
            return Err(Error::Singular {
                condition: f64::INFINITY,
            });
        }
        let mut a = data.to_vec();
        let mut betas = vec![0.0; n];
        for k in 0..n {
            let norm = (k..m).map(|i| a[i * n + k].powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let akk = a[k * n + k];
            let alpha = if akk > 0.0 { -norm } else { norm };
            let vk = akk - alpha;
            // reflector w = v / v_k, so w_k = 1 is implicit
            for i in k + 1..m {
                a[i * n + k] /= vk;
            }
            let beta = -vk / alpha;
            a[k * n + k] = alpha;
            for j in k + 1..n {
                let mut dot = a[k * n + j];
                for i in k + 1..m {
                    dot += a[i * n + k] * a[i * n + j];
                }
                let s = beta * dot;
                a[k * n + j] -= s;
                for i in k + 1..m {
                    a[i * n + j] -= s * a[i * n + k];
                }
            }
            betas[k] = beta;
        }
        Ok(Qr { m, n, a, betas })
    }

    pub fn r_diag(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.a[k * self.n + k]).collect()
    }

    /// Condition estimate of R from its diagonal (squared for XᵀX).
    pub fn condition_estimate(&self) -> f64 {
        let d: Vec<f64> = self.r_diag().iter().map(|v| v.abs()).collect();
        let max = d.iter().copied().fold(0.0, f64::max);
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn is_rank_deficient(&self) -> bool {
        let d: Vec<f64> = self.r_diag().iter().map(|v| v.abs()).collect();
        let max = d.iter().copied().fold(0.0, f64::max);
        let tol = max * f64::EPSILON * self.m.max(self.n) as f64 * 10.0;
        max == 0.0 || d.iter().any(|&v| v <= tol)
    }

    /// Applies Qᵀ to `b` in place.
    fn apply_qt(&self, b: &mut [f64]) {
        let (m, n) = (self.m, self.n);
        for k in 0..n {
            if self.betas[k] == 0.0 {
                continue;
            }
            let mut dot = b[k];
            for i in k + 1..m {
                dot += self.a[i * n + k] * b[i];
            }
            let s = self.betas[k] * dot;
            b[k] -= s;
            for i in k + 1..m {
                b[i] -= s * self.a[i * n + k];
            }
        }
    }

    /// Solves R x = c for the leading n entries of `c`.
    fn back_substitute(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let mut s = c[k];
            for j in k + 1..n {
                s -= self.a[k * n + j] * x[j];
            }
            x[k] = s / self.a[k * n + k];
        }
        x
    }

    pub fn solve_least_squares(&self, b: &[f64]) -> Vec<f64> {
        let mut c = b.to_vec();
        self.apply_qt(&mut c);
        self.back_substitute(&c)
    }

    /// (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ, row-major `n x n`.
    pub fn gram_inverse(&self) -> Vec<f64> {
        let n = self.n;
        // columns of R⁻¹ by back substitution on unit vectors
        let mut rinv = vec![0.0; n * n];
        for col in 0..n {
            let mut e = vec![0.0; n];
            e[col] = 1.0;
            let x = self.back_substitute(&e);
            for (row, v) in x.into_iter().enumerate() {
                rinv[row * n + col] = v;
            }
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..n).map(|k| rinv[i * n + k] * rinv[j * n + k]).sum();
            }
        }
        out
    }
}

/// XᵀX and Xᵀy for a row-major `m x n` matrix.
pub fn normal_system(m: usize, n: usize, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut xtx = vec![0.0; n * n];
    let mut xty = vec![0.0; n];
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        for a in 0..n {
            xty[a] += row[a] * y[i];
            for b in 0..n {
                xtx[a * n + b] += row[a] * row[b];
            }
        }
    }
    (xtx, xty)
}
