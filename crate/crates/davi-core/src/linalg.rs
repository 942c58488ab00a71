//! Dense symmetric positive-definite solves via Cholesky factorization.
//!
//! Matrices are row-major `Vec<f64>` of size n*n. Only what the analytic
//! posterior needs: factor, solve, inverse, log-determinant and sampling
//! transforms.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor L with A = L L^T.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::Dimension(format!(
                "matrix buffer has {} entries, expected {}",
                a.len(),
                n * n
            )));
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Numeric(format!(
                            "matrix is not positive definite (pivot {s} at {i})"
                        )));
                    }
                    l[i * n + j] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Cholesky { n, l })
    }

    /// Solves A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = self.solve_lower(b);
        // back substitution with L^T
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for k in i + 1..self.n {
                s -= self.l[k * self.n + i] * x[k];
            }
            x[i] = s / self.l[i * self.n + i];
        }
        x
    }

    /// Solves L w = b (forward substitution).
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut w = vec![0.0; self.n];
        for i in 0..self.n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * self.n + k] * w[k];
            }
            w[i] = s / self.l[i * self.n + i];
        }
        w
    }

    /// Solves L^T x = b (back substitution). With A interpreted as a
    /// precision matrix, `solve_upper(z)` maps standard normal z to a draw
    /// with covariance A^{-1}.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x = vec![0.0; self.n];
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in i + 1..self.n {
                s -= self.l[k * self.n + i] * x[k];
            }
            x[i] = s / self.l[i * self.n + i];
        }
        x
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n)
            .map(|i| self.l[i * self.n + i].ln())
            .sum::<f64>()
            * 2.0
    }

    pub fn inverse(&self) -> Vec<f64> {
        let mut inv = vec![0.0; self.n * self.n];
        let mut e = vec![0.0; self.n];
        for j in 0..self.n {
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..self.n {
                inv[i * self.n + j] = col[i];
            }
            e[j] = 0.0;
        }
        inv
    }
}
