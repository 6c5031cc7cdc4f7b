//! Dense and matrix-free symmetric eigensolvers plus spectral matrix functions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenpairs sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Columns are eigenvectors, aligned with `values`.
    pub vectors: DMatrix<f64>,
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetric_eigen_desc(m: DMatrix<f64>) -> SortedEigen {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    SortedEigen { values, vectors }
}

/// Flips each column so that its entry of largest magnitude is positive.
/// Ties on magnitude resolve to the lowest row index.
pub fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs * (1.0 + 1e-12) {
                best = i;
                best_abs = v.abs();
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Spectral decomposition of a symmetric positive definite matrix with a
/// relative Tikhonov ridge added to every eigenvalue.
#[derive(Debug, Clone)]
pub struct SpdSpectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SpdSpectrum {
    pub fn new(mut m: DMatrix<f64>, ridge_rel: f64, context: impl FnOnce() -> String) -> Result<Self> {
        symmetrize(&mut m);
        let eig = symmetric_eigen_desc(m);
        let lmax = eig.values.first().copied().unwrap_or(0.0);
        let ridge = ridge_rel * lmax.max(0.0);
        let values: Vec<f64> = eig.values.iter().map(|v| v + ridge).collect();
        let min = values.last().copied().unwrap_or(0.0);
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite {
                context: context(),
                min_eig: min,
            });
        }
        Ok(Self {
            values,
            vectors: eig.vectors,
        })
    }

    pub fn power(&self, p: f64) -> DMatrix<f64> {
        let n = self.values.len();
        let scaled = DMatrix::from_fn(n, n, |i, j| self.vectors[(i, j)] * self.values[j].powf(p));
        let mut out = &scaled * self.vectors.transpose();
        symmetrize(&mut out);
        out
    }

    pub fn logdet(&self) -> f64 {
        self.values.iter().map(|v| v.ln()).sum()
    }
}

/// Matrix-free symmetric linear operator.
pub trait SymOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl SymOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let out = self * DVector::from_column_slice(x);
        y.copy_from_slice(out.as_slice());
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Top-`k` eigenpairs of a symmetric operator by Lanczos iteration with full
/// reorthogonalisation. The Krylov space grows until every requested Ritz pair
/// has residual below `tol * |theta_1|`.
pub fn lanczos_top(op: &dyn SymOperator, k: usize, tol: f64) -> Result<SortedEigen> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(Error::Invalid(format!("cannot extract {k} eigenpairs from dimension {n}")));
    }
    // deterministic start vector with components in every direction
    let mut q0: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin()).collect();
    let nq = norm(&q0);
    q0.iter_mut().for_each(|v| *v /= nq);

    let mut basis: Vec<Vec<f64>> = vec![q0];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut target = (2 * k + 20).min(n);
    let mut w = vec![0.0; n];

    loop {
        while alpha.len() < target {
            let j = alpha.len();
            op.apply(&basis[j], &mut w);
            let a = dot(&basis[j], &w);
            alpha.push(a);
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &w);
                    w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
                }
            }
            let b = norm(&w);
            if alpha.len() == n {
                break;
            }
            if b <= 1e-13 * alpha.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300) {
                // invariant subspace: continue with a fresh orthogonal direction
                let mut fresh: Vec<f64> = (0..n).map(|i| ((i * 7919 + basis.len() * 104729) % 1009) as f64 - 504.0).collect();
                for _ in 0..2 {
                    for q in &basis {
                        let c = dot(q, &fresh);
                        fresh.iter_mut().zip(q).for_each(|(fi, qi)| *fi -= c * qi);
                    }
                }
                let nf = norm(&fresh);
                beta.push(0.0);
                basis.push(fresh.into_iter().map(|v| v / nf).collect());
            } else {
                beta.push(b);
                basis.push(w.iter().map(|v| v / b).collect());
            }
        }

        let m = alpha.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let ritz = symmetric_eigen_desc(t);
        let last_beta = if m < n { beta.get(m - 1).copied().unwrap_or(0.0) } else { 0.0 };
        let scale = ritz.values[0].abs().max(1e-300);
        let converged = (0..k).all(|i| (last_beta * ritz.vectors[(m - 1, i)]).abs() <= tol * scale);
        if converged || m >= n {
            let mut vectors = DMatrix::<f64>::zeros(n, k);
            for c in 0..k {
                let mut col = vec![0.0; n];
                for (j, q) in basis.iter().take(m).enumerate() {
                    let y = ritz.vectors[(j, c)];
                    col.iter_mut().zip(q).for_each(|(v, qi)| *v += y * qi);
                }
                let nc = norm(&col);
                for (i, v) in col.into_iter().enumerate() {
                    vectors[(i, c)] = v / nc;
                }
            }
            return Ok(SortedEigen {
                values: ritz.values[..k].to_vec(),
                vectors,
            });
        }
        target = (target + k.max(20)).min(n);
    }
}
