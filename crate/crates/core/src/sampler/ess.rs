//! Multivariate effective sample size by batch means.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn mean_and_cov(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let p = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(p);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(p, p);
    for r in rows {
        let c = DVector::from_column_slice(r) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    (mean, cov / (n - 1.0))
}

/// Batch-means estimate of the asymptotic covariance with `b = ⌊√n⌋`.
fn batch_means(rows: &[Vec<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    let n = rows.len();
    let p = rows[0].len();
    let b = (n as f64).sqrt().floor() as usize;
    let a = n / b;
    let mut acc = DMatrix::zeros(p, p);
    for k in 0..a {
        let mut m = DVector::zeros(p);
        for r in &rows[k * b..(k + 1) * b] {
            m += DVector::from_column_slice(r);
        }
        let c = m / b as f64 - mean;
        acc.ger(1.0, &c, &c, 1.0);
    }
    acc * (b as f64 / (a as f64 - 1.0))
}

/// `logdet` of a symmetric matrix whose eigenvalues all exceed `1e-12` of the largest.
fn logdet_spd(m: &DMatrix<f64>) -> Option<f64> {
    let eig = m.clone().symmetric_eigen().eigenvalues;
    let max = eig.max();
    if !(max > 0.0) || eig.min() <= 1e-12 * max {
        return None;
    }
    Some(eig.iter().map(|v| v.ln()).sum())
}

/// `n (det Λ / det Σ_bm)^{1/p}`; falls back to the smallest univariate ESS
/// when either matrix is singular, and is `0` for a constant chain.
pub fn multi_ess(rows: &[Vec<f64>]) -> Result<f64> {
    if rows.len() < 4 {
        return Err(Error::Invalid(format!("multiESS needs at least 4 states, got {}", rows.len())));
    }
    let n = rows.len() as f64;
    let p = rows[0].len();
    let (mean, lambda) = mean_and_cov(rows);
    let sigma = batch_means(rows, &mean);
    if lambda.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    match (logdet_spd(&lambda), logdet_spd(&sigma)) {
        (Some(l), Some(s)) => Ok(n * ((l - s) / p as f64).exp()),
        _ => {
            log::warn!("singular batch-means matrix, reporting the minimum univariate ESS");
            Ok(univariate_ess(&lambda, &sigma, n).into_iter().fold(f64::INFINITY, f64::min))
        }
    }
}

fn univariate_ess(lambda: &DMatrix<f64>, sigma: &DMatrix<f64>, n: f64) -> Vec<f64> {
    (0..lambda.nrows())
        .map(|i| {
            if lambda[(i, i)] == 0.0 {
                0.0
            } else if sigma[(i, i)] == 0.0 {
                n
            } else {
                n * lambda[(i, i)] / sigma[(i, i)]
            }
        })
        .collect()
}

/// Per-coordinate batch-means ESS.
pub fn coordinate_ess(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    if rows.len() < 4 {
        return Err(Error::Invalid(format!("ESS needs at least 4 states, got {}", rows.len())));
    }
    let (mean, lambda) = mean_and_cov(rows);
    let sigma = batch_means(rows, &mean);
    Ok(univariate_ess(&lambda, &sigma, rows.len() as f64))
}
