//! Prior covariance of the reference coordinates as a function of the kernel
//! hyperparameters, the change-of-coordinates baseline, and conditional
//! sampling of truncated tail coordinates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::discretization::{fixed_eigenpairs, ReferenceBasis};
use crate::error::{check_len, Error, Result};
use crate::kernels::HyperParams;
use crate::linalg::{symmetric_eigen_desc, symmetrize, SpdSpectrum};

/// Relative Tikhonov ridge applied before any spectral power.
pub const RIDGE_REL: f64 = 1e-10;

/// `Σ(A, l) = A Σ_1(l)` with `Σ_1(l)_ij = (λ_i λ_j)^{-1/2} u_iᵀ W K_1(l) W u_j`.
#[derive(Debug, Clone)]
pub struct ComPrior {
    pub basis: ReferenceBasis,
    rank: usize,
    /// `W U Λ^{-1/2}`, one column per retained mode.
    dual: DMatrix<f64>,
    length_grid: Vec<(f64, DMatrix<f64>)>,
}

impl ComPrior {
    pub fn new(basis: ReferenceBasis) -> Self {
        let r = basis.r;
        Self::with_rank(basis, r).expect("truncation rank never exceeds stored rank")
    }

    /// Prior over the first `rank` stored modes, e.g. `r + K` for augmentation.
    pub fn with_rank(basis: ReferenceBasis, rank: usize) -> Result<Self> {
        if rank == 0 || rank > basis.stored_rank() {
            return Err(Error::InsufficientRank {
                requested: rank,
                found: basis.stored_rank(),
            });
        }
        let w = basis.grid.weights();
        let dual = DMatrix::from_fn(basis.grid.len(), rank, |i, j| {
            w[i] * basis.eigvecs[(i, j)] / basis.eigvals[j].sqrt()
        });
        Ok(Self {
            basis,
            rank,
            dual,
            length_grid: Vec::new(),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Caches `Σ_1(l)` at the given lengths; later calls at exactly these
    /// values skip the projection.
    pub fn precompute_lengths(&mut self, lengths: &[f64]) -> Result<()> {
        let mats: Vec<Result<DMatrix<f64>>> = lengths.par_iter().map(|&l| self.project_unit(l)).collect();
        for (l, m) in lengths.iter().zip(mats) {
            self.length_grid.push((*l, m?));
        }
        Ok(())
    }

    fn project_unit(&self, length: f64) -> Result<DMatrix<f64>> {
        HyperParams::new(1.0, length).validate()?;
        let kd = self.basis.grid.apply_unit_kernel(self.basis.kind, length, &self.dual);
        let mut s = self.dual.transpose() * kd;
        symmetrize(&mut s);
        Ok(s)
    }

    pub fn unit_sigma(&self, length: f64) -> Result<DMatrix<f64>> {
        if let Some((_, m)) = self.length_grid.iter().find(|(l, _)| *l == length) {
            return Ok(m.clone());
        }
        self.project_unit(length)
    }

    pub fn sigma(&self, q: HyperParams) -> Result<DMatrix<f64>> {
        q.validate()?;
        Ok(self.unit_sigma(q.length)? * q.amplitude)
    }

    pub fn unit_spectrum(&self, length: f64) -> Result<SpdSpectrum> {
        SpdSpectrum::new(self.unit_sigma(length)?, RIDGE_REL, || format!("l = {length}"))
    }

    /// `Σ(q)^p` for `p ∈ {1/2, -1/2, -1}` (any real power is accepted).
    pub fn sigma_pow(&self, q: HyperParams, p: f64) -> Result<DMatrix<f64>> {
        q.validate()?;
        Ok(self.unit_spectrum(q.length)?.power(p) * q.amplitude.powf(p))
    }

    pub fn logdet(&self, q: HyperParams) -> Result<f64> {
        q.validate()?;
        Ok(self.rank as f64 * q.amplitude.ln() + self.unit_spectrum(q.length)?.logdet())
    }

    /// Change-of-coordinates matrix: `B_ij = λ_i^{-1/2} λ_j(q)^{1/2} ⟨u_j(q), u_i⟩`
    /// with `internal_rank` eigenpairs of `k(q)` and the first `columns` of them kept.
    pub fn coc_matrix(&self, q: HyperParams, internal_rank: usize, columns: usize) -> Result<DMatrix<f64>> {
        if columns > internal_rank {
            return Err(Error::Invalid(format!("{columns} columns from an internal rank of {internal_rank}")));
        }
        let (vals, vecs) = fixed_eigenpairs(self.basis.kind, &self.basis.grid, q, internal_rank)?;
        let ip = self.dual.transpose() * vecs.columns(0, columns);
        Ok(DMatrix::from_fn(self.rank, columns, |i, j| ip[(i, j)] * vals[j].sqrt()))
    }
}

/// Gaussian law of the tail coordinates `X` given the retained `ξ` under a
/// joint `N(0, Σ_RR)` prior.
#[derive(Debug, Clone)]
pub struct AugmentedPrior {
    pub r: usize,
    pub k: usize,
    /// `Σ_Kr Σ_rr^{-1}`.
    gain: DMatrix<f64>,
    /// Factor `F` with `F Fᵀ` equal to the Schur complement.
    factor: DMatrix<f64>,
}

/// Eigenvalues of the Schur complement below this are an error.
pub const SCHUR_NEG_TOL: f64 = -1e-8;

impl AugmentedPrior {
    pub fn from_sigma(sigma: &DMatrix<f64>, r: usize) -> Result<Self> {
        let total = sigma.nrows();
        check_len("augmented prior (columns)", total, sigma.ncols())?;
        if r == 0 || r > total {
            return Err(Error::Invalid(format!("retained rank {r} outside 1..={total}")));
        }
        let k = total - r;
        if k == 0 {
            return Ok(Self {
                r,
                k,
                gain: DMatrix::zeros(0, r),
                factor: DMatrix::zeros(0, 0),
            });
        }
        let s_rr = sigma.view((0, 0), (r, r)).into_owned();
        let s_kr = sigma.view((r, 0), (k, r)).into_owned();
        let s_kk = sigma.view((r, r), (k, k)).into_owned();
        let inv = SpdSpectrum::new(s_rr, RIDGE_REL, || "retained block".into())?.power(-1.0);
        let gain = &s_kr * inv;
        let mut schur = s_kk - &gain * s_kr.transpose();
        symmetrize(&mut schur);
        let eig = symmetric_eigen_desc(schur);
        let min = eig.values.last().copied().unwrap_or(0.0);
        if min < SCHUR_NEG_TOL {
            return Err(Error::NotPositiveDefinite {
                context: "Schur complement".into(),
                min_eig: min,
            });
        }
        let roots: Vec<f64> = eig.values.iter().map(|v| v.max(0.0).sqrt()).collect();
        let factor = DMatrix::from_fn(k, k, |i, j| eig.vectors[(i, j)] * roots[j]);
        Ok(Self { r, k, gain, factor })
    }

    pub fn conditional_mean(&self, xi: &[f64]) -> Result<Vec<f64>> {
        check_len("conditional_augment", self.r, xi.len())?;
        Ok((&self.gain * DVector::from_column_slice(xi)).as_slice().to_vec())
    }

    pub fn draw<R: Rng + ?Sized>(&self, xi: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut mean = self.conditional_mean(xi)?;
        if self.k == 0 {
            return Ok(mean);
        }
        let z = DVector::from_fn(self.k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &self.factor * z;
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v;
        }
        Ok(mean)
    }
}

/// Draws `X | ξ` from the rank-`r + K` prior held by `prior` at `q`.
pub fn conditional_augment<R: Rng + ?Sized>(
    prior: &ComPrior,
    r: usize,
    q: HyperParams,
    xi: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    AugmentedPrior::from_sigma(&prior.sigma(q)?, r)?.draw(xi, rng)
}
