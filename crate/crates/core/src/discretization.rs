//! Spatial grids, Nyström discretization of the Fredholm eigenproblem and the
//! reference Karhunen–Loève basis.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::binio::{BinReader, BinWriter};
use crate::error::{check_len, Error, Result};
use crate::kernels::{averaged_kernel, HyperParams, HyperQuadrature, KernelKind};
use crate::linalg::{fix_signs, lanczos_top, max_asymmetry, symmetric_eigen_desc, SymOperator};

/// One axis of a tensor grid with trapezoid quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis1d {
    pub coords: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Axis1d {
    pub fn trapezoid(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::Invalid(format!("axis needs n >= 2 and lo < hi, got n={n}, [{lo}, {hi}]")));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let coords = (0..n).map(|i| lo + i as f64 * h).collect();
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        Ok(Self { coords, weights })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    fn unit_gram(&self, kind: KernelKind, length: f64) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| {
            let d = self.coords[i] - self.coords[j];
            kind.unit(d * d, length)
        })
    }
}

/// Tensor-product grid in one or two dimensions. Node `i` of a 2D grid sits at
/// `(x[i / nz], z[i % nz])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    pub axes: Vec<Axis1d>,
}

/// Grids up to this size use the dense eigensolver.
pub const DENSE_LIMIT: usize = 2500;

impl SpatialGrid {
    pub fn uniform_1d(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Ok(Self {
            axes: vec![Axis1d::trapezoid(lo, hi, n)?],
        })
    }

    pub fn tensor_2d(x: (f64, f64, usize), z: (f64, f64, usize)) -> Result<Self> {
        Ok(Self {
            axes: vec![Axis1d::trapezoid(x.0, x.1, x.2)?, Axis1d::trapezoid(z.0, z.1, z.2)?],
        })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Axis1d::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Axis1d::len).collect()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        match self.axes.as_slice() {
            [x] => vec![x.coords[i]],
            [x, z] => vec![x.coords[i / z.len()], z.coords[i % z.len()]],
            _ => unreachable!("grids are 1D or 2D"),
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        match self.axes.as_slice() {
            [x] => x.weights.clone(),
            [x, z] => {
                let mut w = Vec::with_capacity(self.len());
                for wx in &x.weights {
                    for wz in &z.weights {
                        w.push(wx * wz);
                    }
                }
                w
            }
            _ => unreachable!("grids are 1D or 2D"),
        }
    }

    pub fn measure(&self) -> f64 {
        self.axes.iter().map(|a| a.weights.iter().sum::<f64>()).product()
    }

    /// Dense unit-amplitude Gram matrix on all grid nodes.
    pub fn unit_gram(&self, kind: KernelKind, length: f64) -> DMatrix<f64> {
        match self.axes.as_slice() {
            [x] => x.unit_gram(kind, length),
            [x, z] => x.unit_gram(kind, length).kronecker(&z.unit_gram(kind, length)),
            _ => unreachable!("grids are 1D or 2D"),
        }
    }

    /// `K_1(l) X` without forming the full Gram matrix on 2D grids.
    pub fn apply_unit_kernel(&self, kind: KernelKind, length: f64, x: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert!(kind.is_separable());
        match self.axes.as_slice() {
            [a] => a.unit_gram(kind, length) * x,
            [a, b] => {
                let kx = a.unit_gram(kind, length);
                let kz = b.unit_gram(kind, length);
                kron_apply(&kx, &kz, x)
            }
            _ => unreachable!("grids are 1D or 2D"),
        }
    }
}

/// `(A ⊗ B) X` column by column, with the row-major node layout of `SpatialGrid`.
fn kron_apply(a: &DMatrix<f64>, b: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(na * nb, x.ncols());
    for (c, col) in x.column_iter().enumerate() {
        // column-major view M[iz, ix] = x[ix * nb + iz]
        let m = DMatrix::from_column_slice(nb, na, col.as_slice());
        let y = b * m * a.transpose();
        out.column_mut(c).copy_from_slice(y.as_slice());
    }
    out
}

/// Sum of Kronecker products `Σ c_m A_m ⊗ B_m` acting on row-major node vectors.
struct SeparableOperator {
    terms: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

impl SymOperator for SeparableOperator {
    fn dim(&self) -> usize {
        self.terms[0].0.nrows() * self.terms[0].1.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (na, nb) = (self.terms[0].0.nrows(), self.terms[0].1.nrows());
        let m = DMatrix::from_column_slice(nb, na, x);
        let mut acc = DMatrix::<f64>::zeros(nb, na);
        for (a, b) in &self.terms {
            acc += b * &m * a.transpose();
        }
        y.copy_from_slice(acc.as_slice());
    }
}

/// Top-`r` eigenpairs of the integral operator with kernel values `gram` under
/// quadrature `weights`. Eigenvectors are nodal values, orthonormal under the
/// weights, with their largest-magnitude entry positive.
pub fn nystrom_eigensolve(gram: &DMatrix<f64>, weights: &[f64], r: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = gram.nrows();
    check_len("nystrom_eigensolve (columns)", n, gram.ncols())?;
    check_len("nystrom_eigensolve (weights)", n, weights.len())?;
    if r > n {
        return Err(Error::InsufficientRank { requested: r, found: n });
    }
    let scale = gram.amax().max(f64::MIN_POSITIVE);
    let asym = max_asymmetry(gram) / scale;
    if asym > 1e-10 {
        return Err(Error::NotSymmetric(asym));
    }
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let weighted = DMatrix::from_fn(n, n, |i, j| sw[i] * 0.5 * (gram[(i, j)] + gram[(j, i)]) * sw[j]);
    let eig = symmetric_eigen_desc(weighted);
    finish_eigenpairs(eig.values, eig.vectors, &sw, r, Positivity::Strict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Positivity {
    /// Every requested eigenvalue must be numerically positive.
    Strict,
    /// Eigenvalues at round-off level are clamped to zero.
    Clamp,
}

fn finish_eigenpairs(
    mut values: Vec<f64>,
    vectors: DMatrix<f64>,
    sw: &[f64],
    r: usize,
    positivity: Positivity,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let tol = values.first().copied().unwrap_or(0.0).abs() * 1e-14;
    let found = values.iter().take_while(|&&v| v > tol).count();
    if values.len() < r || (positivity == Positivity::Strict && found < r) {
        return Err(Error::InsufficientRank { requested: r, found });
    }
    for v in values.iter_mut().skip(found) {
        *v = 0.0;
    }
    let n = sw.len();
    let mut u = DMatrix::from_fn(n, r, |i, j| vectors[(i, j)] / sw[i]);
    fix_signs(&mut u);
    values.truncate(r);
    Ok((values, u))
}

fn eigensolve_averaged(
    kind: KernelKind,
    grid: &SpatialGrid,
    hq: &HyperQuadrature,
    rank: usize,
    dense_limit: usize,
    positivity: Positivity,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if hq.is_empty() {
        return Err(Error::EmptyRule);
    }
    let weights = grid.weights();
    if grid.len() <= dense_limit || grid.dim() == 1 {
        let mut gram = DMatrix::zeros(grid.len(), grid.len());
        for (q, w) in hq.nodes.iter().zip(&hq.weights) {
            gram += grid.unit_gram(kind, q.length) * (w * q.amplitude);
        }
        let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let n = grid.len();
        let weighted = DMatrix::from_fn(n, n, |i, j| sw[i] * gram[(i, j)] * sw[j]);
        let eig = symmetric_eigen_desc(weighted);
        return finish_eigenpairs(eig.values, eig.vectors, &sw, rank, positivity);
    }
    let [ax, az] = grid.axes.as_slice() else {
        unreachable!("grids are 1D or 2D")
    };
    let weighted = |axis: &Axis1d, l: f64| {
        let sw: Vec<f64> = axis.weights.iter().map(|w| w.sqrt()).collect();
        let k = axis.unit_gram(kind, l);
        DMatrix::from_fn(axis.len(), axis.len(), |i, j| sw[i] * k[(i, j)] * sw[j])
    };
    let terms = hq
        .nodes
        .iter()
        .zip(&hq.weights)
        .map(|(q, w)| (weighted(ax, q.length) * (w * q.amplitude), weighted(az, q.length)))
        .collect();
    let op = SeparableOperator { terms };
    let eig = lanczos_top(&op, rank, 1e-11)?;
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    finish_eigenpairs(eig.values, eig.vectors, &sw, rank, positivity)
}

/// Karhunen–Loève basis of the hyperparameter-averaged kernel. `eigvecs` may
/// hold more columns than the truncation rank `r`; the extra ones feed
/// truncation augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBasis {
    pub grid: SpatialGrid,
    pub kind: KernelKind,
    pub eigvals: Vec<f64>,
    pub eigvecs: DMatrix<f64>,
    pub r: usize,
    pub trace_total: f64,
}

pub fn build_reference_basis(
    kind: KernelKind,
    grid: &SpatialGrid,
    r: usize,
    stored_rank: usize,
    hq: &HyperQuadrature,
) -> Result<ReferenceBasis> {
    if r == 0 || stored_rank < r {
        return Err(Error::Invalid(format!("need 0 < r <= stored rank, got r={r}, stored={stored_rank}")));
    }
    if stored_rank > grid.len() {
        return Err(Error::InsufficientRank {
            requested: stored_rank,
            found: grid.len(),
        });
    }
    let (eigvals, eigvecs) = eigensolve_averaged(kind, grid, hq, stored_rank, DENSE_LIMIT, Positivity::Strict)?;
    let weights = grid.weights();
    let mut trace_total = 0.0;
    for (i, w) in weights.iter().enumerate() {
        let x = grid.point(i);
        trace_total += w * averaged_kernel(kind, &x, &x, hq)?;
    }
    Ok(ReferenceBasis {
        grid: grid.clone(),
        kind,
        eigvals,
        eigvecs,
        r,
        trace_total,
    })
}

/// KL basis of `k(., ., q)` for a single hyperparameter value.
pub fn build_fixed_basis(kind: KernelKind, grid: &SpatialGrid, q: HyperParams, rank: usize) -> Result<ReferenceBasis> {
    q.validate()?;
    build_reference_basis(kind, grid, rank, rank, &HyperQuadrature::point_mass(q))
}

/// Leading `rank` eigenpairs of `k(., ., q)`; eigenvalues below round-off
/// are reported as zero instead of failing.
pub fn fixed_eigenpairs(kind: KernelKind, grid: &SpatialGrid, q: HyperParams, rank: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    q.validate()?;
    eigensolve_averaged(kind, grid, &HyperQuadrature::point_mass(q), rank, DENSE_LIMIT, Positivity::Clamp)
}

const BASIS_MAGIC: &[u8; 8] = b"FIVBAS01";

impl ReferenceBasis {
    pub fn stored_rank(&self) -> usize {
        self.eigvals.len()
    }

    pub fn captured_variance(&self) -> f64 {
        self.captured_variance_at(self.r)
    }

    pub fn captured_variance_at(&self, r: usize) -> f64 {
        self.eigvals.iter().take(r).sum::<f64>() / self.trace_total
    }

    /// Copy with truncation rank `r`, keeping at most `stored` eigenpairs.
    pub fn truncated(&self, r: usize, stored: usize) -> Result<Self> {
        if r == 0 || r > stored || stored > self.stored_rank() {
            return Err(Error::Invalid(format!(
                "cannot truncate a rank-{} basis to r={r}, stored={stored}",
                self.stored_rank()
            )));
        }
        Ok(Self {
            eigvals: self.eigvals[..stored].to_vec(),
            eigvecs: self.eigvecs.columns(0, stored).into_owned(),
            r,
            ..self.clone()
        })
    }

    /// `⟨u_i, u_j⟩` under grid quadrature for all stored modes.
    pub fn gram(&self) -> DMatrix<f64> {
        let w = DVector::from_vec(self.grid.weights());
        let wu = DMatrix::from_fn(self.eigvecs.nrows(), self.eigvecs.ncols(), |i, j| w[i] * self.eigvecs[(i, j)]);
        self.eigvecs.transpose() * wu
    }

    /// `ξ_i = λ_i^{-1/2} ⟨u_i, g⟩` for `i < r`.
    pub fn project_field(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.project_rank(g, self.r)
    }

    pub fn project_rank(&self, g: &[f64], rank: usize) -> Result<Vec<f64>> {
        check_len("project_field", self.grid.len(), g.len())?;
        if rank > self.stored_rank() {
            return Err(Error::InsufficientRank {
                requested: rank,
                found: self.stored_rank(),
            });
        }
        let w = self.grid.weights();
        Ok((0..rank)
            .map(|i| {
                let col = self.eigvecs.column(i);
                let ip: f64 = col.iter().zip(g).zip(&w).map(|((u, g), w)| u * g * w).sum();
                ip / self.eigvals[i].sqrt()
            })
            .collect())
    }

    /// `c + Σ_{i<r} λ_i^{1/2} u_i ξ_i` at the grid nodes.
    pub fn reconstruct_field(&self, xi: &[f64], trend: f64) -> Result<Vec<f64>> {
        check_len("reconstruct_field", self.r, xi.len())?;
        self.reconstruct_any(xi, trend)
    }

    /// Reconstruction from the first `xi.len()` modes, up to the stored rank.
    pub fn reconstruct_any(&self, xi: &[f64], trend: f64) -> Result<Vec<f64>> {
        if xi.len() > self.stored_rank() {
            return Err(Error::InsufficientRank {
                requested: xi.len(),
                found: self.stored_rank(),
            });
        }
        let mut g = vec![trend; self.grid.len()];
        for (i, &x) in xi.iter().enumerate() {
            let s = self.eigvals[i].sqrt() * x;
            if s == 0.0 {
                continue;
            }
            for (gn, u) in g.iter_mut().zip(self.eigvecs.column(i).iter()) {
                *gn += s * u;
            }
        }
        Ok(g)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(BufWriter::new(File::create(path)?), BASIS_MAGIC)?;
        w.u64(match self.kind {
            KernelKind::SquaredExponential => 0,
        })?;
        w.u64(self.grid.dim() as u64)?;
        for axis in &self.grid.axes {
            w.f64s(&axis.coords)?;
            w.f64s(&axis.weights)?;
        }
        w.u64(self.r as u64)?;
        w.f64(self.trace_total)?;
        w.f64s(&self.eigvals)?;
        w.f64s(self.eigvecs.as_slice())?;
        w.finish()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rd = BinReader::new(BufReader::new(File::open(path)?), BASIS_MAGIC)?;
        let kind = match rd.u64()? {
            0 => KernelKind::SquaredExponential,
            k => return Err(Error::Format(format!("unknown kernel tag {k}"))),
        };
        let dim = rd.usize()?;
        if !(1..=2).contains(&dim) {
            return Err(Error::Format(format!("grid dimension {dim}")));
        }
        let mut axes = Vec::with_capacity(dim);
        for _ in 0..dim {
            let coords = rd.f64s()?;
            let weights = rd.f64s()?;
            check_len("basis bundle axis", coords.len(), weights.len())?;
            axes.push(Axis1d { coords, weights });
        }
        let grid = SpatialGrid { axes };
        let r = rd.usize()?;
        let trace_total = rd.f64()?;
        let eigvals = rd.f64s()?;
        let data = rd.f64s()?;
        check_len("basis bundle eigenvectors", grid.len() * eigvals.len(), data.len())?;
        if r == 0 || r > eigvals.len() {
            return Err(Error::Format(format!("truncation rank {r} with {} modes", eigvals.len())));
        }
        let eigvecs = DMatrix::from_vec(grid.len(), eigvals.len(), data);
        Ok(Self {
            grid,
            kind,
            eigvals,
            eigvecs,
            r,
            trace_total,
        })
    }
}
