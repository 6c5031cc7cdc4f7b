//! Surrogates of the unit-amplitude prior quantities `Σ_1(l)^{±1/2}`,
//! `logdet Σ_1(l)` and the change-of-coordinates matrix `B_1(l)`, with the
//! amplitude restored analytically.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use super::grid::ProjectionGrid;
use super::surrogate::{rrmse_pairs, InputMap, PCSurrogate};
use crate::com_prior::ComPrior;
use crate::error::{Error, Result};
use crate::kernels::{HyperParams, LengthPrior};

pub fn length_input_map(prior: &LengthPrior) -> InputMap {
    match *prior {
        LengthPrior::LogUniform { lo, hi } => InputMap::LogUniform { lo, hi },
        LengthPrior::Uniform { lo, hi } => InputMap::Uniform { lo, hi },
        LengthPrior::Fixed { value } => InputMap::Fixed { value },
    }
}

fn length_grid(map: InputMap, order: usize) -> (ProjectionGrid, Vec<f64>) {
    let order = if matches!(map, InputMap::Fixed { .. }) { 0 } else { order };
    let grid = ProjectionGrid::gauss_1d(map.family(), order);
    let lengths = grid.nodes.iter().map(|z| map.from_germ(z[0])).collect();
    (grid, lengths)
}

fn evaluate_rows<F>(lengths: &[f64], f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(f64) -> Result<Vec<f64>> + Sync,
{
    lengths.par_iter().map(|&l| f(l)).collect()
}

/// Projects a matrix-valued function of `l` on Gauss–Legendre nodes.
fn project_matrices<F>(map: InputMap, order: usize, outputs: usize, f: F) -> Result<PCSurrogate>
where
    F: Fn(f64) -> Result<Vec<f64>> + Sync,
{
    let (grid, lengths) = length_grid(map, order);
    let values: Vec<f64> = evaluate_rows(&lengths, f)?.concat();
    PCSurrogate::from_projection(vec![map], &grid, &values, outputs)
}

fn as_matrix(v: Vec<f64>, r: usize) -> DMatrix<f64> {
    DMatrix::from_vec(r, r, v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSurrogates {
    pub r: usize,
    pub order: usize,
    pub sqrt: PCSurrogate,
    pub inv_sqrt: PCSurrogate,
    pub logdet: PCSurrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PriorRrmse {
    pub sqrt: f64,
    pub inv: f64,
    pub logdet: f64,
}

impl PriorRrmse {
    pub fn worst(&self) -> f64 {
        self.sqrt.max(self.inv).max(self.logdet)
    }
}

impl PriorSurrogates {
    pub fn build(prior: &ComPrior, length: &LengthPrior, order: usize) -> Result<Self> {
        let r = prior.rank();
        let map = length_input_map(length);
        let spectra = |l: f64| prior.unit_spectrum(l);
        let sqrt = project_matrices(map, order, r * r, |l| Ok(spectra(l)?.power(0.5).as_slice().to_vec()))?;
        let inv_sqrt = project_matrices(map, order, r * r, |l| Ok(spectra(l)?.power(-0.5).as_slice().to_vec()))?;
        let logdet = project_matrices(map, order, 1, |l| Ok(vec![spectra(l)?.logdet()]))?;
        Ok(Self {
            r,
            order,
            sqrt,
            inv_sqrt,
            logdet,
        })
    }

    pub fn unit_sqrt(&self, length: f64) -> Result<DMatrix<f64>> {
        Ok(as_matrix(self.sqrt.eval(&[length])?, self.r))
    }

    pub fn unit_inv_sqrt(&self, length: f64) -> Result<DMatrix<f64>> {
        Ok(as_matrix(self.inv_sqrt.eval(&[length])?, self.r))
    }

    /// `Σ̃_1^{-1} := Σ̃_1^{-1/2} Σ̃_1^{-1/2}`, symmetric positive semidefinite by construction.
    pub fn unit_inv(&self, length: f64) -> Result<DMatrix<f64>> {
        let h = self.unit_inv_sqrt(length)?;
        Ok(&h * &h)
    }

    pub fn unit_logdet(&self, length: f64) -> Result<f64> {
        Ok(self.logdet.eval(&[length])?[0])
    }

    pub fn sqrt(&self, q: HyperParams) -> Result<DMatrix<f64>> {
        Ok(self.unit_sqrt(q.length)? * q.amplitude.sqrt())
    }

    pub fn inv_sqrt(&self, q: HyperParams) -> Result<DMatrix<f64>> {
        Ok(self.unit_inv_sqrt(q.length)? / q.amplitude.sqrt())
    }

    pub fn inv(&self, q: HyperParams) -> Result<DMatrix<f64>> {
        Ok(self.unit_inv(q.length)? / q.amplitude)
    }

    pub fn logdet(&self, q: HyperParams) -> Result<f64> {
        Ok(self.r as f64 * q.amplitude.ln() + self.unit_logdet(q.length)?)
    }

    /// RRMSE of the three quantities against the exact prior at `n` lengths
    /// drawn from the length prior.
    pub fn validate<R: Rng + ?Sized>(&self, prior: &ComPrior, length: &LengthPrior, n: usize, rng: &mut R) -> Result<PriorRrmse> {
        let map = length_input_map(length);
        let ls: Vec<f64> = (0..n).map(|_| map.sample(rng)).collect();
        let exact: Vec<Result<(Vec<f64>, Vec<f64>, f64)>> = ls
            .par_iter()
            .map(|&l| {
                let s = prior.unit_spectrum(l)?;
                Ok((s.power(0.5).as_slice().to_vec(), s.power(-1.0).as_slice().to_vec(), s.logdet()))
            })
            .collect();
        let mut t_sqrt = Vec::with_capacity(n);
        let mut t_inv = Vec::with_capacity(n);
        let mut t_ld = Vec::with_capacity(n);
        let mut p_sqrt = Vec::with_capacity(n);
        let mut p_inv = Vec::with_capacity(n);
        let mut p_ld = Vec::with_capacity(n);
        for (l, e) in ls.iter().zip(exact) {
            let (a, b, c) = e?;
            t_sqrt.push(a);
            t_inv.push(b);
            t_ld.push(vec![c]);
            p_sqrt.push(self.unit_sqrt(*l)?.as_slice().to_vec());
            p_inv.push(self.unit_inv(*l)?.as_slice().to_vec());
            p_ld.push(vec![self.unit_logdet(*l)?]);
        }
        let pairs = |t: &'_ [Vec<f64>], p: &'_ [Vec<f64>]| -> Result<f64> {
            rrmse_pairs(t.iter().zip(p).map(|(a, b)| (a.as_slice(), b.as_slice())))
        };
        Ok(PriorRrmse {
            sqrt: pairs(&t_sqrt, &p_sqrt)?,
            inv: pairs(&t_inv, &p_inv)?,
            logdet: pairs(&t_ld, &p_ld)?,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.sqrt.write(&dir.join("sigma_sqrt.bin"))?;
        self.inv_sqrt.write(&dir.join("sigma_inv_sqrt.bin"))?;
        self.logdet.write(&dir.join("sigma_logdet.bin"))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let sqrt = PCSurrogate::read(&dir.join("sigma_sqrt.bin"))?;
        let inv_sqrt = PCSurrogate::read(&dir.join("sigma_inv_sqrt.bin"))?;
        let logdet = PCSurrogate::read(&dir.join("sigma_logdet.bin"))?;
        let r = (sqrt.outputs() as f64).sqrt().round() as usize;
        if r * r != sqrt.outputs() || inv_sqrt.outputs() != sqrt.outputs() || logdet.outputs() != 1 {
            return Err(Error::Format("inconsistent prior surrogate bundle".into()));
        }
        let order = sqrt.multi_indices.max_degree()[0];
        Ok(Self {
            r,
            order,
            sqrt,
            inv_sqrt,
            logdet,
        })
    }
}

/// Surrogate of `B_1(l)`; `B(A, l) = √A B_1(l)`. Columns keep the module
/// sign convention at the smallest training length and are then oriented for
/// continuity in `l`, since the convention alone flips columns between
/// neighbouring lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct CocSurrogate {
    pub r: usize,
    pub b: PCSurrogate,
}

impl CocSurrogate {
    pub fn build(prior: &ComPrior, length: &LengthPrior, order: usize, internal_rank: usize) -> Result<Self> {
        let r = prior.rank();
        let map = length_input_map(length);
        let (grid, lengths) = length_grid(map, order);
        let mut rows = evaluate_rows(&lengths, |l| {
            Ok(prior.coc_matrix(HyperParams::new(1.0, l), internal_rank, r)?.as_slice().to_vec())
        })?;
        let mut order_idx: Vec<usize> = (0..lengths.len()).collect();
        order_idx.sort_by(|&a, &b| lengths[a].total_cmp(&lengths[b]));
        for w in order_idx.windows(2) {
            let (prev, cur) = (w[0], w[1]);
            for j in 0..r {
                let col = j * r..(j + 1) * r;
                let dot: f64 = rows[prev][col.clone()].iter().zip(&rows[cur][col.clone()]).map(|(a, b)| a * b).sum();
                if dot < 0.0 {
                    rows[cur][col].iter_mut().for_each(|v| *v = -*v);
                }
            }
        }
        let b = PCSurrogate::from_projection(vec![map], &grid, &rows.concat(), r * r)?;
        Ok(Self { r, b })
    }

    pub fn matrix(&self, q: HyperParams) -> Result<DMatrix<f64>> {
        Ok(as_matrix(self.b.eval(&[q.length])?, self.r) * q.amplitude.sqrt())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.b.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let b = PCSurrogate::read(path)?;
        let r = (b.outputs() as f64).sqrt().round() as usize;
        if r * r != b.outputs() {
            return Err(Error::Format("change-of-coordinates surrogate is not square".into()));
        }
        Ok(Self { r, b })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{build_reference_basis, SpatialGrid};
    use crate::kernels::{AmplitudePrior, HyperPriorSpec, HyperQuadrature, KernelKind, NoisePrior};
    use crate::linalg::symmetric_eigen_desc;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    const LP: LengthPrior = LengthPrior::LogUniform { lo: 0.1, hi: 0.7 };

    fn td_prior() -> &'static ComPrior {
        static P: OnceLock<ComPrior> = OnceLock::new();
        P.get_or_init(|| {
            let spec = HyperPriorSpec {
                amplitude: AmplitudePrior::InvGamma { shape: 3.0, scale: 1.0 },
                length: LP,
                trend: None,
                noise: NoisePrior::Jeffreys,
            };
            let grid = SpatialGrid::uniform_1d(0.0, 1.0, 201).unwrap();
            let hq = HyperQuadrature::analytic_amplitude(&spec, 40).unwrap();
            ComPrior::new(build_reference_basis(KernelKind::SquaredExponential, &grid, 8, 8, &hq).unwrap())
        })
    }

    fn surrogates(order: usize) -> &'static PriorSurrogates {
        static S: OnceLock<Vec<(usize, PriorSurrogates)>> = OnceLock::new();
        let all = S.get_or_init(|| [3, 7, 15].iter().map(|&o| (o, PriorSurrogates::build(td_prior(), &LP, o).unwrap())).collect());
        &all.iter().find(|(o, _)| *o == order).expect("order prebuilt").1
    }

    #[test]
    fn order_sweep_decays_and_meets_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let errs: Vec<PriorRrmse> = [3, 7, 15]
            .iter()
            .map(|&o| surrogates(o).validate(td_prior(), &LP, 300, &mut rng).unwrap())
            .collect();
        for k in 0..2 {
            assert!(errs[k + 1].sqrt < errs[k].sqrt);
            assert!(errs[k + 1].inv < errs[k].inv);
            assert!(errs[k + 1].logdet < errs[k].logdet);
        }
        assert!(errs[2].logdet < 1e-3, "{:?}", errs[2]);
        assert!(errs[2].inv < 3e-3, "{:?}", errs[2]);
    }

    #[test]
    fn reconstructed_sigma_matches_exact() {
        let s = surrogates(15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let l = LengthPrior::from_unit(&LP, rng.random());
            let q = HyperParams::new(0.5, l);
            let h = s.sqrt(q).unwrap();
            let exact = td_prior().sigma(q).unwrap();
            assert!((&h * &h - &exact).norm() / exact.norm() < 5e-3);
        }
    }

    #[test]
    fn surrogate_inverse_stays_positive_definite() {
        let s = surrogates(15);
        for k in 0..200 {
            let l = LP.from_unit((k as f64 + 0.5) / 200.0);
            let inv = s.unit_inv(l).unwrap();
            assert!(symmetric_eigen_desc(inv).values[7] > 0.0, "l = {l}");
        }
    }

    #[test]
    fn point_mass_length_gives_constant() {
        let fixed = LengthPrior::Fixed { value: 0.3 };
        let s = PriorSurrogates::build(td_prior(), &fixed, 15).unwrap();
        let exact = td_prior().unit_spectrum(0.3).unwrap();
        for l in [0.1, 0.3, 0.6] {
            assert!((s.unit_sqrt(l).unwrap() - exact.power(0.5)).amax() < 1e-12);
            assert!((s.unit_logdet(l).unwrap() - exact.logdet()).abs() < 1e-12);
        }
    }

    #[test]
    fn amplitude_restored_analytically() {
        let s = surrogates(7);
        let a = s.logdet(HyperParams::new(2.0, 0.3)).unwrap();
        let b = s.logdet(HyperParams::new(1.0, 0.3)).unwrap();
        assert!((a - b - 8.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bundle_roundtrip() {
        let s = surrogates(3);
        let dir = tempfile::tempdir().unwrap();
        s.write(dir.path()).unwrap();
        assert_eq!(&PriorSurrogates::read(dir.path()).unwrap(), s);
    }

    #[test]
    fn coc_surrogate_reproduces_mercer_factor() {
        let c = CocSurrogate::build(td_prior(), &LP, 15, 32).unwrap();
        for l in [0.12, 0.3, 0.65] {
            let q = HyperParams::new(0.5, l);
            let exact = td_prior().coc_matrix(q, 32, 8).unwrap();
            let approx = c.matrix(q).unwrap();
            let bbt = &exact * exact.transpose();
            let err = (&approx * approx.transpose() - &bbt).norm() / bbt.norm();
            assert!(err < 1e-2, "l = {l}: {err}");
            for j in 0..8 {
                let e = exact.column(j);
                let a = approx.column(j);
                let diff = (a - e).norm().min((a + e).norm());
                assert!(diff < 2e-2 * exact.norm(), "l = {l}, column {j}: {diff}");
            }
        }
    }
}
