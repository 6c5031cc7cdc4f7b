//! Polynomial-chaos surrogates: input maps, evaluation, gradients, RRMSE and
//! the surrogate bundle format.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::grid::{MultiIndexSet, ProjectionGrid};
use super::polynomials::Family;
use crate::binio::{BinReader, BinWriter};
use crate::error::{check_len, Error, Result};

/// Map from a physical input to its germ variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputMap {
    /// Standard normal input, germ equal to the input.
    Gaussian,
    /// Uniform on `[lo, hi]`, mapped affinely to `[-1, 1]`.
    Uniform { lo: f64, hi: f64 },
    /// Log-uniform on `[lo, hi]`, mapped through `ln` to `[-1, 1]`.
    LogUniform { lo: f64, hi: f64 },
    /// Degenerate input; the germ is always 0.
    Fixed { value: f64 },
}

impl InputMap {
    pub fn family(&self) -> Family {
        match self {
            InputMap::Gaussian => Family::Hermite,
            _ => Family::Legendre,
        }
    }

    pub fn to_germ(&self, x: f64) -> f64 {
        match *self {
            InputMap::Gaussian => x,
            InputMap::Uniform { lo, hi } => 2.0 * (x - lo) / (hi - lo) - 1.0,
            InputMap::LogUniform { lo, hi } => 2.0 * (x.ln() - lo.ln()) / (hi.ln() - lo.ln()) - 1.0,
            InputMap::Fixed { .. } => 0.0,
        }
    }

    pub fn from_germ(&self, z: f64) -> f64 {
        match *self {
            InputMap::Gaussian => z,
            InputMap::Uniform { lo, hi } => lo + 0.5 * (z + 1.0) * (hi - lo),
            InputMap::LogUniform { lo, hi } => (lo.ln() + 0.5 * (z + 1.0) * (hi.ln() - lo.ln())).exp(),
            InputMap::Fixed { value } => value,
        }
    }

    /// `dz/dx`.
    pub fn germ_derivative(&self, x: f64) -> f64 {
        match *self {
            InputMap::Gaussian => 1.0,
            InputMap::Uniform { lo, hi } => 2.0 / (hi - lo),
            InputMap::LogUniform { lo, hi } => 2.0 / (x * (hi.ln() - lo.ln())),
            InputMap::Fixed { .. } => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InputMap::Gaussian => rng.sample(StandardNormal),
            InputMap::Fixed { value } => *value,
            _ => self.from_germ(rng.random_range(-1.0..1.0)),
        }
    }

    fn tag(&self) -> (u64, f64, f64) {
        match *self {
            InputMap::Gaussian => (0, 0.0, 0.0),
            InputMap::Uniform { lo, hi } => (1, lo, hi),
            InputMap::LogUniform { lo, hi } => (2, lo, hi),
            InputMap::Fixed { value } => (3, value, value),
        }
    }

    fn from_tag(tag: u64, a: f64, b: f64) -> Result<Self> {
        Ok(match tag {
            0 => InputMap::Gaussian,
            1 => InputMap::Uniform { lo: a, hi: b },
            2 => InputMap::LogUniform { lo: a, hi: b },
            3 => InputMap::Fixed { value: a },
            t => return Err(Error::Format(format!("unknown input map tag {t}"))),
        })
    }
}

/// `f(x) ≈ Σ_a f_a Ψ_a(z(x))` for a vector-valued `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct PCSurrogate {
    pub inputs: Vec<InputMap>,
    pub multi_indices: MultiIndexSet,
    /// Outputs × terms.
    pub coeffs: DMatrix<f64>,
    terms: Vec<Vec<(u16, u16)>>,
    max_degree: Vec<usize>,
}

impl PCSurrogate {
    pub fn new(inputs: Vec<InputMap>, multi_indices: MultiIndexSet, coeffs: DMatrix<f64>) -> Result<Self> {
        check_len("surrogate inputs", multi_indices.dim, inputs.len())?;
        check_len("surrogate coefficients", multi_indices.len(), coeffs.ncols())?;
        let terms = multi_indices
            .indices
            .iter()
            .map(|a| {
                a.iter()
                    .enumerate()
                    .filter(|(_, &d)| d > 0)
                    .map(|(k, &d)| (k as u16, d))
                    .collect()
            })
            .collect();
        let max_degree = multi_indices.max_degree();
        Ok(Self {
            inputs,
            multi_indices,
            coeffs,
            terms,
            max_degree,
        })
    }

    /// Projects node values (nodes × outputs, row-major) on `grid`.
    pub fn from_projection(inputs: Vec<InputMap>, grid: &ProjectionGrid, values: &[f64], outputs: usize) -> Result<Self> {
        for (m, f) in inputs.iter().zip(&grid.families) {
            if m.family() != *f {
                return Err(Error::Invalid(format!("input map {m:?} does not match family {f:?}")));
            }
        }
        let c = grid.project(values, outputs)?;
        let coeffs = DMatrix::from_fn(outputs, grid.num_terms(), |o, a| c[a * outputs + o]);
        Self::new(inputs, grid.multi_indices.clone(), coeffs)
    }

    pub fn dim(&self) -> usize {
        self.inputs.len()
    }

    pub fn outputs(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn num_terms(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Physical input of the grid node `z`.
    pub fn node_input(&self, z: &[f64]) -> Vec<f64> {
        self.inputs.iter().zip(z).map(|(m, &v)| m.from_germ(v)).collect()
    }

    fn basis_values(&self, x: &[f64]) -> Vec<f64> {
        let tables: Vec<Vec<f64>> = self
            .inputs
            .iter()
            .zip(x)
            .zip(&self.max_degree)
            .map(|((m, &xv), &deg)| {
                let mut buf = vec![0.0; deg + 1];
                m.family().eval_upto(deg, m.to_germ(xv), &mut buf);
                buf
            })
            .collect();
        self.terms
            .iter()
            .map(|t| t.iter().map(|&(k, d)| tables[k as usize][d as usize]).product())
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("surrogate_eval", self.dim(), x.len())?;
        let psi = self.basis_values(x);
        let mut out = vec![0.0; self.outputs()];
        for (a, p) in psi.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            for (o, c) in out.iter_mut().zip(self.coeffs.column(a).iter()) {
                *o += p * c;
            }
        }
        Ok(out)
    }

    /// Jacobian with respect to the physical inputs, outputs × inputs.
    pub fn gradient(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_len("surrogate gradient", self.dim(), x.len())?;
        let mut vals = Vec::with_capacity(self.dim());
        let mut ders = Vec::with_capacity(self.dim());
        for ((m, &xv), &deg) in self.inputs.iter().zip(x).zip(&self.max_degree) {
            let mut v = vec![0.0; deg + 1];
            let mut d = vec![0.0; deg + 1];
            m.family().eval_with_derivative(deg, m.to_germ(xv), &mut v, &mut d);
            let scale = m.germ_derivative(xv);
            d.iter_mut().for_each(|e| *e *= scale);
            vals.push(v);
            ders.push(d);
        }
        let mut jac = DMatrix::zeros(self.outputs(), self.dim());
        for (a, t) in self.terms.iter().enumerate() {
            for (pos, &(k, dk)) in t.iter().enumerate() {
                let mut g = ders[k as usize][dk as usize];
                for (other, &(j, dj)) in t.iter().enumerate() {
                    if other != pos {
                        g *= vals[j as usize][dj as usize];
                    }
                }
                if g == 0.0 {
                    continue;
                }
                let mut col = jac.column_mut(k as usize);
                col.axpy(g, &self.coeffs.column(a), 1.0);
            }
        }
        Ok(jac)
    }

    pub fn sample_inputs<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.inputs.iter().map(|m| m.sample(rng)).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(BufWriter::new(File::create(path)?), SURROGATE_MAGIC)?;
        w.u64(self.dim() as u64)?;
        for m in &self.inputs {
            let (t, a, b) = m.tag();
            w.u64(t)?;
            w.f64(a)?;
            w.f64(b)?;
        }
        w.u64(self.num_terms() as u64)?;
        let mut flat = Vec::with_capacity(self.num_terms() * self.dim() * 2);
        for a in &self.multi_indices.indices {
            for d in a {
                flat.extend_from_slice(&d.to_le_bytes());
            }
        }
        w.bytes(&flat)?;
        w.u64(self.outputs() as u64)?;
        w.f64s(self.coeffs.as_slice())?;
        w.finish()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rd = BinReader::new(BufReader::new(File::open(path)?), SURROGATE_MAGIC)?;
        let dim = rd.usize()?;
        let mut inputs = Vec::with_capacity(dim);
        for _ in 0..dim {
            let t = rd.u64()?;
            let a = rd.f64()?;
            let b = rd.f64()?;
            inputs.push(InputMap::from_tag(t, a, b)?);
        }
        let nterms = rd.usize()?;
        let flat = rd.bytes()?;
        check_len("surrogate bundle multi-indices", nterms * dim * 2, flat.len())?;
        let indices = flat
            .chunks(dim.max(1) * 2)
            .take(nterms)
            .map(|row| row.chunks(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect())
            .collect();
        let outputs = rd.usize()?;
        let data = rd.f64s()?;
        check_len("surrogate bundle coefficients", outputs * nterms, data.len())?;
        Self::new(inputs, MultiIndexSet { dim, indices }, DMatrix::from_vec(outputs, nterms, data))
    }
}

const SURROGATE_MAGIC: &[u8; 8] = b"FIVPCE01";

/// `sqrt(Σ ‖f - f̃‖² / Σ ‖f‖²)` over paired target/prediction vectors.
pub fn rrmse_pairs<'a>(pairs: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut count = 0usize;
    for (f, g) in pairs {
        check_len("rrmse", f.len(), g.len())?;
        num += f.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        den += f.iter().map(|a| a * a).sum::<f64>();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Invalid("rrmse needs at least one validation sample".into()));
    }
    if den == 0.0 {
        return Err(Error::Invalid("rrmse undefined for all-zero targets".into()));
    }
    Ok((num / den).sqrt())
}

/// RRMSE of `s` against `target` over the validation inputs.
pub fn rrmse(s: &PCSurrogate, target: impl Fn(&[f64]) -> Result<Vec<f64>>, validation: &[Vec<f64>]) -> Result<f64> {
    let mut truth = Vec::with_capacity(validation.len());
    let mut pred = Vec::with_capacity(validation.len());
    for x in validation {
        truth.push(target(x)?);
        pred.push(s.eval(x)?);
    }
    rrmse_pairs(truth.iter().zip(&pred).map(|(a, b)| (a.as_slice(), b.as_slice())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cubic_surrogate() -> PCSurrogate {
        let inputs = vec![InputMap::Gaussian, InputMap::Uniform { lo: 2.0, hi: 5.0 }, InputMap::LogUniform { lo: 0.1, hi: 0.7 }];
        let fam: Vec<Family> = inputs.iter().map(|m| m.family()).collect();
        let grid = ProjectionGrid::smolyak(&fam, 2).unwrap();
        let s0 = PCSurrogate::from_projection(inputs.clone(), &grid, &vec![0.0; grid.num_nodes() * 2], 2).unwrap();
        let f = |x: &[f64]| vec![x[0] * x[0] * x[0] - x[1] * x[0], (x[1] - 3.0) * x[2].ln()];
        let mut vals = Vec::new();
        for z in &grid.nodes {
            vals.extend(f(&s0.node_input(z)));
        }
        PCSurrogate::from_projection(inputs, &grid, &vals, 2).unwrap()
    }

    #[test]
    fn constant_surrogate() {
        let grid = ProjectionGrid::smolyak(&[Family::Hermite; 3], 2).unwrap();
        let s = PCSurrogate::from_projection(vec![InputMap::Gaussian; 3], &grid, &vec![4.5; grid.num_nodes()], 1).unwrap();
        for x in [[0.0, 0.0, 0.0], [1.0, -2.0, 3.0]] {
            assert!((s.eval(&x).unwrap()[0] - 4.5).abs() < 1e-12);
        }
    }

    #[test]
    fn polynomial_target_is_reproduced() {
        let s = cubic_surrogate();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = s.sample_inputs(&mut rng);
            let v = s.eval(&x).unwrap();
            assert!((v[0] - (x[0].powi(3) - x[1] * x[0])).abs() < 1e-9);
        }
    }

    #[test]
    fn node_values_reproduced() {
        let s = cubic_surrogate();
        let grid = ProjectionGrid::smolyak(&[Family::Hermite, Family::Legendre, Family::Legendre], 2).unwrap();
        for z in &grid.nodes {
            let x = s.node_input(z);
            let v = s.eval(&x).unwrap();
            assert!((v[0] - (x[0].powi(3) - x[1] * x[0])).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = cubic_surrogate();
        let x = [0.3, 3.1, 0.25];
        let jac = s.gradient(&x).unwrap();
        for k in 0..3 {
            let h = 1e-6 * x[k].abs().max(1.0);
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fp = s.eval(&xp).unwrap();
            let fm = s.eval(&xm).unwrap();
            for o in 0..2 {
                let fd = (fp[o] - fm[o]) / (2.0 * h);
                assert!((fd - jac[(o, k)]).abs() < 1e-6 * (1.0 + fd.abs()), "({o},{k}) {fd} vs {}", jac[(o, k)]);
            }
        }
    }

    #[test]
    fn rrmse_cases() {
        let s = cubic_surrogate();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let val: Vec<Vec<f64>> = (0..50).map(|_| s.sample_inputs(&mut rng)).collect();
        assert!(rrmse(&s, |x| s.eval(x), &val).unwrap() == 0.0);
        assert!(rrmse(&s, |_| Ok(vec![0.0, 0.0]), &val).is_err());
        assert!(rrmse(&s, |x| s.eval(x), &[]).is_err());
    }

    #[test]
    fn bundle_roundtrip() {
        let s = cubic_surrogate();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        s.write(&p).unwrap();
        assert_eq!(PCSurrogate::read(&p).unwrap(), s);
    }

    #[test]
    fn input_maps_invert() {
        for m in [InputMap::Uniform { lo: 6.9, hi: 8.1 }, InputMap::LogUniform { lo: 0.1, hi: 0.7 }] {
            for z in [-1.0, -0.3, 0.0, 0.8, 1.0] {
                assert!((m.to_germ(m.from_germ(z)) - z).abs() < 1e-12);
            }
        }
    }
}
