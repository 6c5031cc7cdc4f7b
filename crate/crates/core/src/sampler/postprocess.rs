//! Field quantile maps from a chain, optionally augmented with conditional
//! draws of the next `K` coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chain::Chain;
use super::posterior::Posterior;
use crate::com_prior::{AugmentedPrior, ComPrior};
use crate::discretization::ReferenceBasis;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    #[default]
    Posterior,
    Likelihood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostConfig {
    /// Extra coordinates drawn conditionally on the retained ones.
    pub k: usize,
    pub stride: usize,
    pub map_mode: MapMode,
    pub seed: u64,
}

impl Default for PostConfig {
    fn default() -> Self {
        Self {
            k: 0,
            stride: 10,
            map_mode: MapMode::Posterior,
            seed: 1,
        }
    }
}

pub const QUANTILES: [f64; 5] = [0.01, 0.05, 0.5, 0.95, 0.99];

/// Nodal summaries; `quantiles[j]` is the field at level `QUANTILES[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub quantiles: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub map: Vec<f64>,
    pub map_step: u64,
    pub fields_used: usize,
}

impl FieldSummary {
    pub fn median(&self) -> &[f64] {
        &self.quantiles[2]
    }

    /// Fraction of `nodes` where `truth` lies inside the `[lo, hi]` quantile band.
    pub fn coverage(&self, truth: &[f64], lo: usize, hi: usize, nodes: &[usize]) -> f64 {
        let inside = nodes
            .iter()
            .filter(|&&i| truth[i] >= self.quantiles[lo][i] && truth[i] <= self.quantiles[hi][i])
            .count();
        inside as f64 / nodes.len() as f64
    }

    pub fn band_width(&self, lo: usize, hi: usize, nodes: &[usize]) -> f64 {
        nodes.iter().map(|&i| self.quantiles[hi][i] - self.quantiles[lo][i]).sum::<f64>() / nodes.len() as f64
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let i = (h.floor() as usize).min(n - 2);
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

/// Reconstructs fields for every `stride`-th stored state. With `k > 0`,
/// `augment` must hold the rank-`r + k` prior; each state draws its tail from
/// its own seeded stream so results do not depend on thread scheduling.
pub fn postprocess(post: &Posterior, chain: &Chain, basis: &ReferenceBasis, augment: Option<&ComPrior>, cfg: &PostConfig) -> Result<FieldSummary> {
    if chain.samples.is_empty() {
        return Err(Error::Invalid("empty chain".into()));
    }
    if cfg.stride == 0 {
        return Err(Error::Invalid("stride must be >= 1".into()));
    }
    let r = post.layout.r;
    if cfg.k > 0 {
        let aug = augment.ok_or_else(|| Error::Invalid("augmentation needs the extended prior".into()))?;
        if aug.rank() != r + cfg.k {
            return Err(Error::DimensionMismatch {
                context: "augmented prior rank",
                expected: r + cfg.k,
                got: aug.rank(),
            });
        }
    }
    let picked: Vec<(usize, &super::chain::Sample)> = chain.samples.iter().enumerate().step_by(cfg.stride).collect();
    let fields: Vec<Vec<f64>> = picked
        .par_iter()
        .map(|(idx, s)| {
            let (_, q, trend, _) = post.layout.unpack(&post.spec, &s.theta);
            let mut xi = post.coordinates(&s.theta)?;
            if cfg.k > 0 {
                let aug = augment.expect("checked above");
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (*idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let tail = AugmentedPrior::from_sigma(&aug.sigma(q)?, r)?.draw(&xi, &mut rng)?;
                xi.extend(tail);
            }
            basis.reconstruct_any(&xi, trend.unwrap_or(0.0))
        })
        .collect::<Result<_>>()?;
    let n_nodes = fields[0].len();
    let mut quantiles = vec![vec![0.0; n_nodes]; QUANTILES.len()];
    let mut mean = vec![0.0; n_nodes];
    let mut column = vec![0.0; fields.len()];
    for node in 0..n_nodes {
        for (c, f) in column.iter_mut().zip(&fields) {
            *c = f[node];
        }
        mean[node] = column.iter().sum::<f64>() / column.len() as f64;
        column.sort_by(f64::total_cmp);
        for (qi, p) in QUANTILES.iter().enumerate() {
            quantiles[qi][node] = quantile_sorted(&column, *p);
        }
    }
    let key = |s: &super::chain::Sample| match cfg.map_mode {
        MapMode::Posterior => s.logpost,
        MapMode::Likelihood => s.loglik,
    };
    let best = chain
        .samples
        .iter()
        .max_by(|a, b| key(a).total_cmp(&key(b)))
        .expect("non-empty chain");
    let (_, _, trend, _) = post.layout.unpack(&post.spec, &best.theta);
    let map = basis.reconstruct_any(&post.coordinates(&best.theta)?, trend.unwrap_or(0.0))?;
    Ok(FieldSummary {
        quantiles,
        mean,
        map,
        map_step: best.step,
        fields_used: fields.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{build_reference_basis, SpatialGrid};
    use crate::kernels::{AmplitudePrior, HyperParams, HyperPriorSpec, HyperQuadrature, KernelKind, LengthPrior, NoisePrior};
    use crate::sampler::chain::Sample;
    use crate::sampler::posterior::{ExactPrior, FnForward, Mode};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn spec() -> HyperPriorSpec {
        HyperPriorSpec {
            amplitude: AmplitudePrior::InvGamma { shape: 3.0, scale: 1.0 },
            length: LengthPrior::LogUniform { lo: 0.1, hi: 0.7 },
            trend: None,
            noise: NoisePrior::Fixed { value: 0.1 },
        }
    }

    fn basis() -> ReferenceBasis {
        let grid = SpatialGrid::uniform_1d(0.0, 1.0, 101).unwrap();
        let hq = HyperQuadrature::analytic_amplitude(&spec(), 64).unwrap();
        build_reference_basis(KernelKind::SquaredExponential, &grid, 6, 12, &hq).unwrap()
    }

    fn chain_of(thetas: Vec<Vec<f64>>) -> Chain {
        Chain {
            names: vec![],
            mode: Mode::Com,
            seed: 0,
            samples: thetas
                .into_iter()
                .enumerate()
                .map(|(i, theta)| Sample {
                    step: i as u64,
                    theta,
                    logpost: -(i as f64 - 3.0).powi(2),
                    loglik: -(i as f64 - 1.0).powi(2),
                    accepted: true,
                })
                .collect(),
            burn_in_accepted: 0,
            burn_in_steps: 0,
            accepted: 0,
            steps: 0,
            proposal_history: vec![],
        }
    }

    #[test]
    fn single_state_chain() {
        let b = basis();
        let prior = ComPrior::new(b.clone());
        let exact = ExactPrior(&prior);
        let fwd = FnForward(|_: &[f64], _| Ok(vec![]));
        let post = Posterior::new(spec(), vec![], Mode::Com, &fwd, &exact, None).unwrap();
        let theta = post.layout.pack(&[0.5, -1.0, 0.3, 0.0, 0.2, 0.1], HyperParams::new(0.4, 0.2), None, 0.1);
        let s = postprocess(&post, &chain_of(vec![theta.clone()]), &b, None, &PostConfig { stride: 1, ..Default::default() }).unwrap();
        let want = b.reconstruct_field(&post.coordinates(&theta).unwrap(), 0.0).unwrap();
        for q in &s.quantiles {
            assert_eq!(q, &want);
        }
        assert_eq!(s.map, want);
    }

    #[test]
    fn map_mode_selects_state() {
        let b = basis();
        let prior = ComPrior::new(b.clone());
        let exact = ExactPrior(&prior);
        let fwd = FnForward(|_: &[f64], _| Ok(vec![]));
        let post = Posterior::new(spec(), vec![], Mode::Com, &fwd, &exact, None).unwrap();
        let thetas: Vec<Vec<f64>> = (0..6).map(|i| post.layout.pack(&[i as f64 * 0.1; 6], HyperParams::new(0.4, 0.2), None, 0.1)).collect();
        let c = chain_of(thetas);
        let a = postprocess(&post, &c, &b, None, &PostConfig { stride: 1, ..Default::default() }).unwrap();
        assert_eq!(a.map_step, 3);
        let l = postprocess(&post, &c, &b, None, &PostConfig { stride: 1, map_mode: MapMode::Likelihood, ..Default::default() }).unwrap();
        assert_eq!(l.map_step, 1);
    }

    #[test]
    fn prior_variance_oracle() {
        // iid hierarchical prior draws: E_H[Σ] = I gives Var g(x) = Σ λ_i u_i(x)²
        let b = basis();
        let big = b.truncated(b.r + 4, b.stored_rank()).unwrap();
        let prior = ComPrior::new(b.clone());
        let aug = ComPrior::with_rank(b.clone(), b.r + 4).unwrap();
        let exact = ExactPrior(&prior);
        let fwd = FnForward(|_: &[f64], _| Ok(vec![]));
        let post = Posterior::new(spec(), vec![], Mode::Com, &fwd, &exact, None).unwrap();
        let lp = spec().length;
        let gamma = rand_distr::Gamma::new(3.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20_000;
        let thetas: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a = 1.0 / rng.sample::<f64, _>(gamma);
                let l = lp.from_unit(rng.random());
                let xb: Vec<f64> = (0..6).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                post.layout.pack(&xb, HyperParams::new(a, l), None, 0.1)
            })
            .collect();
        let chain = chain_of(thetas);
        let cfg = PostConfig { k: 4, stride: 1, ..Default::default() };
        // sample variance from the reconstructed fields directly
        let fields: Vec<Vec<f64>> = chain
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let (_, q, _, _) = post.layout.unpack(&post.spec, &s.theta);
                let mut xi = post.coordinates(&s.theta).unwrap();
                let mut r2 = ChaCha8Rng::seed_from_u64(i as u64);
                xi.extend(AugmentedPrior::from_sigma(&aug.sigma(q).unwrap(), 6).unwrap().draw(&xi, &mut r2).unwrap());
                b.reconstruct_any(&xi, 0.0).unwrap()
            })
            .collect();
        let summary = postprocess(&post, &chain, &b, Some(&aug), &cfg).unwrap();
        assert_eq!(summary.fields_used, n);
        for node in (0..101).step_by(10) {
            let var: f64 = fields.iter().map(|f| f[node] * f[node]).sum::<f64>() / n as f64;
            let want: f64 = (0..big.r).map(|i| big.eigvals[i] * big.eigvecs[(node, i)].powi(2)).sum();
            // heavy-tailed amplitude: tolerance from the empirical fourth moment
            let m4: f64 = fields.iter().map(|f| f[node].powi(4)).sum::<f64>() / n as f64;
            let se = ((m4 - var * var) / n as f64).sqrt();
            assert!((var - want).abs() < 3.0 * se, "node {node}: {var} vs {want} (se {se})");
            assert!(summary.mean[node].abs() < 4.0 * (var / n as f64).sqrt());
        }
    }

    #[test]
    fn truncated_quantiles_without_augmentation() {
        let b = basis();
        let prior = ComPrior::new(b.clone());
        let exact = ExactPrior(&prior);
        let fwd = FnForward(|_: &[f64], _| Ok(vec![]));
        let post = Posterior::new(spec(), vec![], Mode::Com, &fwd, &exact, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let thetas: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let xb: Vec<f64> = (0..6).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                post.layout.pack(&xb, HyperParams::new(0.5, 0.3), None, 0.1)
            })
            .collect();
        let s = postprocess(&post, &chain_of(thetas), &b, None, &PostConfig { stride: 2, ..Default::default() }).unwrap();
        assert_eq!(s.fields_used, 100);
        for i in 0..101 {
            for w in s.quantiles.windows(2) {
                assert!(w[0][i] <= w[1][i]);
            }
        }
    }

    #[test]
    fn quantile_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
        assert!((quantile_sorted(&v, 0.1) - 1.4).abs() < 1e-12);
    }
}
