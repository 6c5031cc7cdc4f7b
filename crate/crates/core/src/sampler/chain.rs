//! Adaptive random-walk Metropolis–Hastings with checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::posterior::{ChainState, Mode, Posterior};
use crate::error::{Error, Result};

/// `(2.38² / dim)` scaling of the adapted proposal.
pub fn optimal_scale(dim: usize) -> f64 {
    2.38 * 2.38 / dim as f64
}

pub const ADAPT_JITTER: f64 = 1e-8;
pub const MIN_WINDOW: usize = 100;
/// Burn-in acceptance the global proposal scale is steered towards.
pub const TARGET_ACCEPTANCE: f64 = 0.234;

/// Robbins–Monro gain for the log proposal scale at burn-in step `n`.
fn scale_gain(n: u64) -> f64 {
    0.5 * (1.0 + n as f64 / 100.0).powf(-0.6)
}

/// Running first and second moments of burn-in states.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub sum: Vec<f64>,
    /// Row-major sum of outer products.
    pub outer: Vec<f64>,
}

impl Moments {
    pub fn push(&mut self, x: &[f64]) {
        let d = x.len();
        if self.n == 0 {
            self.sum = vec![0.0; d];
            self.outer = vec![0.0; d * d];
        }
        self.n += 1;
        for i in 0..d {
            self.sum[i] += x[i];
            for j in 0..d {
                self.outer[i * d + j] += x[i] * x[j];
            }
        }
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    /// `(2.38²/dim)(cov + 1e-8 I)`, or `None` when fewer than `MIN_WINDOW`
    /// states were pushed or a coordinate is constant.
    pub fn proposal(&self) -> Option<DMatrix<f64>> {
        if self.n < MIN_WINDOW {
            return None;
        }
        let d = self.sum.len();
        let n = self.n as f64;
        let cov = DMatrix::from_fn(d, d, |i, j| (self.outer[i * d + j] - self.sum[i] * self.sum[j] / n) / (n - 1.0));
        if (0..d).any(|i| !(cov[(i, i)] > 1e-14 * (self.sum[i] / n).powi(2))) {
            return None;
        }
        let prop = (cov + DMatrix::identity(d, d) * ADAPT_JITTER) * optimal_scale(d);
        prop.clone().cholesky().map(|_| prop)
    }
}

/// Adapted proposal of a window of states; see [`Moments::proposal`].
pub fn adapt_proposal(window: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let mut m = Moments::default();
    for w in window {
        m.push(w);
    }
    m.proposal()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub steps: u64,
    pub burn_in: u64,
    pub adapt_interval: u64,
    pub thin: u64,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            steps: 200_000,
            burn_in: 50_000,
            adapt_interval: 5_000,
            thin: 10,
            seed: 1,
            checkpoint_every: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.adapt_interval == 0 {
            return Err(Error::Invalid("thinning and adaptation interval must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub step: u64,
    pub theta: Vec<f64>,
    pub logpost: f64,
    pub loglik: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub names: Vec<String>,
    pub mode: Mode,
    pub seed: u64,
    /// Thinned post-burn-in states.
    pub samples: Vec<Sample>,
    pub burn_in_accepted: u64,
    pub burn_in_steps: u64,
    pub accepted: u64,
    pub steps: u64,
    /// Row-major proposal covariances, the initial one first.
    pub proposal_history: Vec<Vec<f64>>,
}

impl Chain {
    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }

    pub fn burn_in_acceptance_rate(&self) -> f64 {
        if self.burn_in_steps == 0 {
            0.0
        } else {
            self.burn_in_accepted as f64 / self.burn_in_steps as f64
        }
    }

    pub fn thetas(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.theta.clone()).collect()
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u64,
    pub state: ChainState,
    pub proposal: Vec<f64>,
    pub rng: ChaCha8Rng,
    pub moments: Moments,
    /// Log of the global factor on the proposal standard deviations.
    pub log_scale: f64,
    pub chain: Chain,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Checkpoint location and an optional early stop (for interruption tests).
#[derive(Debug, Clone, Default)]
pub struct RunControl {
    pub checkpoint: Option<PathBuf>,
    pub stop_after: Option<u64>,
}

/// Cholesky factor of an SPD proposal covariance.
fn factor(prop: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    prop.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite {
            context: "proposal covariance".into(),
            min_eig: f64::NAN,
        })
}

/// One Metropolis–Hastings step; returns whether the proposal was accepted.
pub fn mh_step<R: Rng + ?Sized>(
    post: &Posterior,
    state: &mut ChainState,
    chol: &DMatrix<f64>,
    rng: &mut R,
    step: u64,
) -> Result<bool> {
    let d = state.theta.len();
    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let delta = chol * z;
    let proposal: Vec<f64> = state.theta.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
    // the uniform is always drawn so RNG streams stay aligned across modes
    let u: f64 = rng.random();
    let Some(cand) = post.evaluate(&proposal)? else {
        return Ok(false);
    };
    if cand.logpost.is_nan() {
        return Err(Error::NonFinite {
            step,
            detail: format!("posterior is NaN at {:?}", cand.theta),
        });
    }
    let log_ratio = cand.log_target(post.mode, &post.layout) - state.log_target(post.mode, &post.layout);
    if u.ln() < log_ratio {
        *state = cand;
        Ok(true)
    } else {
        Ok(false)
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_rows(v: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, v)
}

/// Runs burn-in with covariance adaptation every `adapt_interval` steps and a
/// per-step global scale update towards `TARGET_ACCEPTANCE`, then
/// fixed-proposal sampling. The stored proposal history includes the scale. With a checkpoint path, an existing checkpoint is
/// resumed and progress is saved every `checkpoint_every` steps.
pub fn run_chain(post: &Posterior, cfg: &McmcConfig, init: &[f64], init_proposal: &DMatrix<f64>, ctl: &RunControl) -> Result<Chain> {
    cfg.validate()?;
    let d = post.layout.dim();
    let total = cfg.burn_in + cfg.steps;
    let resumed = match &ctl.checkpoint {
        Some(p) if p.exists() => Some(Checkpoint::read(p)?),
        _ => None,
    };
    let (mut step, mut state, mut proposal, mut rng, mut moments, mut log_scale, mut chain) = match resumed {
        Some(c) => (c.step, c.state, from_rows(&c.proposal, d), c.rng, c.moments, c.log_scale, c.chain),
        None => {
            let state = post
                .evaluate(init)?
                .ok_or_else(|| Error::Invalid("initial state outside the prior support".into()))?;
            let chain = Chain {
                names: post.layout.names(post.mode),
                mode: post.mode,
                seed: cfg.seed,
                samples: Vec::new(),
                burn_in_accepted: 0,
                burn_in_steps: 0,
                accepted: 0,
                steps: 0,
                proposal_history: vec![to_rows(init_proposal)],
            };
            (0, state, init_proposal.clone(), ChaCha8Rng::seed_from_u64(cfg.seed), Moments::default(), 0.0, chain)
        }
    };
    let mut chol = factor(&proposal)?;
    let mut scaled = &chol * log_scale.exp();
    while step < total {
        if ctl.stop_after.is_some_and(|s| step >= s) {
            break;
        }
        step += 1;
        let accepted = mh_step(post, &mut state, &scaled, &mut rng, step)?;
        if step <= cfg.burn_in {
            chain.burn_in_steps += 1;
            chain.burn_in_accepted += accepted as u64;
            log_scale = (log_scale + scale_gain(step) * (accepted as u8 as f64 - TARGET_ACCEPTANCE)).clamp(-10.0, 10.0);
            moments.push(&state.theta);
            // the last interval only tunes the scale; moments pool over the second half
            if step % cfg.adapt_interval == 0 && step + cfg.adapt_interval <= cfg.burn_in {
                if let Some(p) = moments.proposal() {
                    proposal = p;
                    chol = factor(&proposal)?;
                    chain.proposal_history.push(to_rows(&(&proposal * (2.0 * log_scale).exp())));
                }
                if 2 * step <= cfg.burn_in {
                    moments.clear();
                }
            }
            scaled = &chol * log_scale.exp();
            if step == cfg.burn_in {
                moments.clear();
                chain.proposal_history.push(to_rows(&(&proposal * (2.0 * log_scale).exp())));
            }
        } else {
            chain.steps += 1;
            chain.accepted += accepted as u64;
            if (step - cfg.burn_in) % cfg.thin == 0 {
                chain.samples.push(Sample {
                    step,
                    theta: state.theta.clone(),
                    logpost: state.logpost,
                    loglik: state.loglik,
                    accepted,
                });
            }
        }
        if let Some(path) = &ctl.checkpoint {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                Checkpoint {
                    step,
                    state: state.clone(),
                    proposal: to_rows(&proposal),
                    rng: rng.clone(),
                    moments: moments.clone(),
                    log_scale,
                    chain: chain.clone(),
                }
                .write(path)?;
            }
        }
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{AmplitudePrior, HyperParams, HyperPriorSpec, LengthPrior, NoisePrior};
    use crate::sampler::posterior::{CocModel, FnForward, PriorEval, PriorModel};
    use crate::Result;

    /// Identity prior of rank `r`, i.e. the point-mass hierarchy.
    struct Identity(usize);

    impl PriorModel for Identity {
        fn rank(&self) -> usize {
            self.0
        }
        fn eval(&self, _q: HyperParams) -> Result<PriorEval> {
            Ok(PriorEval {
                sqrt: DMatrix::identity(self.0, self.0),
                inv: DMatrix::identity(self.0, self.0),
                logdet: 0.0,
            })
        }
    }

    impl CocModel for Identity {
        fn matrix(&self, _q: HyperParams) -> Result<DMatrix<f64>> {
            Ok(DMatrix::identity(self.0, self.0))
        }
    }

    fn point_spec() -> HyperPriorSpec {
        HyperPriorSpec {
            amplitude: AmplitudePrior::Fixed { value: 1.0 },
            length: LengthPrior::Fixed { value: 0.3 },
            trend: None,
            noise: NoisePrior::Fixed { value: 0.5 },
        }
    }

    /// Linear-Gaussian toy: prior N(0, I₂), data y = G x + N(0, 0.5²).
    fn toy_forward() -> FnForward<impl Fn(&[f64], Option<f64>) -> Result<Vec<f64>> + Sync> {
        FnForward(|x: &[f64], _| Ok(vec![x[0] + 0.5 * x[1], x[1] - 0.3 * x[0], 0.8 * x[0]]))
    }

    fn toy_posterior_moments(data: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 1.0, 0.8, 0.0]);
        let prec = DMatrix::identity(2, 2) + g.transpose() * &g / 0.25;
        let cov = prec.try_inverse().unwrap();
        let mean = &cov * g.transpose() * DVector::from_column_slice(data) / 0.25;
        (mean, cov)
    }

    #[test]
    fn adapt_iid_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let window: Vec<Vec<f64>> = (0..20_000).map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let p = adapt_proposal(&window).unwrap();
        let target = optimal_scale(3);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { target } else { 0.0 };
                assert!((p[(i, j)] - want).abs() < 0.05 * target, "{p}");
            }
        }
    }

    #[test]
    fn adapt_constant_window_keeps_previous() {
        let window = vec![vec![1.0, 2.0]; 500];
        assert!(adapt_proposal(&window).is_none());
        assert!(adapt_proposal(&window[..50]).is_none());
    }

    #[test]
    fn gaussian_toy_moments() {
        let data = [0.7, -0.4, 1.1];
        let fwd = toy_forward();
        let prior = Identity(2);
        let post = Posterior::new(point_spec(), data.to_vec(), Mode::Com, &fwd, &prior, None).unwrap();
        let cfg = McmcConfig {
            steps: 100_000,
            burn_in: 5_000,
            adapt_interval: 1_000,
            thin: 1,
            seed: 17,
            checkpoint_every: 0,
        };
        let chain = run_chain(&post, &cfg, &[0.0, 0.0], &(DMatrix::identity(2, 2) * 0.3), &RunControl::default()).unwrap();
        let (mean, cov) = toy_posterior_moments(&data);
        let thetas = chain.thetas();
        let n = thetas.len() as f64;
        let ess = super::super::ess::multi_ess(&thetas).unwrap();
        for i in 0..2 {
            let m: f64 = thetas.iter().map(|t| t[i]).sum::<f64>() / n;
            let se = (cov[(i, i)] / ess).sqrt();
            assert!((m - mean[i]).abs() < 3.0 * se, "mean {i}: {m} vs {}", mean[i]);
            let v: f64 = thetas.iter().map(|t| (t[i] - m).powi(2)).sum::<f64>() / (n - 1.0);
            // variance of a sample variance is about 2σ⁴/ESS
            let se_v = (2.0 / ess).sqrt() * cov[(i, i)];
            assert!((v - cov[(i, i)]).abs() < 3.0 * se_v, "var {i}: {v} vs {}", cov[(i, i)]);
        }
        let c01: f64 = thetas.iter().map(|t| (t[0] - mean[0]) * (t[1] - mean[1])).sum::<f64>() / n;
        let se_c = ((cov[(0, 0)] * cov[(1, 1)] + cov[(0, 1)].powi(2)) / ess).sqrt();
        assert!((c01 - cov[(0, 1)]).abs() < 3.0 * se_c);
        assert!(chain.acceptance_rate() > 0.15 && chain.acceptance_rate() < 0.6);
    }

    #[test]
    fn detailed_balance_two_state_projection() {
        // flows between the half-planes x₀ < m and x₀ ≥ m balance at stationarity
        let data = [0.7, -0.4, 1.1];
        let fwd = toy_forward();
        let prior = Identity(2);
        let post = Posterior::new(point_spec(), data.to_vec(), Mode::Com, &fwd, &prior, None).unwrap();
        let (mean, cov) = toy_posterior_moments(&data);
        let cfg = McmcConfig {
            steps: 200_000,
            burn_in: 0,
            adapt_interval: 1_000,
            thin: 1,
            seed: 3,
            checkpoint_every: 0,
        };
        let chain = run_chain(&post, &cfg, &[mean[0], mean[1]], &(&cov * 2.0), &RunControl::default()).unwrap();
        let side = |t: &[f64]| t[0] >= mean[0] + 0.3 * cov[(0, 0)].sqrt();
        let (mut up, mut down, mut occ) = (0.0f64, 0.0f64, 0.0f64);
        for w in chain.samples.windows(2) {
            let (a, b) = (side(&w[0].theta), side(&w[1].theta));
            occ += b as u8 as f64;
            if !a && b {
                up += 1.0;
            }
            if a && !b {
                down += 1.0;
            }
        }
        // net flow of a stationary reversible chain is zero up to one crossing
        assert!((up - down).abs() <= 1.0);
        // empirical occupation ratio matches the posterior mass ratio
        let z = 0.3;
        let p_hi = 0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2);
        let n = (chain.samples.len() - 1) as f64;
        let emp = occ / n;
        let ess = super::super::ess::multi_ess(&chain.thetas()).unwrap();
        let se = (p_hi * (1.0 - p_hi) / ess).sqrt() * 2.0;
        assert!((emp - p_hi).abs() < 3.0 * se, "{emp} vs {p_hi}");
    }

    #[test]
    fn com_and_coc_agree_step_for_step_for_identity_prior() {
        let data = [0.7, -0.4, 1.1];
        let fwd = toy_forward();
        let prior = Identity(2);
        let a = Posterior::new(point_spec(), data.to_vec(), Mode::Com, &fwd, &prior, None).unwrap();
        let b = Posterior::new(point_spec(), data.to_vec(), Mode::Coc, &fwd, &prior, Some(&prior)).unwrap();
        let cfg = McmcConfig {
            steps: 5_000,
            burn_in: 2_000,
            adapt_interval: 500,
            thin: 1,
            seed: 8,
            checkpoint_every: 0,
        };
        let p0 = DMatrix::identity(2, 2) * 0.5;
        let ca = run_chain(&a, &cfg, &[0.1, 0.2], &p0, &RunControl::default()).unwrap();
        let cb = run_chain(&b, &cfg, &[0.1, 0.2], &p0, &RunControl::default()).unwrap();
        let acc_a: Vec<bool> = ca.samples.iter().map(|s| s.accepted).collect();
        let acc_b: Vec<bool> = cb.samples.iter().map(|s| s.accepted).collect();
        assert_eq!(acc_a, acc_b);
        assert_eq!(ca.thetas(), cb.thetas());
    }

    #[test]
    fn zero_length_run() {
        let fwd = toy_forward();
        let prior = Identity(2);
        let post = Posterior::new(point_spec(), vec![0.0; 3], Mode::Com, &fwd, &prior, None).unwrap();
        let cfg = McmcConfig {
            steps: 0,
            burn_in: 0,
            ..Default::default()
        };
        let chain = run_chain(&post, &cfg, &[0.0, 0.0], &DMatrix::identity(2, 2), &RunControl::default()).unwrap();
        assert!(chain.samples.is_empty());
        assert_eq!(chain.names, vec!["xibar1", "xibar2"]);
        assert_eq!(chain.acceptance_rate(), 0.0);
    }

    #[test]
    fn checkpoint_restart_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let fwd = toy_forward();
        let prior = Identity(2);
        let spec = HyperPriorSpec {
            noise: NoisePrior::Jeffreys,
            ..point_spec()
        };
        let post = Posterior::new(spec, vec![0.7, -0.4, 1.1], Mode::Com, &fwd, &prior, None).unwrap();
        let cfg = McmcConfig {
            steps: 3_000,
            burn_in: 2_000,
            adapt_interval: 400,
            thin: 3,
            seed: 99,
            checkpoint_every: 250,
        };
        let p0 = DMatrix::identity(3, 3) * 0.2;
        let init = [0.0, 0.0, 0.0];
        let full = run_chain(&post, &cfg, &init, &p0, &RunControl::default()).unwrap();
        let path = dir.path().join("ckpt.json");
        for stop in [1_300, 3_700] {
            let ctl = RunControl {
                checkpoint: Some(path.clone()),
                stop_after: Some(stop),
            };
            run_chain(&post, &cfg, &init, &p0, &ctl).unwrap();
        }
        let ctl = RunControl {
            checkpoint: Some(path.clone()),
            stop_after: None,
        };
        let resumed = run_chain(&post, &cfg, &init, &p0, &ctl).unwrap();
        assert_eq!(full, resumed);
    }
}
