//! Log-posterior assembly for the change-of-measure (CoM) and
//! change-of-coordinates (CoC) parametrizations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chaos::{CocSurrogate, PCSurrogate, PriorSurrogates};
use crate::com_prior::ComPrior;
use crate::error::{check_len, Error, Result};
use crate::kernels::{hyper_prior_logpdf, AmplitudePrior, HyperParams, HyperPriorSpec, LengthPrior, NoisePrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Auxiliary walk on `ξ̄` with `ξ = Σ(q)^{1/2} ξ̄`.
    #[default]
    Com,
    /// Walk on `η ~ N(0, I)` with `ξ = B(q) η`.
    Coc,
}

/// `Σ(q)^{1/2}`, `Σ(q)^{-1}` and `logdet Σ(q)` at one `q`.
pub struct PriorEval {
    pub sqrt: DMatrix<f64>,
    pub inv: DMatrix<f64>,
    pub logdet: f64,
}

pub trait PriorModel: Sync {
    fn rank(&self) -> usize;
    fn eval(&self, q: HyperParams) -> Result<PriorEval>;
}

impl PriorModel for PriorSurrogates {
    fn rank(&self) -> usize {
        self.r
    }

    fn eval(&self, q: HyperParams) -> Result<PriorEval> {
        Ok(PriorEval {
            sqrt: self.sqrt(q)?,
            inv: self.inv(q)?,
            logdet: self.logdet(q)?,
        })
    }
}

/// Exact prior quantities from the eigendecomposition of `Σ_1(l)`.
pub struct ExactPrior<'a>(pub &'a ComPrior);

impl PriorModel for ExactPrior<'_> {
    fn rank(&self) -> usize {
        self.0.rank()
    }

    fn eval(&self, q: HyperParams) -> Result<PriorEval> {
        q.validate()?;
        let spec = self.0.unit_spectrum(q.length)?;
        Ok(PriorEval {
            sqrt: spec.power(0.5) * q.amplitude.sqrt(),
            inv: spec.power(-1.0) / q.amplitude,
            logdet: self.0.rank() as f64 * q.amplitude.ln() + spec.logdet(),
        })
    }
}

pub trait CocModel: Sync {
    fn matrix(&self, q: HyperParams) -> Result<DMatrix<f64>>;
}

impl CocModel for CocSurrogate {
    fn matrix(&self, q: HyperParams) -> Result<DMatrix<f64>> {
        CocSurrogate::matrix(self, q)
    }
}

/// Exact `B(q)` from a rank-`internal_rank` eigensolve of the `q` kernel.
pub struct ExactCoc<'a> {
    pub prior: &'a ComPrior,
    pub internal_rank: usize,
}

impl CocModel for ExactCoc<'_> {
    fn matrix(&self, q: HyperParams) -> Result<DMatrix<f64>> {
        let r = self.prior.rank();
        self.prior.coc_matrix(q, self.internal_rank, r)
    }
}

pub trait ForwardModel: Sync {
    fn predict(&self, xi: &[f64], trend: Option<f64>) -> Result<Vec<f64>>;
}

/// Surrogate inputs are the coordinates, followed by the trend when the
/// surrogate has one more input.
impl ForwardModel for PCSurrogate {
    fn predict(&self, xi: &[f64], trend: Option<f64>) -> Result<Vec<f64>> {
        match trend {
            Some(c) if self.dim() == xi.len() + 1 => {
                let mut x = xi.to_vec();
                x.push(c);
                self.eval(&x)
            }
            _ => self.eval(xi),
        }
    }
}

/// Forward model from a closure.
pub struct FnForward<F>(pub F);

impl<F> ForwardModel for FnForward<F>
where
    F: Fn(&[f64], Option<f64>) -> Result<Vec<f64>> + Sync,
{
    fn predict(&self, xi: &[f64], trend: Option<f64>) -> Result<Vec<f64>> {
        (self.0)(xi, trend)
    }
}

/// Which parameters are sampled; fixed ones take their point-mass values.
/// The state vector is `[coords (r), A?, l?, c?, log σ?]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub r: usize,
    pub amplitude: bool,
    pub length: bool,
    pub trend: bool,
    pub noise: bool,
}

impl Layout {
    pub fn from_spec(spec: &HyperPriorSpec, r: usize) -> Self {
        Self {
            r,
            amplitude: !spec.amplitude.is_fixed(),
            length: !spec.length.is_fixed(),
            trend: spec.trend.is_some(),
            noise: !spec.noise.is_fixed(),
        }
    }

    pub fn dim(&self) -> usize {
        self.r + self.amplitude as usize + self.length as usize + self.trend as usize + self.noise as usize
    }

    pub fn names(&self, mode: Mode) -> Vec<String> {
        let coord = match mode {
            Mode::Com => "xibar",
            Mode::Coc => "eta",
        };
        let mut names: Vec<String> = (1..=self.r).map(|i| format!("{coord}{i}")).collect();
        for (on, name) in [(self.amplitude, "A"), (self.length, "l"), (self.trend, "c"), (self.noise, "log_sigma")] {
            if on {
                names.push(name.into());
            }
        }
        names
    }

    /// `(coords, q, trend, σ)` from a state vector.
    pub fn unpack<'t>(&self, spec: &HyperPriorSpec, theta: &'t [f64]) -> (&'t [f64], HyperParams, Option<f64>, f64) {
        let mut pos = self.r;
        let mut next = |on: bool| {
            if on {
                pos += 1;
                Some(theta[pos - 1])
            } else {
                None
            }
        };
        let amplitude = next(self.amplitude).unwrap_or(match spec.amplitude {
            AmplitudePrior::Fixed { value } => value,
            AmplitudePrior::InvGamma { .. } => f64::NAN,
        });
        let length = next(self.length).unwrap_or(match spec.length {
            LengthPrior::Fixed { value } => value,
            _ => f64::NAN,
        });
        let trend = next(self.trend);
        let sigma = next(self.noise).map(f64::exp).unwrap_or(match spec.noise {
            NoisePrior::Fixed { value } => value,
            NoisePrior::Jeffreys => f64::NAN,
        });
        (&theta[..self.r], HyperParams::new(amplitude, length), trend, sigma)
    }

    /// State vector at the given values, skipping fixed entries.
    pub fn pack(&self, coords: &[f64], q: HyperParams, trend: Option<f64>, sigma: f64) -> Vec<f64> {
        let mut theta = coords.to_vec();
        if self.amplitude {
            theta.push(q.amplitude);
        }
        if self.length {
            theta.push(q.length);
        }
        if self.trend {
            theta.push(trend.unwrap_or(0.0));
        }
        if self.noise {
            theta.push(sigma.ln());
        }
        theta
    }
}

/// Posterior state with cached terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub xi: Vec<f64>,
    pub q: HyperParams,
    pub trend: Option<f64>,
    pub sigma: f64,
    pub loglik: f64,
    /// `log π(ξ|q)` in CoM mode, `log π(η)` in CoC mode.
    pub log_coord_prior: f64,
    pub log_hyper_prior: f64,
    /// `logdet Σ(q)` (CoM mode only).
    pub logdet: f64,
    pub logpost: f64,
}

impl ChainState {
    /// Log acceptance contribution of this state: the posterior plus the
    /// proposal-asymmetry and log-σ Jacobian terms.
    pub fn log_target(&self, mode: Mode, layout: &Layout) -> f64 {
        let mut t = self.logpost;
        if mode == Mode::Com {
            t += 0.5 * self.logdet;
        }
        if layout.noise {
            t += self.sigma.ln();
        }
        t
    }
}

pub struct Posterior<'a> {
    pub spec: HyperPriorSpec,
    pub layout: Layout,
    pub data: Vec<f64>,
    pub mode: Mode,
    pub forward: &'a dyn ForwardModel,
    pub prior: &'a dyn PriorModel,
    pub coc: Option<&'a dyn CocModel>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn gaussian_loglik(data: &[f64], pred: &[f64], sigma: f64) -> Result<f64> {
    check_len("likelihood (predictions)", data.len(), pred.len())?;
    let n = data.len() as f64;
    let ss: f64 = data.iter().zip(pred).map(|(d, p)| (d - p).powi(2)).sum();
    Ok(-n * sigma.ln() - 0.5 * n * LN_2PI - 0.5 * ss / (sigma * sigma))
}

impl<'a> Posterior<'a> {
    pub fn new(
        spec: HyperPriorSpec,
        data: Vec<f64>,
        mode: Mode,
        forward: &'a dyn ForwardModel,
        prior: &'a dyn PriorModel,
        coc: Option<&'a dyn CocModel>,
    ) -> Result<Self> {
        spec.validate()?;
        if mode == Mode::Coc && coc.is_none() {
            return Err(Error::Invalid("CoC mode needs a change-of-coordinates model".into()));
        }
        Ok(Self {
            spec,
            layout: Layout::from_spec(&spec, prior.rank()),
            data,
            mode,
            forward,
            prior,
            coc,
        })
    }

    /// Field coordinates `ξ` of a state vector.
    pub fn coordinates(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let (coords, q, _, _) = self.layout.unpack(&self.spec, theta);
        let m = match self.mode {
            Mode::Com => self.prior.eval(q)?.sqrt,
            Mode::Coc => self.coc.expect("checked at construction").matrix(q)?,
        };
        Ok((m * DVector::from_column_slice(coords)).as_slice().to_vec())
    }

    /// The state at `theta`, or `None` outside the prior support.
    pub fn evaluate(&self, theta: &[f64]) -> Result<Option<ChainState>> {
        check_len("posterior state", self.layout.dim(), theta.len())?;
        let (coords, q, trend, sigma) = self.layout.unpack(&self.spec, theta);
        let log_hyper_prior = hyper_prior_logpdf(&self.spec, q, trend, sigma);
        if log_hyper_prior == f64::NEG_INFINITY || !(sigma > 0.0) {
            return Ok(None);
        }
        let c = DVector::from_column_slice(coords);
        let (xi, log_coord_prior, logdet) = match self.mode {
            Mode::Com => {
                let pe = self.prior.eval(q)?;
                let xi = &pe.sqrt * &c;
                let quad = xi.dot(&(&pe.inv * &xi));
                (xi, -0.5 * (pe.logdet + quad), pe.logdet)
            }
            Mode::Coc => {
                let b = self.coc.expect("checked at construction").matrix(q)?;
                (b * &c, -0.5 * c.dot(&c), 0.0)
            }
        };
        let xi = xi.as_slice().to_vec();
        let loglik = if self.data.is_empty() {
            0.0
        } else {
            let pred = self.forward.predict(&xi, trend)?;
            gaussian_loglik(&self.data, &pred, sigma)?
        };
        let logpost = loglik + log_coord_prior + log_hyper_prior;
        Ok(Some(ChainState {
            theta: theta.to_vec(),
            xi,
            q,
            trend,
            sigma,
            loglik,
            log_coord_prior,
            log_hyper_prior,
            logdet,
            logpost,
        }))
    }
}
