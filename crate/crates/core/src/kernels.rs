//! Parametric autocovariance kernels, their hyperparameter priors, and
//! quadrature over the hyperparameter domain.

use rand::Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_unit;

/// Kernel hyperparameters `q = (A, l)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub amplitude: f64,
    pub length: f64,
}

impl HyperParams {
    pub fn new(amplitude: f64, length: f64) -> Self {
        Self { amplitude, length }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return Err(Error::Domain(format!("amplitude must be > 0, got {}", self.amplitude)));
        }
        if !(self.length > 0.0) || !self.length.is_finite() {
            return Err(Error::Domain(format!("correlation length must be > 0, got {}", self.length)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    SquaredExponential,
}

impl KernelKind {
    /// Unit-amplitude kernel value at squared distance `dist2`.
    #[inline]
    pub fn unit(&self, dist2: f64, length: f64) -> f64 {
        match self {
            KernelKind::SquaredExponential => (-dist2 / (2.0 * length * length)).exp(),
        }
    }

    /// Whether `k(x, y)` factors into a product over coordinates for fixed `l`.
    pub fn is_separable(&self) -> bool {
        matches!(self, KernelKind::SquaredExponential)
    }
}

pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `k(x, y, q)`.
pub fn eval_kernel(kind: KernelKind, x: &[f64], y: &[f64], q: HyperParams) -> Result<f64> {
    q.validate()?;
    Ok(q.amplitude * kind.unit(squared_distance(x, y), q.length))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AmplitudePrior {
    InvGamma { shape: f64, scale: f64 },
    Fixed { value: f64 },
}

impl AmplitudePrior {
    pub fn mean(&self) -> f64 {
        match *self {
            AmplitudePrior::InvGamma { shape, scale } => {
                if shape > 1.0 {
                    scale / (shape - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            AmplitudePrior::Fixed { value } => value,
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, AmplitudePrior::Fixed { .. })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            // 1/X with X ~ Gamma(shape, rate = scale)
            AmplitudePrior::InvGamma { shape, scale } => {
                1.0 / rng.sample(Gamma::new(shape, 1.0 / scale).expect("validated prior"))
            }
            AmplitudePrior::Fixed { value } => value,
        }
    }

    /// Log density; point masses contribute zero at their atom.
    pub fn logpdf(&self, a: f64) -> f64 {
        match *self {
            AmplitudePrior::InvGamma { shape, scale } => {
                if !(a > 0.0) {
                    return f64::NEG_INFINITY;
                }
                shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * a.ln() - scale / a
            }
            AmplitudePrior::Fixed { value } => {
                if a == value {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            AmplitudePrior::InvGamma { shape, scale } if shape > 1.0 && scale > 0.0 => Ok(()),
            AmplitudePrior::Fixed { value } if value > 0.0 => Ok(()),
            other => Err(Error::Invalid(format!(
                "amplitude prior {other:?} needs shape > 1, scale > 0 or a positive atom"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LengthPrior {
    LogUniform { lo: f64, hi: f64 },
    Uniform { lo: f64, hi: f64 },
    Fixed { value: f64 },
}

impl LengthPrior {
    pub fn is_fixed(&self) -> bool {
        matches!(self, LengthPrior::Fixed { .. })
    }

    pub fn support(&self) -> (f64, f64) {
        match *self {
            LengthPrior::LogUniform { lo, hi } | LengthPrior::Uniform { lo, hi } => (lo, hi),
            LengthPrior::Fixed { value } => (value, value),
        }
    }

    pub fn logpdf(&self, l: f64) -> f64 {
        match *self {
            LengthPrior::LogUniform { lo, hi } => {
                if l > lo && l < hi {
                    -l.ln() - (hi.ln() - lo.ln()).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            LengthPrior::Uniform { lo, hi } => {
                if l > lo && l < hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            LengthPrior::Fixed { value } => {
                if l == value {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Prior CDF map to the unit interval.
    pub fn to_unit(&self, l: f64) -> f64 {
        match *self {
            LengthPrior::LogUniform { lo, hi } => (l.ln() - lo.ln()) / (hi.ln() - lo.ln()),
            LengthPrior::Uniform { lo, hi } => (l - lo) / (hi - lo),
            LengthPrior::Fixed { .. } => 0.5,
        }
    }

    /// Inverse prior CDF.
    pub fn from_unit(&self, u: f64) -> f64 {
        match *self {
            LengthPrior::LogUniform { lo, hi } => (lo.ln() + u * (hi.ln() - lo.ln())).exp(),
            LengthPrior::Uniform { lo, hi } => lo + u * (hi - lo),
            LengthPrior::Fixed { value } => value,
        }
    }

    /// Median of the prior; used as a starting value.
    pub fn center(&self) -> f64 {
        self.from_unit(0.5)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.from_unit(rng.random())
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LengthPrior::LogUniform { lo, hi } | LengthPrior::Uniform { lo, hi } if lo > 0.0 && hi > lo => Ok(()),
            LengthPrior::Fixed { value } if value > 0.0 => Ok(()),
            other => Err(Error::Invalid(format!("length prior {other:?} needs 0 < lo < hi"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendPrior {
    pub lo: f64,
    pub hi: f64,
}

impl TrendPrior {
    pub fn logpdf(&self, c: f64) -> f64 {
        if c > self.lo && c < self.hi {
            -(self.hi - self.lo).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.lo + (self.hi - self.lo) * rng.random::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoisePrior {
    /// Improper density proportional to `1/sigma`.
    #[default]
    Jeffreys,
    Fixed { value: f64 },
}

impl NoisePrior {
    pub fn is_fixed(&self) -> bool {
        matches!(self, NoisePrior::Fixed { .. })
    }

    pub fn logpdf(&self, sigma: f64) -> f64 {
        match *self {
            NoisePrior::Jeffreys => {
                if sigma > 0.0 {
                    -sigma.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            NoisePrior::Fixed { value } => {
                if sigma == value {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPriorSpec {
    pub amplitude: AmplitudePrior,
    pub length: LengthPrior,
    #[serde(default)]
    pub trend: Option<TrendPrior>,
    #[serde(default)]
    pub noise: NoisePrior,
}

impl HyperPriorSpec {
    pub fn validate(&self) -> Result<()> {
        self.amplitude.validate()?;
        self.length.validate()?;
        if let Some(t) = self.trend {
            if !(t.hi > t.lo) {
                return Err(Error::Invalid(format!("trend prior needs lo < hi, got {t:?}")));
            }
        }
        if let NoisePrior::Fixed { value } = self.noise {
            if !(value > 0.0) {
                return Err(Error::Invalid("fixed noise level must be > 0".into()));
            }
        }
        Ok(())
    }

    /// The same prior with point masses on both kernel hyperparameters.
    pub fn with_point_mass(&self, q: HyperParams) -> Self {
        Self {
            amplitude: AmplitudePrior::Fixed { value: q.amplitude },
            length: LengthPrior::Fixed { value: q.length },
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(default)]
    pub kind: KernelKind,
    pub hyper_prior: HyperPriorSpec,
}

/// `log pi_H(q) + log pi(c) + log pi(sigma)` up to a constant; `-inf` outside the support.
pub fn hyper_prior_logpdf(spec: &HyperPriorSpec, q: HyperParams, trend: Option<f64>, sigma: f64) -> f64 {
    let mut lp = spec.amplitude.logpdf(q.amplitude) + spec.length.logpdf(q.length) + spec.noise.logpdf(sigma);
    match (spec.trend, trend) {
        (Some(prior), Some(c)) => lp += prior.logpdf(c),
        (None, None) => {}
        (Some(_), None) => return f64::NEG_INFINITY,
        (None, Some(_)) => return f64::NEG_INFINITY,
    }
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// Discrete measure over the hyperparameter domain.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperQuadrature {
    pub nodes: Vec<HyperParams>,
    pub weights: Vec<f64>,
}

/// Quantile truncation used for the inverse-gamma CDF map.
pub const AMPLITUDE_TAIL: f64 = 1e-6;

impl HyperQuadrature {
    /// Gauss–Legendre in the length CDF with the amplitude set to its
    /// analytic mean. Exact for the amplitude average because kernels are
    /// linear in `A`.
    pub fn analytic_amplitude(prior: &HyperPriorSpec, n_length: usize) -> Result<Self> {
        prior.validate()?;
        let a = prior.amplitude.mean();
        let (lengths, weights) = Self::length_rule(&prior.length, n_length)?;
        Ok(Self {
            nodes: lengths.into_iter().map(|l| HyperParams::new(a, l)).collect(),
            weights,
        })
    }

    /// Tensor Gauss–Legendre rule in the CDFs of both hyperparameters; the
    /// inverse-gamma CDF is truncated at the `AMPLITUDE_TAIL` quantiles.
    pub fn tensor(prior: &HyperPriorSpec, n_amplitude: usize, n_length: usize) -> Result<Self> {
        prior.validate()?;
        let (amps, amp_w) = match prior.amplitude {
            AmplitudePrior::Fixed { value } => (vec![value], vec![1.0]),
            AmplitudePrior::InvGamma { shape, scale } => {
                use statrs::distribution::{ContinuousCDF, InverseGamma};
                if n_amplitude == 0 {
                    return Err(Error::EmptyRule);
                }
                let dist = InverseGamma::new(shape, scale).map_err(|e| Error::Invalid(e.to_string()))?;
                let rule = gauss_legendre_unit(n_amplitude);
                let span = 1.0 - 2.0 * AMPLITUDE_TAIL;
                let amps = rule
                    .nodes
                    .iter()
                    .map(|&u| dist.inverse_cdf(AMPLITUDE_TAIL + span * u))
                    .collect();
                (amps, rule.weights)
            }
        };
        let (lengths, len_w) = Self::length_rule(&prior.length, n_length)?;
        let mut nodes = Vec::with_capacity(amps.len() * lengths.len());
        let mut weights = Vec::with_capacity(nodes.capacity());
        for (a, wa) in amps.iter().zip(&amp_w) {
            for (l, wl) in lengths.iter().zip(&len_w) {
                nodes.push(HyperParams::new(*a, *l));
                weights.push(wa * wl);
            }
        }
        Ok(Self { nodes, weights })
    }

    pub fn point_mass(q: HyperParams) -> Self {
        Self {
            nodes: vec![q],
            weights: vec![1.0],
        }
    }

    fn length_rule(prior: &LengthPrior, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if prior.is_fixed() {
            return Ok((vec![prior.center()], vec![1.0]));
        }
        if n == 0 {
            return Err(Error::EmptyRule);
        }
        let rule = gauss_legendre_unit(n);
        Ok((rule.nodes.iter().map(|&u| prior.from_unit(u)).collect(), rule.weights))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Expectation of `f(q)` under the rule.
    pub fn expect<T, F>(&self, f: F) -> Result<T>
    where
        T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
        F: Fn(HyperParams) -> Result<T>,
    {
        let mut iter = self.nodes.iter().zip(&self.weights);
        let (q0, w0) = iter.next().ok_or(Error::EmptyRule)?;
        let mut acc = f(*q0)? * *w0;
        for (q, w) in iter {
            acc = acc + f(*q)? * *w;
        }
        Ok(acc)
    }
}

/// `k_bar(x, y) = sum_m w_m k(x, y, q_m)`.
pub fn averaged_kernel(kind: KernelKind, x: &[f64], y: &[f64], hq: &HyperQuadrature) -> Result<f64> {
    if hq.is_empty() {
        return Err(Error::EmptyRule);
    }
    let d2 = squared_distance(x, y);
    Ok(hq
        .nodes
        .iter()
        .zip(&hq.weights)
        .map(|(q, w)| w * q.amplitude * kind.unit(d2, q.length))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn td_prior() -> HyperPriorSpec {
        HyperPriorSpec {
            amplitude: AmplitudePrior::InvGamma { shape: 3.0, scale: 1.0 },
            length: LengthPrior::LogUniform { lo: 0.1, hi: 0.7 },
            trend: None,
            noise: NoisePrior::Jeffreys,
        }
    }

    const SE: KernelKind = KernelKind::SquaredExponential;

    #[test]
    fn kernel_closed_forms() {
        let q = HyperParams::new(1.7, 0.3);
        assert_eq!(eval_kernel(SE, &[0.4], &[0.4], q).unwrap(), 1.7);
        let v = eval_kernel(SE, &[0.0], &[0.1], HyperParams::new(1.0, 0.1)).unwrap();
        assert!((v - 0.606531).abs() < 1e-6);
        let v = eval_kernel(SE, &[0.2, 0.1], &[0.2, 0.6], HyperParams::new(2.0, 0.5)).unwrap();
        assert!((v - 1.213061).abs() < 1e-6);
    }

    #[test]
    fn kernel_domain_errors() {
        assert!(eval_kernel(SE, &[0.0], &[1.0], HyperParams::new(0.0, 0.1)).is_err());
        assert!(eval_kernel(SE, &[0.0], &[1.0], HyperParams::new(1.0, -0.1)).is_err());
    }

    #[test]
    fn averaged_diagonal_is_amplitude_mean() {
        let hq = HyperQuadrature::tensor(&td_prior(), 64, 8).unwrap();
        let v = averaged_kernel(SE, &[0.3], &[0.3], &hq).unwrap();
        // truncated CDF map loses the extreme upper tail of InvGamma(3, 1)
        assert!((v - 0.5).abs() < 2.5e-3, "{v}");
        let hq = HyperQuadrature::analytic_amplitude(&td_prior(), 8).unwrap();
        assert!((averaged_kernel(SE, &[0.3], &[0.3], &hq).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn averaged_point_mass_is_kernel() {
        let q = HyperParams::new(0.8, 0.25);
        let hq = HyperQuadrature::point_mass(q);
        let a = averaged_kernel(SE, &[0.1], &[0.45], &hq).unwrap();
        assert_eq!(a, eval_kernel(SE, &[0.1], &[0.45], q).unwrap());
        let spec = td_prior().with_point_mass(q);
        let hq = HyperQuadrature::analytic_amplitude(&spec, 10).unwrap();
        assert_eq!(hq.len(), 1);
        assert_eq!(averaged_kernel(SE, &[0.1], &[0.45], &hq).unwrap(), a);
    }

    #[test]
    fn averaged_matches_dense_trapezoid_in_log_length() {
        // oracle: 10^6-interval trapezoid rule in log l
        let (lo, hi): (f64, f64) = (0.1, 0.7);
        let n = 1_000_000;
        let (a, b) = (lo.ln(), hi.ln());
        let h = (b - a) / n as f64;
        let f = |s: f64| (-0.09 / (2.0 * (2.0 * s).exp())).exp();
        let mut acc = 0.5 * (f(a) + f(b));
        for i in 1..n {
            acc += f(a + i as f64 * h);
        }
        let oracle = acc * h / (b - a);

        let spec = HyperPriorSpec {
            amplitude: AmplitudePrior::Fixed { value: 1.0 },
            ..td_prior()
        };
        let hq = HyperQuadrature::analytic_amplitude(&spec, 32).unwrap();
        let got = averaged_kernel(SE, &[0.0], &[0.3], &hq).unwrap();
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
    }

    #[test]
    fn empty_rule_errors() {
        let hq = HyperQuadrature { nodes: vec![], weights: vec![] };
        assert!(matches!(averaged_kernel(SE, &[0.0], &[0.0], &hq), Err(Error::EmptyRule)));
        assert!(HyperQuadrature::analytic_amplitude(&td_prior(), 0).is_err());
    }

    #[test]
    fn jeffreys_halves_density_when_sigma_doubles() {
        let spec = td_prior();
        let q = HyperParams::new(0.5, 0.3);
        let a = hyper_prior_logpdf(&spec, q, None, 0.1);
        let b = hyper_prior_logpdf(&spec, q, None, 0.2);
        assert!((a - b - 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn out_of_support_is_neg_infinity() {
        let spec = td_prior();
        assert_eq!(hyper_prior_logpdf(&spec, HyperParams::new(0.5, 0.05), None, 0.1), f64::NEG_INFINITY);
        assert_eq!(hyper_prior_logpdf(&spec, HyperParams::new(0.5, 0.8), None, 0.1), f64::NEG_INFINITY);
        assert_eq!(hyper_prior_logpdf(&spec, HyperParams::new(-0.5, 0.3), None, 0.1), f64::NEG_INFINITY);
        assert_eq!(hyper_prior_logpdf(&spec, HyperParams::new(0.5, 0.3), None, -0.1), f64::NEG_INFINITY);
        let st = HyperPriorSpec {
            trend: Some(TrendPrior { lo: 6.9, hi: 8.1 }),
            ..spec
        };
        assert_eq!(hyper_prior_logpdf(&st, HyperParams::new(0.5, 0.3), Some(8.2), 0.1), f64::NEG_INFINITY);
        assert!(hyper_prior_logpdf(&st, HyperParams::new(0.5, 0.3), Some(7.5), 0.1).is_finite());
    }

    #[test]
    fn inverse_gamma_logpdf_matches_statrs() {
        use statrs::distribution::{Continuous, InverseGamma};
        let prior = AmplitudePrior::InvGamma { shape: 3.0, scale: 1.0 };
        let reference = InverseGamma::new(3.0, 1.0).unwrap();
        for a in [0.05, 0.2, 0.5, 1.0, 3.0] {
            assert!((prior.logpdf(a) - reference.ln_pdf(a)).abs() < 1e-12, "a={a}");
        }
        // direct evaluation at A = 0.5: 1^3 / Gamma(3) * 0.5^-4 * e^-2
        let direct = (16.0 * (-2.0f64).exp() / 2.0).ln();
        assert!((prior.logpdf(0.5) - direct).abs() < 1e-12);
    }

    #[test]
    fn length_cdf_maps_invert() {
        for prior in [LengthPrior::LogUniform { lo: 0.1, hi: 0.7 }, LengthPrior::Uniform { lo: 10.0, hi: 100.0 }] {
            for u in [0.0, 0.13, 0.5, 0.99] {
                assert!((prior.to_unit(prior.from_unit(u)) - u).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric(x in -5.0..5.0f64, y in -5.0..5.0f64, z in -5.0..5.0f64, a in 0.01..10.0f64, l in 0.01..10.0f64) {
            let q = HyperParams::new(a, l);
            prop_assert_eq!(eval_kernel(SE, &[x, z], &[y, x], q).unwrap(), eval_kernel(SE, &[y, x], &[x, z], q).unwrap());
        }

        #[test]
        fn gram_is_positive_semidefinite(points in proptest::collection::vec(-2.0..2.0f64, 2..25), l in 0.05..2.0f64) {
            let n = points.len();
            let q = HyperParams::new(1.3, l);
            let gram = nalgebra::DMatrix::from_fn(n, n, |i, j| eval_kernel(SE, &[points[i]], &[points[j]], q).unwrap());
            let trace = gram.trace();
            let min = nalgebra::SymmetricEigen::new(gram).eigenvalues.min();
            prop_assert!(min >= -1e-10 * trace, "min eigenvalue {}", min);
        }
    }
}
