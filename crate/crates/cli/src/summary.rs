//! Scalar summaries of a chain and its reconstructed fields.

use fieldinv::sampler::{multi_ess, postprocess::quantile_sorted, Chain, FieldSummary, Mode, Posterior};
use fieldinv::ReferenceBasis;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::stages::{run_label, Truth};
use crate::CliResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStat {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub q05: f64,
    pub q95: f64,
    pub truth: Option<f64>,
    /// Whether `[q05, q95]` holds the truth.
    pub covered: Option<bool>,
}

impl ParamStat {
    pub fn from_values(name: impl Into<String>, values: &[f64], truth: Option<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q05 = quantile_sorted(&sorted, 0.05);
        let q95 = quantile_sorted(&sorted, 0.95);
        Self {
            name: name.into(),
            mean,
            std: var.sqrt(),
            q05,
            q95,
            truth,
            covered: truth.map(|t| t >= q05 && t <= q95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldScore {
    /// Nodes scored: the whole grid in 1D, `z <= height / 2` in 2D.
    pub nodes: usize,
    pub coverage_90: Option<f64>,
    pub coverage_98: Option<f64>,
    pub band_width_90: f64,
    pub prior_band_width_90: f64,
    pub band_ratio: f64,
    /// Relative L2 (nodal) error of the posterior median.
    pub median_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub mode: Mode,
    pub steps: u64,
    pub samples: usize,
    pub acceptance_rate: f64,
    pub burn_in_acceptance_rate: f64,
    pub multi_ess: f64,
    pub sigma: ParamStat,
    pub sigma_mode: f64,
    /// Field coordinates `ξ`, whatever the sampling parametrization.
    pub coordinates: Vec<ParamStat>,
    pub hyper: Vec<ParamStat>,
    pub field: FieldScore,
}

/// Mode of a Gaussian kernel density estimate with Silverman's bandwidth.
pub fn kde_mode(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sd = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return sorted[0];
    }
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let grid = 512;
    let mut best = (f64::NEG_INFINITY, lo);
    for i in 0..=grid {
        let x = lo + (hi - lo) * i as f64 / grid as f64;
        let d: f64 = sorted.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum();
        if d > best.0 {
            best = (d, x);
        }
    }
    best.1
}

/// Node indices on which field scores are taken.
pub fn scored_nodes(basis: &ReferenceBasis) -> Vec<usize> {
    let grid = &basis.grid;
    if grid.dim() == 1 {
        return (0..grid.len()).collect();
    }
    let (zlo, zhi) = {
        let z: Vec<f64> = (0..grid.len()).map(|i| grid.point(i)[1]).collect();
        z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    };
    let mid = 0.5 * (zlo + zhi);
    (0..grid.len()).filter(|&i| grid.point(i)[1] <= mid + 1e-12).collect()
}

pub fn build_summary(
    cfg: &RunConfig,
    post: &Posterior,
    chain: &Chain,
    fields: &FieldSummary,
    prior_fields: &FieldSummary,
    truth: Option<&Truth>,
    basis: &ReferenceBasis,
) -> CliResult<RunSummary> {
    let thetas = chain.thetas();
    let layout = &post.layout;
    let mut xis = Vec::with_capacity(thetas.len());
    let mut sigmas = Vec::with_capacity(thetas.len());
    let mut amps = Vec::new();
    let mut lens = Vec::new();
    let mut trends = Vec::new();
    for th in &thetas {
        xis.push(post.coordinates(th)?);
        let (_, q, c, s) = layout.unpack(&post.spec, th);
        sigmas.push(s);
        amps.push(q.amplitude);
        lens.push(q.length);
        if let Some(c) = c {
            trends.push(c);
        }
    }
    let coordinates = (0..layout.r)
        .map(|i| {
            let col: Vec<f64> = xis.iter().map(|x| x[i]).collect();
            ParamStat::from_values(format!("xi{}", i + 1), &col, truth.map(|t| t.best_projection[i]))
        })
        .collect();
    let mut hyper = Vec::new();
    if layout.amplitude {
        hyper.push(ParamStat::from_values("A", &amps, None));
    }
    if layout.length {
        hyper.push(ParamStat::from_values("l", &lens, None));
    }
    if layout.trend {
        hyper.push(ParamStat::from_values("c", &trends, truth.and_then(|t| t.trend)));
    }
    let nodes = scored_nodes(basis);
    let (lo90, hi90, lo98, hi98) = (1, 3, 0, 4);
    let band = fields.band_width(lo90, hi90, &nodes);
    let prior_band = prior_fields.band_width(lo90, hi90, &nodes);
    let field = FieldScore {
        nodes: nodes.len(),
        coverage_90: truth.map(|t| fields.coverage(&t.field, lo90, hi90, &nodes)),
        coverage_98: truth.map(|t| fields.coverage(&t.field, lo98, hi98, &nodes)),
        band_width_90: band,
        prior_band_width_90: prior_band,
        band_ratio: band / prior_band,
        median_error: truth.map(|t| {
            let m = fields.median();
            let num: f64 = nodes.iter().map(|&i| (m[i] - t.field[i]).powi(2)).sum();
            let den: f64 = nodes.iter().map(|&i| t.field[i].powi(2)).sum();
            (num / den).sqrt()
        }),
    };
    Ok(RunSummary {
        label: run_label(cfg),
        mode: chain.mode,
        steps: chain.steps,
        samples: chain.samples.len(),
        acceptance_rate: chain.acceptance_rate(),
        burn_in_acceptance_rate: chain.burn_in_acceptance_rate(),
        multi_ess: multi_ess(&thetas)?,
        sigma_mode: kde_mode(&sigmas),
        sigma: ParamStat::from_values("sigma", &sigmas, truth.map(|t| t.sigma)),
        coordinates,
        hyper,
        field,
    })
}
