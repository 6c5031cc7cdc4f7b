//! The five pipeline stages. Each reads its inputs from the workdir and
//! writes its outputs there; reruns with unchanged inputs are bitwise identical.

use std::fs;
use std::path::{Path, PathBuf};

use fieldinv::chaos::{build_forward_surrogate, field_model, rrmse, CocSurrogate, InputMap, NodeCache, PCSurrogate, PriorRrmse, PriorSurrogates};
use fieldinv::com_prior::ComPrior;
use fieldinv::forward::diffusion::{make_synthetic_observations, solve_diffusion};
use fieldinv::forward::eikonal::{make_synthetic_traveltimes, predict_traveltimes, synthetic_velocity};
use fieldinv::io;
use fieldinv::kernels::HyperQuadrature;
use fieldinv::sampler::{postprocess, run_chain, Chain, CocModel, FieldSummary, ForwardModel, Mode, PostConfig, Posterior, RunControl};
use fieldinv::{build_reference_basis, HyperParams, ReferenceBasis, SpatialGrid};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ForwardConfig, RunConfig};
use crate::summary::{build_summary, RunSummary};
use crate::{stage_rng, stage_seed, streams, CliError, CliResult};

pub struct Workdir(pub PathBuf);

impl Workdir {
    pub fn new(cfg: &RunConfig) -> CliResult<Self> {
        fs::create_dir_all(&cfg.paths.workdir).map_err(|e| CliError::config(format!("paths.workdir: {e}")))?;
        Ok(Self(cfg.paths.workdir.clone()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn basis(&self) -> PathBuf {
        self.path("basis.bin")
    }
    pub fn prior_dir(&self) -> PathBuf {
        self.path("prior")
    }
    pub fn coc(&self) -> PathBuf {
        self.path("coc.bin")
    }
    pub fn forward(&self) -> PathBuf {
        self.path("forward.bin")
    }
    pub fn observations(&self) -> PathBuf {
        self.path("observations.csv")
    }
    pub fn truth(&self) -> PathBuf {
        self.path("truth.json")
    }
}

/// Run label used in chain, quantile and summary file names.
pub fn run_label(cfg: &RunConfig) -> String {
    let mode = match cfg.mcmc.mode {
        Mode::Com => "com",
        Mode::Coc => "coc",
    };
    match cfg.mcmc.fixed_length {
        Some(l) => format!("{mode}_l{l}"),
        None => mode.to_string(),
    }
}

fn require(path: &Path, stage: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::config(format!("{} is missing; run `{stage}` first", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read(path)?;
    serde_json::from_slice(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisReport {
    pub r: usize,
    pub stored_rank: usize,
    pub grid_nodes: usize,
    pub captured_variance: f64,
    /// Captured variance at ranks `1..=stored_rank`.
    pub captured_by_rank: Vec<f64>,
    pub eigvals: Vec<f64>,
    pub trace_total: f64,
}

pub fn build_basis(cfg: &RunConfig) -> CliResult<BasisReport> {
    let wd = Workdir::new(cfg)?;
    let grid = cfg.grid.build()?;
    let hq = HyperQuadrature::analytic_amplitude(&cfg.kernel.hyper_prior, cfg.basis.length_nodes)?;
    let basis = build_reference_basis(cfg.kernel.kind, &grid, cfg.basis.r, cfg.basis.stored_rank, &hq)?;
    basis.write(&wd.basis())?;
    let report = BasisReport {
        r: basis.r,
        stored_rank: basis.stored_rank(),
        grid_nodes: grid.len(),
        captured_variance: basis.captured_variance(),
        captured_by_rank: (1..=basis.stored_rank()).map(|k| basis.captured_variance_at(k)).collect(),
        eigvals: basis.eigvals.clone(),
        trace_total: basis.trace_total,
    };
    write_json(&wd.path("basis_report.json"), &report)?;
    Ok(report)
}

pub fn load_basis(cfg: &RunConfig) -> CliResult<ReferenceBasis> {
    let wd = Workdir::new(cfg)?;
    require(&wd.basis(), "build-basis")?;
    let basis = ReferenceBasis::read(&wd.basis())?;
    if basis.r != cfg.basis.r || basis.grid != cfg.grid.build()? || basis.stored_rank() != cfg.basis.stored_rank {
        return Err(CliError::config("basis bundle does not match the config; rerun `build-basis`"));
    }
    Ok(basis)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorAttempt {
    pub order: usize,
    pub rrmse: PriorRrmse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub prior_attempts: Vec<PriorAttempt>,
    pub prior_order: usize,
    pub coc_built: bool,
    pub forward_level: usize,
    pub forward_nodes: usize,
    pub forward_solved: usize,
    pub forward_cached: usize,
    pub forward_terms: usize,
    pub forward_rrmse: f64,
}

/// Exact forward map of the stored inputs `[ξ (r), c?]`.
fn exact_model<'a>(cfg: &'a RunConfig, basis: &'a ReferenceBasis) -> CliResult<Box<dyn Fn(&[f64]) -> fieldinv::Result<Vec<f64>> + Sync + 'a>> {
    let with_trend = cfg.kernel.hyper_prior.trend.is_some();
    Ok(match &cfg.forward {
        ForwardConfig::Diffusion(d) => Box::new(field_model(basis, with_trend, 0.0, move |g: &[f64]| {
            let nu: Vec<f64> = g.iter().map(|v| v.exp()).collect();
            solve_diffusion(&nu, d)
        })),
        ForwardConfig::Tomography(geom) => {
            let grid = basis.grid.clone();
            Box::new(field_model(basis, with_trend, 0.0, move |g: &[f64]| {
                let v: Vec<f64> = g.iter().map(|x| x.exp()).collect();
                predict_traveltimes(&v, &grid, geom)
            }))
        }
    })
}

fn forward_inputs(cfg: &RunConfig) -> Vec<InputMap> {
    let mut inputs = vec![InputMap::Gaussian; cfg.basis.r];
    if let Some(t) = cfg.kernel.hyper_prior.trend {
        inputs.push(InputMap::Uniform { lo: t.lo, hi: t.hi });
    }
    inputs
}

pub fn build_surrogates(cfg: &RunConfig) -> CliResult<SurrogateReport> {
    let wd = Workdir::new(cfg)?;
    let basis = load_basis(cfg)?;
    let prior = ComPrior::new(basis.clone());
    let length = cfg.kernel.hyper_prior.length;
    let s = &cfg.surrogate;

    let mut val_rng = stage_rng(cfg.mcmc.seed, streams::PRIOR_VALIDATION);
    let mut attempts = Vec::new();
    let mut chosen = None;
    let mut order = s.prior_order;
    while order <= s.prior_order_max {
        let sur = PriorSurrogates::build(&prior, &length, order)?;
        let rrmse = sur.validate(&prior, &length, s.prior_validation, &mut val_rng)?;
        log::info!("prior surrogates at order {order}: {rrmse:?}");
        attempts.push(PriorAttempt { order, rrmse });
        if rrmse.worst() <= s.prior_rrmse_max {
            chosen = Some(sur);
            break;
        }
        order += 2;
    }
    let Some(prior_sur) = chosen else {
        let last = attempts.last().map(|a| a.rrmse.worst()).unwrap_or(f64::NAN);
        return Err(CliError::accuracy(format!(
            "prior surrogate RRMSE {last:.3e} above {:.1e} at the order cap {}",
            s.prior_rrmse_max, s.prior_order_max
        )));
    };
    fs::create_dir_all(wd.prior_dir())?;
    prior_sur.write(&wd.prior_dir())?;

    if s.build_coc {
        CocSurrogate::build(&prior, &length, s.coc_order, s.coc_internal_rank)?.write(&wd.coc())?;
    }

    let model = exact_model(cfg, &basis)?;
    let mut hasher = Sha256::new();
    hasher.update(fs::read(wd.basis())?);
    hasher.update(serde_json::to_vec(&cfg.forward)?);
    let namespace = hex::encode(hasher.finalize());
    let cache = NodeCache::new(wd.path("forward_cache"), namespace)?;
    let build = build_forward_surrogate(&model, forward_inputs(cfg), s.forward_level, Some(&cache))?;
    build.surrogate.write(&wd.forward())?;

    let mut fwd_rng = stage_rng(cfg.mcmc.seed, streams::FORWARD_VALIDATION);
    let validation: Vec<Vec<f64>> = (0..s.forward_validation).map(|_| build.surrogate.sample_inputs(&mut fwd_rng)).collect();
    let forward_rrmse = if validation.is_empty() { 0.0 } else { rrmse(&build.surrogate, &model, &validation)? };
    let report = SurrogateReport {
        prior_attempts: attempts,
        prior_order: prior_sur.order,
        coc_built: s.build_coc,
        forward_level: s.forward_level,
        forward_nodes: build.nodes,
        forward_solved: build.solved,
        forward_cached: build.cached,
        forward_terms: build.surrogate.num_terms(),
        forward_rrmse,
    };
    write_json(&wd.path("surrogate_report.json"), &report)?;
    if let Some(max) = s.forward_rrmse_max {
        if forward_rrmse > max {
            return Err(CliError::accuracy(format!("forward surrogate RRMSE {forward_rrmse:.3e} above {max:.1e}")));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// True log-field at the grid nodes.
    pub field: Vec<f64>,
    pub sigma: f64,
    pub trend: Option<f64>,
    /// `ξ` of the projection of `field - trend` on the first `r` modes.
    pub best_projection: Vec<f64>,
    /// `‖g - reconstruct(project(g))‖ / ‖g - c‖` under grid quadrature.
    pub projection_error: f64,
}

fn true_field(cfg: &RunConfig, grid: &SpatialGrid) -> CliResult<Option<Vec<f64>>> {
    if let Some(path) = &cfg.data.truth_file {
        return Ok(Some(io::read_nodal_field(path, grid.len())?));
    }
    let Some(preset) = cfg.data.preset else {
        return Ok(None);
    };
    Ok(Some(match &cfg.forward {
        ForwardConfig::Diffusion(_) => {
            let p = preset.diffusion().ok_or_else(|| CliError::config("data.preset: not a diffusion preset"))?;
            (0..grid.len()).map(|i| p.eval(grid.point(i)[0])).collect()
        }
        ForwardConfig::Tomography(_) => {
            let p = preset.velocity().ok_or_else(|| CliError::config("data.preset: not a velocity preset"))?;
            synthetic_velocity(p, grid)?.iter().map(|v| v.ln()).collect()
        }
    }))
}

pub fn make_data(cfg: &RunConfig) -> CliResult<Option<Truth>> {
    let wd = Workdir::new(cfg)?;
    let basis = load_basis(cfg)?;
    let grid = &basis.grid;
    let truth = match true_field(cfg, grid)? {
        Some(field) => {
            let w = grid.weights();
            let trend = cfg.kernel.hyper_prior.trend.map(|_| field.iter().zip(&w).map(|(g, w)| g * w).sum::<f64>() / grid.measure());
            let c = trend.unwrap_or(0.0);
            let centered: Vec<f64> = field.iter().map(|g| g - c).collect();
            let best_projection = basis.project_field(&centered)?;
            let recon = basis.reconstruct_field(&best_projection, c)?;
            let num: f64 = field.iter().zip(&recon).zip(&w).map(|((a, b), w)| w * (a - b).powi(2)).sum();
            let den: f64 = centered.iter().zip(&w).map(|(a, w)| w * a * a).sum();
            Some(Truth {
                field,
                sigma: cfg.data.sigma,
                trend,
                best_projection,
                projection_error: (num / den).sqrt(),
            })
        }
        None => None,
    };
    let values = match (&cfg.data.observations, &truth) {
        (Some(path), _) => io::read_observations(path)?,
        (None, Some(t)) => {
            let mut rng = stage_rng(cfg.mcmc.seed, streams::DATA_NOISE);
            match &cfg.forward {
                ForwardConfig::Diffusion(d) => make_synthetic_observations(&t.field, cfg.data.sigma, d, &mut rng)?,
                ForwardConfig::Tomography(geom) => {
                    let v: Vec<f64> = t.field.iter().map(|g| g.exp()).collect();
                    make_synthetic_traveltimes(&v, grid, geom, cfg.data.sigma, &mut rng)?
                }
            }
        }
        (None, None) => return Err(CliError::config("data: nothing to observe")),
    };
    match &cfg.forward {
        ForwardConfig::Diffusion(d) => io::write_diffusion_observations(&wd.observations(), d, &values)?,
        ForwardConfig::Tomography(g) => io::write_traveltimes(&wd.observations(), g, &values)?,
    }
    if let Some(t) = &truth {
        write_json(&wd.truth(), t)?;
    }
    Ok(truth)
}

/// Everything the sampler and postprocessor need from disk.
pub struct Artifacts {
    pub basis: ReferenceBasis,
    pub prior: PriorSurrogates,
    pub forward: PCSurrogate,
    pub coc: Option<CocSurrogate>,
    pub data: Vec<f64>,
}

pub fn load_artifacts(cfg: &RunConfig) -> CliResult<Artifacts> {
    let wd = Workdir::new(cfg)?;
    let basis = load_basis(cfg)?;
    require(&wd.prior_dir().join("sigma_sqrt.bin"), "build-surrogates")?;
    require(&wd.forward(), "build-surrogates")?;
    require(&wd.observations(), "make-data")?;
    let prior = PriorSurrogates::read(&wd.prior_dir())?;
    let forward = PCSurrogate::read(&wd.forward())?;
    if prior.r != cfg.basis.r || forward.dim() != forward_inputs(cfg).len() {
        return Err(CliError::config("surrogate bundles do not match the config; rerun `build-surrogates`"));
    }
    let coc = match cfg.mcmc.mode {
        Mode::Coc => {
            if !wd.coc().exists() {
                return Err(CliError::config(format!(
                    "{} is missing; run `build-surrogates` with surrogate.build_coc = true",
                    wd.coc().display()
                )));
            }
            Some(CocSurrogate::read(&wd.coc())?)
        }
        Mode::Com => None,
    };
    let data = io::read_observations(&wd.observations())?;
    if data.len() != forward.outputs() {
        return Err(CliError::config(format!(
            "observations.csv has {} values, the forward surrogate predicts {}",
            data.len(),
            forward.outputs()
        )));
    }
    Ok(Artifacts { basis, prior, forward, coc, data })
}

pub fn posterior<'a>(cfg: &RunConfig, art: &'a Artifacts) -> CliResult<Posterior<'a>> {
    let coc = art.coc.as_ref().map(|c| c as &dyn CocModel);
    Ok(Posterior::new(cfg.inference_prior(), art.data.clone(), cfg.mcmc.mode, &art.forward, &art.prior, coc)?)
}

/// Prior-centred start with `σ` set to the RMS misfit of the centre.
pub fn initial_state(post: &Posterior, art: &Artifacts) -> CliResult<Vec<f64>> {
    let spec = &post.spec;
    let q = HyperParams::new(spec.amplitude.mean(), spec.length.center());
    let trend = spec.trend.map(|t| t.center());
    let coords = vec![0.0; post.layout.r];
    let pred = art.forward.predict(&coords, trend)?;
    let ms = pred.iter().zip(&art.data).map(|(p, d)| (p - d).powi(2)).sum::<f64>() / art.data.len() as f64;
    let sigma = ms.sqrt().max(1e-12);
    Ok(post.layout.pack(&coords, q, trend, sigma))
}

/// Diagonal starting proposal from prior scales.
pub fn initial_proposal(post: &Posterior) -> DMatrix<f64> {
    let spec = &post.spec;
    let l = &post.layout;
    let mut sd = vec![0.3; l.r];
    if l.amplitude {
        sd.push(0.2 * spec.amplitude.mean());
    }
    if l.length {
        let (lo, hi) = spec.length.support();
        sd.push(0.05 * (hi - lo));
    }
    if let Some(t) = spec.trend {
        sd.push(0.02 * (t.hi - t.lo));
    }
    if l.noise {
        sd.push(0.1);
    }
    let scale = 2.38 * 2.38 / l.dim() as f64 * 0.25;
    DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(sd.len(), sd.iter().map(|s| s * s * scale)))
}

pub fn sample(cfg: &RunConfig) -> CliResult<Chain> {
    let wd = Workdir::new(cfg)?;
    let art = load_artifacts(cfg)?;
    let post = posterior(cfg, &art)?;
    let init = initial_state(&post, &art)?;
    let stream = match cfg.mcmc.mode {
        Mode::Com => streams::CHAIN_COM,
        Mode::Coc => streams::CHAIN_COC,
    };
    let run = cfg.mcmc.run(stage_seed(cfg.mcmc.seed, stream));
    let label = run_label(cfg);
    let ckpt = wd.path(&format!("checkpoint_{label}.json"));
    let ctl = RunControl {
        checkpoint: (run.checkpoint_every > 0).then(|| ckpt.clone()),
        stop_after: None,
    };
    let chain = run_chain(&post, &run, &init, &initial_proposal(&post), &ctl).map_err(|e| match e {
        fieldinv::Error::NonFinite { .. } => CliError::internal(format!("{e}; last checkpoint kept at {}", ckpt.display())),
        other => other.into(),
    })?;
    write_json(&wd.path(&format!("chain_{label}.json")), &chain)?;
    io::write_chain_csv(&wd.path(&format!("chain_{label}.csv")), &chain, &post.layout, &post.spec)?;
    if ckpt.exists() {
        fs::remove_file(&ckpt)?;
    }
    Ok(chain)
}

pub fn load_chain(cfg: &RunConfig) -> CliResult<Chain> {
    let wd = Workdir::new(cfg)?;
    let path = wd.path(&format!("chain_{}.json", run_label(cfg)));
    require(&path, "sample")?;
    read_json(&path)
}

/// Draws of the sampling prior mapped through the posterior's parametrization;
/// `trend` pins `c` instead of drawing it.
pub fn prior_chain<R: Rng>(post: &Posterior, n: usize, trend: Option<f64>, rng: &mut R) -> Chain {
    let spec = &post.spec;
    let samples = (0..n)
        .map(|i| {
            let coords: Vec<f64> = (0..post.layout.r).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let q = HyperParams::new(spec.amplitude.sample(rng), spec.length.sample(rng));
            let drawn = spec.trend.map(|t| t.sample(rng));
            let trend = trend.or(drawn);
            let theta = post.layout.pack(&coords, q, trend, 1.0);
            fieldinv::sampler::Sample {
                step: i as u64,
                theta,
                logpost: 0.0,
                loglik: 0.0,
                accepted: true,
            }
        })
        .collect();
    Chain {
        names: post.layout.names(post.mode),
        mode: post.mode,
        seed: 0,
        samples,
        burn_in_accepted: 0,
        burn_in_steps: 0,
        accepted: 0,
        steps: 0,
        proposal_history: vec![],
    }
}

pub const PRIOR_BAND_DRAWS: usize = 2000;

pub fn post(cfg: &RunConfig) -> CliResult<RunSummary> {
    let wd = Workdir::new(cfg)?;
    let art = load_artifacts(cfg)?;
    let chain = load_chain(cfg)?;
    let truth: Option<Truth> = if wd.truth().exists() { Some(read_json(&wd.truth())?) } else { None };
    let post = posterior(cfg, &art)?;
    let k = cfg.post.k;
    let augment = if k > 0 { Some(ComPrior::with_rank(art.basis.clone(), cfg.basis.r + k)?) } else { None };
    let pc = PostConfig {
        seed: stage_seed(cfg.mcmc.seed, streams::POST_AUGMENT),
        ..cfg.post.clone()
    };
    let fields = postprocess(&post, &chain, &art.basis, augment.as_ref(), &pc)?;
    io::write_quantile_map(&wd.path(&format!("quantiles_{}.csv", run_label(cfg))), &art.basis.grid, &fields)?;

    // iid prior draws in CoM coordinates with c at its posterior mean, so the
    // band measures the fluctuation g - c
    let prior_post = Posterior::new(post.spec, vec![], Mode::Com, &art.forward, &art.prior, None)?;
    let trend_mean = post.layout.trend.then(|| {
        let s: f64 = chain.samples.iter().map(|s| post.layout.unpack(&post.spec, &s.theta).2.unwrap_or(0.0)).sum();
        s / chain.samples.len() as f64
    });
    let mut band_rng = stage_rng(cfg.mcmc.seed, streams::PRIOR_BAND);
    let pchain = prior_chain(&prior_post, PRIOR_BAND_DRAWS, trend_mean, &mut band_rng);
    let prior_fields: FieldSummary = postprocess(&prior_post, &pchain, &art.basis, augment.as_ref(), &PostConfig { stride: 1, ..pc.clone() })?;

    let summary = build_summary(cfg, &post, &chain, &fields, &prior_fields, truth.as_ref(), &art.basis)?;
    write_json(&wd.path(&format!("summary_{}.json", run_label(cfg))), &summary)?;
    Ok(summary)
}
