//! Run configuration: a versioned JSON document merged over a case preset.

use std::path::{Path, PathBuf};

use fieldinv::forward::diffusion::{DiffusionConfig, DiffusionPreset};
use fieldinv::forward::eikonal::{TomoGeometry, VelocityPreset};
use fieldinv::kernels::{AmplitudePrior, LengthPrior, NoisePrior, TrendPrior};
use fieldinv::sampler::{McmcConfig, Mode, PostConfig};
use fieldinv::{HyperPriorSpec, KernelKind, KernelSpec, SpatialGrid};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    TransientDiffusion,
    Tomography,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Nodes per axis: one entry in 1D, `[nx, nz]` in 2D.
    pub nodes: Vec<usize>,
    pub extent: Vec<[f64; 2]>,
}

impl GridConfig {
    pub fn build(&self) -> fieldinv::Result<SpatialGrid> {
        match (self.nodes.as_slice(), self.extent.as_slice()) {
            ([n], [e]) => SpatialGrid::uniform_1d(e[0], e[1], *n),
            ([nx, nz], [ex, ez]) => SpatialGrid::tensor_2d((ex[0], ex[1], *nx), (ez[0], ez[1], *nz)),
            _ => Err(fieldinv::Error::Invalid("grid needs matching 1D or 2D nodes/extent".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub r: usize,
    /// Eigenpairs kept on disk, at least `r + K`.
    pub stored_rank: usize,
    /// Gauss–Legendre nodes in the length CDF for the averaged kernel.
    pub length_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ForwardConfig {
    Diffusion(DiffusionConfig),
    Tomography(TomoGeometry),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub forward_level: usize,
    pub forward_validation: usize,
    /// Exit code 3 when the forward RRMSE exceeds this.
    pub forward_rrmse_max: Option<f64>,
    pub prior_order: usize,
    pub prior_order_max: usize,
    pub prior_rrmse_max: f64,
    pub prior_validation: usize,
    pub build_coc: bool,
    pub coc_order: usize,
    pub coc_internal_rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthPreset {
    Sin,
    Step,
    Base,
    Lw,
    Sw,
}

impl TruthPreset {
    pub fn diffusion(self) -> Option<DiffusionPreset> {
        match self {
            TruthPreset::Sin => Some(DiffusionPreset::Sin),
            TruthPreset::Step => Some(DiffusionPreset::Step),
            _ => None,
        }
    }

    pub fn velocity(self) -> Option<VelocityPreset> {
        match self {
            TruthPreset::Base => Some(VelocityPreset::Base),
            TruthPreset::Lw => Some(VelocityPreset::Lw),
            TruthPreset::Sw => Some(VelocityPreset::Sw),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub preset: Option<TruthPreset>,
    /// Nodal true log-field (one value per grid node, last CSV column).
    pub truth_file: Option<PathBuf>,
    /// Externally supplied observations; skips synthesis in `make-data`.
    pub observations: Option<PathBuf>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcBlock {
    pub steps: u64,
    pub burn_in: u64,
    pub adapt_interval: u64,
    pub thin: u64,
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub checkpoint_every: u64,
    pub mode: Mode,
    /// Point mass on the correlation length for sampling only; the basis is
    /// still built from the full hyperprior.
    pub fixed_length: Option<f64>,
}

impl McmcBlock {
    /// Chain settings with the chain's own seed.
    pub fn run(&self, chain_seed: u64) -> McmcConfig {
        McmcConfig {
            steps: self.steps,
            burn_in: self.burn_in,
            adapt_interval: self.adapt_interval,
            thin: self.thin,
            seed: chain_seed,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub case: Case,
    pub kernel: KernelSpec,
    pub grid: GridConfig,
    pub basis: BasisConfig,
    pub forward: ForwardConfig,
    pub surrogate: SurrogateConfig,
    pub data: DataConfig,
    pub mcmc: McmcBlock,
    pub post: PostConfig,
    pub paths: PathsConfig,
}

/// Tomography domain side in meters.
pub const TOMO_SIDE: f64 = 125.0;

impl RunConfig {
    pub fn transient_diffusion() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            case: Case::TransientDiffusion,
            kernel: KernelSpec {
                kind: KernelKind::SquaredExponential,
                hyper_prior: HyperPriorSpec {
                    amplitude: AmplitudePrior::InvGamma { shape: 3.0, scale: 1.0 },
                    length: LengthPrior::LogUniform { lo: 0.1, hi: 0.7 },
                    trend: None,
                    noise: NoisePrior::Jeffreys,
                },
            },
            grid: GridConfig {
                nodes: vec![201],
                extent: vec![[0.0, 1.0]],
            },
            basis: BasisConfig {
                r: 8,
                stored_rank: 24,
                length_nodes: 64,
            },
            forward: ForwardConfig::Diffusion(DiffusionConfig::default()),
            surrogate: SurrogateConfig {
                forward_level: 3,
                forward_validation: 50,
                forward_rrmse_max: None,
                prior_order: 15,
                prior_order_max: 30,
                prior_rrmse_max: 1e-3,
                prior_validation: 1000,
                build_coc: true,
                coc_order: 15,
                coc_internal_rank: 32,
            },
            data: DataConfig {
                preset: Some(TruthPreset::Sin),
                truth_file: None,
                observations: None,
                sigma: 0.1,
            },
            mcmc: McmcBlock {
                steps: 200_000,
                burn_in: 50_000,
                adapt_interval: 5_000,
                thin: 10,
                seed: 2024,
                checkpoint_every: 50_000,
                mode: Mode::Com,
                fixed_length: None,
            },
            post: PostConfig {
                k: 0,
                stride: 10,
                map_mode: fieldinv::sampler::MapMode::Posterior,
                seed: 0,
            },
            paths: PathsConfig { workdir: PathBuf::from(".") },
        }
    }

    pub fn tomography() -> Self {
        let side = TOMO_SIDE;
        Self {
            schema_version: SCHEMA_VERSION,
            case: Case::Tomography,
            kernel: KernelSpec {
                kind: KernelKind::SquaredExponential,
                hyper_prior: HyperPriorSpec {
                    amplitude: AmplitudePrior::InvGamma { shape: 21.0, scale: 1.0 },
                    length: LengthPrior::Uniform { lo: 10.0, hi: 100.0 },
                    trend: Some(TrendPrior { lo: 6.9, hi: 8.1 }),
                    noise: NoisePrior::Jeffreys,
                },
            },
            grid: GridConfig {
                nodes: vec![61, 61],
                extent: vec![[0.0, side], [0.0, side]],
            },
            basis: BasisConfig {
                r: 20,
                stored_rank: 80,
                length_nodes: 32,
            },
            forward: ForwardConfig::Tomography(TomoGeometry::standard(side, side, 61, 61)),
            surrogate: SurrogateConfig {
                forward_level: 2,
                forward_validation: 30,
                forward_rrmse_max: None,
                prior_order: 15,
                prior_order_max: 30,
                prior_rrmse_max: 1e-3,
                prior_validation: 1000,
                build_coc: false,
                coc_order: 15,
                coc_internal_rank: 80,
            },
            data: DataConfig {
                preset: Some(TruthPreset::Base),
                truth_file: None,
                observations: None,
                sigma: 0.002,
            },
            mcmc: McmcBlock {
                steps: 400_000,
                burn_in: 100_000,
                adapt_interval: 5_000,
                thin: 10,
                seed: 2024,
                checkpoint_every: 50_000,
                mode: Mode::Com,
                fixed_length: None,
            },
            post: PostConfig {
                k: 60,
                stride: 10,
                map_mode: fieldinv::sampler::MapMode::Likelihood,
                seed: 0,
            },
            paths: PathsConfig { workdir: PathBuf::from(".") },
        }
    }

    pub fn preset(case: Case) -> Option<Self> {
        match case {
            Case::TransientDiffusion => Some(Self::transient_diffusion()),
            Case::Tomography => Some(Self::tomography()),
            Case::Custom => None,
        }
    }

    /// Parses a document; for preset cases, missing fields come from the preset.
    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        let user: Value = serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid JSON: {e}")))?;
        let case_value = user.get("case").cloned().ok_or_else(|| CliError::config("case: missing field".to_string()))?;
        let case: Case = serde_json::from_value(case_value).map_err(|e| CliError::config(format!("case: {e}")))?;
        let merged = match Self::preset(case) {
            Some(p) => {
                let mut base = serde_json::to_value(p).expect("presets serialize");
                merge(&mut base, user);
                base
            }
            None => user,
        };
        let cfg: RunConfig = serde_path_to_error::deserialize(merged).map_err(|e| CliError::config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |path: &str, msg: String| Err(CliError::config(format!("{path}: {msg}")));
        if self.schema_version != SCHEMA_VERSION {
            return bad("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        if let Err(e) = self.kernel.hyper_prior.validate() {
            return bad("kernel.hyper_prior", e.to_string());
        }
        let grid = match self.grid.build() {
            Ok(g) => g,
            Err(e) => return bad("grid", e.to_string()),
        };
        let b = &self.basis;
        if b.r == 0 || b.r > grid.len() {
            return bad("basis.r", format!("must be in 1..={}, got {}", grid.len(), b.r));
        }
        if b.stored_rank < b.r + self.post.k || b.stored_rank > grid.len() {
            return bad(
                "basis.stored_rank",
                format!("must be in {}..={} (r + post.k up to the grid size), got {}", b.r + self.post.k, grid.len(), b.stored_rank),
            );
        }
        if b.length_nodes == 0 {
            return bad("basis.length_nodes", "must be >= 1".into());
        }
        let s = &self.surrogate;
        if s.forward_level == 0 || s.forward_level > fieldinv::chaos::rules::MAX_LEVEL {
            return bad("surrogate.forward_level", format!("must be in 1..={}", fieldinv::chaos::rules::MAX_LEVEL));
        }
        if s.prior_order > s.prior_order_max {
            return bad("surrogate.prior_order", "exceeds prior_order_max".into());
        }
        if s.build_coc && s.coc_internal_rank < b.r {
            return bad("surrogate.coc_internal_rank", format!("must be >= r = {}", b.r));
        }
        match (&self.forward, grid.dim()) {
            (ForwardConfig::Diffusion(d), 1) => {
                if let Err(e) = d.validate() {
                    return bad("forward.diffusion", e.to_string());
                }
                if self.grid.extent[0] != [0.0, 1.0] {
                    return bad("grid.extent", "diffusion runs on [0, 1]".into());
                }
                if self.kernel.hyper_prior.trend.is_some() {
                    return bad("kernel.hyper_prior.trend", "diffusion case has no trend".into());
                }
            }
            (ForwardConfig::Tomography(g), 2) => {
                if let Err(e) = g.validate() {
                    return bad("forward.tomography", e.to_string());
                }
                if self.grid.extent != vec![[0.0, g.width], [0.0, g.height]] {
                    return bad("grid.extent", "must equal [[0, width], [0, height]] of the geometry".into());
                }
            }
            _ => return bad("forward", "diffusion needs a 1D grid and tomography a 2D grid".into()),
        }
        if let Err(e) = self.mcmc.run(0).validate() {
            return bad("mcmc", e.to_string());
        }
        if let Some(l) = self.mcmc.fixed_length {
            if !(l > 0.0) {
                return bad("mcmc.fixed_length", "must be > 0".into());
            }
        }
        if self.post.stride == 0 {
            return bad("post.stride", "must be >= 1".into());
        }
        if !(self.data.sigma >= 0.0) {
            return bad("data.sigma", "must be >= 0".into());
        }
        if let Some(p) = self.data.preset {
            let ok = match self.forward {
                ForwardConfig::Diffusion(_) => p.diffusion().is_some(),
                ForwardConfig::Tomography(_) => p.velocity().is_some(),
            };
            if !ok {
                return bad("data.preset", format!("{p:?} does not match the forward model"));
            }
        }
        if self.data.preset.is_none() && self.data.truth_file.is_none() && self.data.observations.is_none() {
            return bad("data", "needs a preset, truth_file or observations".into());
        }
        Ok(())
    }

    /// Hyperprior used for sampling, with the optional length point mass.
    pub fn inference_prior(&self) -> HyperPriorSpec {
        let mut spec = self.kernel.hyper_prior;
        if let Some(l) = self.mcmc.fixed_length {
            spec.length = LengthPrior::Fixed { value: l };
        }
        spec
    }
}

/// Recursive object merge; non-object values in `patch` replace `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}
