//! 1D transient diffusion `∂U/∂t = ∂/∂x(ν ∂U/∂x)` on (0, 1) with P1 finite
//! elements and a second-order implicit time integrator.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    /// Crank–Nicolson; the first `startup_steps` steps are each replaced by two
    /// backward-Euler half steps to damp the incompatible initial data.
    #[default]
    CrankNicolson,
    /// BDF2 started by two backward-Euler half steps.
    Bdf2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub t_final: f64,
    pub u_left: f64,
    pub u_right: f64,
    pub u_init: f64,
    pub elements: usize,
    pub steps: usize,
    pub startup_steps: usize,
    pub scheme: TimeScheme,
    pub nx_obs: usize,
    pub nt_obs: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            t_final: 0.05,
            u_left: -1.0,
            u_right: 1.0,
            u_init: 0.0,
            elements: 1140,
            steps: 2080,
            startup_steps: 4,
            scheme: TimeScheme::CrankNicolson,
            nx_obs: 18,
            nt_obs: 13,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) {
            return Err(Error::Invalid(format!("final time must be > 0, got {}", self.t_final)));
        }
        if self.elements < 2 || self.steps == 0 || self.nx_obs == 0 || self.nt_obs == 0 {
            return Err(Error::Invalid("mesh, step and observation counts must be positive".into()));
        }
        if self.elements < self.nx_obs + 1 {
            return Err(Error::Invalid(format!(
                "{} elements cannot resolve {} observation points",
                self.elements, self.nx_obs
            )));
        }
        if self.startup_steps > self.steps {
            return Err(Error::Invalid("more startup steps than steps".into()));
        }
        Ok(())
    }

    pub fn num_obs(&self) -> usize {
        self.nx_obs * self.nt_obs
    }

    /// Observation abscissae `i / (nx + 1)`, `i = 1..=nx`.
    pub fn obs_x(&self) -> Vec<f64> {
        (1..=self.nx_obs).map(|i| i as f64 / (self.nx_obs + 1) as f64).collect()
    }

    /// Observation times `j T / nt`, `j = 1..=nt`.
    pub fn obs_t(&self) -> Vec<f64> {
        (1..=self.nt_obs).map(|j| j as f64 * self.t_final / self.nt_obs as f64).collect()
    }

    /// `(x, t)` of every observation in time-major order.
    pub fn obs_points(&self) -> Vec<(f64, f64)> {
        let xs = self.obs_x();
        self.obs_t().into_iter().flat_map(|t| xs.iter().map(move |&x| (x, t))).collect()
    }
}

/// Solves `(a_i x_{i-1} + b_i x_i + c_i x_{i+1}) = d_i` in place of `d`.
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64], scratch: &mut [f64]) -> Result<()> {
    let n = b.len();
    let mut beta = b[0];
    if beta == 0.0 {
        return Err(Error::Solver("zero pivot in tridiagonal solve".into()));
    }
    d[0] /= beta;
    for i in 1..n {
        scratch[i] = c[i - 1] / beta;
        beta = b[i] - a[i] * scratch[i];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::Solver(format!("zero pivot in tridiagonal solve at row {i}")));
        }
        d[i] = (d[i] - a[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= scratch[i + 1] * d[i + 1];
    }
    Ok(())
}

/// Tridiagonal matrix over interior nodes, stored by diagonals, with the
/// couplings to the two Dirichlet nodes kept separately.
struct Tri {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    left: f64,
    right: f64,
}

impl Tri {
    fn combine(m: &Tri, k: &Tri, alpha: f64) -> Tri {
        let f = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + alpha * y).collect();
        Tri {
            lower: f(&m.lower, &k.lower),
            diag: f(&m.diag, &k.diag),
            upper: f(&m.upper, &k.upper),
            left: m.left + alpha * k.left,
            right: m.right + alpha * k.right,
        }
    }

    fn apply(&self, u: &[f64], ul: f64, ur: f64, out: &mut [f64]) {
        let n = u.len();
        for i in 0..n {
            let mut v = self.diag[i] * u[i];
            if i > 0 {
                v += self.lower[i] * u[i - 1];
            }
            if i + 1 < n {
                v += self.upper[i] * u[i + 1];
            }
            out[i] = v;
        }
        out[0] += self.left * ul;
        out[n - 1] += self.right * ur;
    }
}

/// Piecewise-linear interpolation of nodal values given on a uniform grid of [0, 1].
fn interp_uniform(values: &[f64], x: f64) -> f64 {
    let n = values.len() - 1;
    let pos = (x * n as f64).clamp(0.0, n as f64);
    let i = (pos.floor() as usize).min(n.saturating_sub(1));
    let f = pos - i as f64;
    (1.0 - f) * values[i] + f * values[(i + 1).min(n)]
}

/// Full-mesh solution history at the observation times.
pub struct DiffusionSolution {
    /// Mesh node abscissae.
    pub x: Vec<f64>,
    /// One full nodal vector per observation time.
    pub snapshots: Vec<Vec<f64>>,
}

/// Solves the diffusion problem for a diffusivity given at the nodes of a
/// uniform grid on [0, 1] and returns nodal values at every observation time.
pub fn solve_diffusion_full(nu: &[f64], cfg: &DiffusionConfig) -> Result<DiffusionSolution> {
    cfg.validate()?;
    if nu.len() < 2 {
        return Err(Error::Invalid("diffusivity needs at least two nodes".into()));
    }
    if let Some(bad) = nu.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("diffusivity must be positive and finite, found {bad}")));
    }
    let ne = cfg.elements;
    let h = 1.0 / ne as f64;
    let ni = ne - 1;
    // element diffusivity at midpoints
    let nu_e: Vec<f64> = (0..ne).map(|e| interp_uniform(nu, (e as f64 + 0.5) * h)).collect();

    let mass = Tri {
        lower: vec![h / 6.0; ni],
        diag: vec![4.0 * h / 6.0; ni],
        upper: vec![h / 6.0; ni],
        left: h / 6.0,
        right: h / 6.0,
    };
    let mut stiff = Tri {
        lower: vec![0.0; ni],
        diag: vec![0.0; ni],
        upper: vec![0.0; ni],
        left: -nu_e[0] / h,
        right: -nu_e[ne - 1] / h,
    };
    for i in 0..ni {
        // interior node i + 1 touches elements i and i + 1
        stiff.diag[i] = (nu_e[i] + nu_e[i + 1]) / h;
        stiff.lower[i] = -nu_e[i] / h;
        stiff.upper[i] = -nu_e[i + 1] / h;
    }

    let dt = cfg.t_final / cfg.steps as f64;
    let (ul, ur) = (cfg.u_left, cfg.u_right);
    let mut u = vec![cfg.u_init; ni];
    let mut rhs = vec![0.0; ni];
    let mut tmp = vec![0.0; ni];
    let mut scratch = vec![0.0; ni];

    let be_half = Tri::combine(&mass, &stiff, 0.5 * dt);
    let cn_lhs = Tri::combine(&mass, &stiff, 0.5 * dt);
    let cn_rhs = Tri::combine(&mass, &stiff, -0.5 * dt);
    let bdf_lhs = Tri::combine(&mass, &stiff, 2.0 * dt / 3.0);

    let solve = |m: &Tri, rhs: &mut [f64], scratch: &mut [f64]| -> Result<()> {
        // move Dirichlet couplings to the right-hand side
        rhs[0] -= m.left * ul;
        rhs[ni - 1] -= m.right * ur;
        thomas(&m.lower, &m.diag, &m.upper, rhs, scratch)
    };
    let be_step = |u: &mut Vec<f64>, rhs: &mut Vec<f64>, scratch: &mut Vec<f64>| -> Result<()> {
        // M (u⁺ - u) / (dt/2) + K u⁺ = 0, boundary values constant in time
        mass.apply(u, ul, ur, rhs);
        solve(&be_half, rhs, scratch)?;
        std::mem::swap(u, rhs);
        Ok(())
    };

    let obs_t = cfg.obs_t();
    let mut snapshots = Vec::with_capacity(obs_t.len());
    let mut next_obs = 0;
    let mut prev: Vec<f64> = u.clone();
    let mut prev_prev: Vec<f64> = u.clone();
    let full = |u: &[f64]| {
        let mut v = Vec::with_capacity(ni + 2);
        v.push(ul);
        v.extend_from_slice(u);
        v.push(ur);
        v
    };
    for step in 1..=cfg.steps {
        prev_prev.copy_from_slice(&prev);
        prev.copy_from_slice(&u);
        let startup = match cfg.scheme {
            TimeScheme::CrankNicolson => step <= cfg.startup_steps,
            TimeScheme::Bdf2 => step == 1,
        };
        if startup {
            be_step(&mut u, &mut rhs, &mut scratch)?;
            be_step(&mut u, &mut rhs, &mut scratch)?;
        } else {
            match cfg.scheme {
                TimeScheme::CrankNicolson => {
                    cn_rhs.apply(&u, ul, ur, &mut rhs);
                    solve(&cn_lhs, &mut rhs, &mut scratch)?;
                }
                TimeScheme::Bdf2 => {
                    // (3u⁺ - 4u + u⁻) / (2 dt) M + K u⁺ = 0
                    for i in 0..ni {
                        tmp[i] = (4.0 * u[i] - prev_prev[i]) / 3.0;
                    }
                    mass.apply(&tmp, ul, ur, &mut rhs);
                    solve(&bdf_lhs, &mut rhs, &mut scratch)?;
                }
            }
            std::mem::swap(&mut u, &mut rhs);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("non-finite solution at step {step}")));
        }
        let t_now = step as f64 * dt;
        while next_obs < obs_t.len() && obs_t[next_obs] <= t_now + 1e-12 * cfg.t_final {
            // linear interpolation in time when observation times fall between steps
            let t_prev = t_now - dt;
            let f = ((obs_t[next_obs] - t_prev) / dt).clamp(0.0, 1.0);
            let blended: Vec<f64> = prev.iter().zip(&u).map(|(a, b)| (1.0 - f) * a + f * b).collect();
            snapshots.push(full(&blended));
            next_obs += 1;
        }
    }
    let x = (0..=ne).map(|i| i as f64 * h).collect();
    Ok(DiffusionSolution { x, snapshots })
}

/// The `nx × nt` observation vector, time-major.
pub fn solve_diffusion(nu: &[f64], cfg: &DiffusionConfig) -> Result<Vec<f64>> {
    let sol = solve_diffusion_full(nu, cfg)?;
    let xs = cfg.obs_x();
    let mut out = Vec::with_capacity(cfg.num_obs());
    for snap in &sol.snapshots {
        for &x in &xs {
            out.push(interp_uniform(snap, x));
        }
    }
    Ok(out)
}

/// Observations of `exp(g_true)` corrupted by iid `N(0, σ²)` noise.
pub fn make_synthetic_observations<R: Rng + ?Sized>(g_true: &[f64], sigma: f64, cfg: &DiffusionConfig, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::Invalid(format!("noise level must be >= 0, got {sigma}")));
    }
    let nu: Vec<f64> = g_true.iter().map(|g| g.exp()).collect();
    let mut d = solve_diffusion(&nu, cfg)?;
    for v in d.iter_mut() {
        *v += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(d)
}

/// Fourier-series solution for constant `ν` with the default boundary and
/// initial data: `2x - 1 + Σ_{n even} 4/(nπ) e^{-ν n² π² t} sin(nπx)`.
pub fn analytic_constant(nu: f64, x: f64, t: f64, terms: usize) -> f64 {
    let pi = std::f64::consts::PI;
    let mut u = 2.0 * x - 1.0;
    for k in 1..=terms {
        let n = (2 * k) as f64;
        u += 4.0 / (n * pi) * (-nu * n * n * pi * pi * t).exp() * (n * pi * x).sin();
    }
    u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionPreset {
    /// `g(x) = sin(2πx)`.
    Sin,
    /// `g(x) = -1/2` for `x < 1/2`, `1/2` otherwise.
    Step,
}

impl DiffusionPreset {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            DiffusionPreset::Sin => (2.0 * std::f64::consts::PI * x).sin(),
            DiffusionPreset::Step => {
                if x < 0.5 {
                    -0.5
                } else {
                    0.5
                }
            }
        }
    }
}
