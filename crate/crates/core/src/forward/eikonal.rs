//! 2D eikonal traveltimes `|∇t| = 1/v` by fast marching, tomography geometry
//! and synthetic layered velocity models.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::SpatialGrid;
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FmmOrder {
    #[default]
    First,
    /// Second-order one-sided differences where two upwind nodes are known.
    Second,
}

/// Bilinear interpolation of nodal values on a 2D tensor grid; points outside
/// are clamped to the boundary.
pub fn bilinear(grid: &SpatialGrid, values: &[f64], x: f64, z: f64) -> f64 {
    let (ax, az) = (&grid.axes[0], &grid.axes[1]);
    let nz = az.len();
    let locate = |c: &[f64], p: f64| {
        let n = c.len();
        let h = (c[n - 1] - c[0]) / (n - 1) as f64;
        let pos = ((p - c[0]) / h).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        (i, pos - i as f64)
    };
    let (i, fx) = locate(&ax.coords, x);
    let (k, fz) = locate(&az.coords, z);
    let v = |a: usize, b: usize| values[a * nz + b];
    (1.0 - fx) * ((1.0 - fz) * v(i, k) + fz * v(i, k + 1)) + fx * ((1.0 - fz) * v(i + 1, k) + fz * v(i + 1, k + 1))
}

#[derive(Clone, Copy, PartialEq)]
struct Trial(f64, usize);

impl Eq for Trial {}

impl Ord for Trial {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on time
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Far,
    Trial,
    Known,
}

/// Traveltimes with the node acceptance order.
pub struct EikonalSolution {
    pub times: Vec<f64>,
    pub accepted: Vec<usize>,
    /// Nodes initialized analytically around the source.
    pub seeded: Vec<usize>,
}

fn check_uniform_2d(grid: &SpatialGrid) -> Result<(usize, usize, f64, f64)> {
    if grid.dim() != 2 {
        return Err(Error::Invalid("eikonal solver needs a 2D grid".into()));
    }
    let (ax, az) = (&grid.axes[0], &grid.axes[1]);
    let (nx, nz) = (ax.len(), az.len());
    let hx = (ax.coords[nx - 1] - ax.coords[0]) / (nx - 1) as f64;
    let hz = (az.coords[nz - 1] - az.coords[0]) / (nz - 1) as f64;
    Ok((nx, nz, hx, hz))
}

pub fn solve_eikonal(grid: &SpatialGrid, v: &[f64], source: [f64; 2], order: FmmOrder) -> Result<Vec<f64>> {
    Ok(solve_eikonal_traced(grid, v, source, order)?.times)
}

pub fn solve_eikonal_traced(grid: &SpatialGrid, v: &[f64], source: [f64; 2], order: FmmOrder) -> Result<EikonalSolution> {
    let (nx, nz, hx, hz) = check_uniform_2d(grid)?;
    check_len("solve_eikonal (velocity)", nx * nz, v.len())?;
    if let Some(bad) = v.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain(format!("velocity must be positive and finite, found {bad}")));
    }
    let (ax, az) = (&grid.axes[0], &grid.axes[1]);
    let inside = |c: &[f64], p: f64| p >= c[0] && p <= c[c.len() - 1];
    if !inside(&ax.coords, source[0]) || !inside(&az.coords, source[1]) {
        return Err(Error::Invalid(format!("source {:?} outside the grid", source)));
    }
    let slow: Vec<f64> = v.iter().map(|x| 1.0 / x).collect();
    let n = nx * nz;
    let mut t = vec![f64::INFINITY; n];
    let mut state = vec![State::Far; n];
    let mut heap = BinaryHeap::new();

    // analytic seed on the four corners of the source cell
    let s_src = 1.0 / bilinear(grid, v, source[0], source[1]);
    let ix0 = (((source[0] - ax.coords[0]) / hx).floor() as usize).min(nx - 2);
    let iz0 = (((source[1] - az.coords[0]) / hz).floor() as usize).min(nz - 2);
    // factor t = t0 τ with t0 the constant-velocity time from the source
    let t0: Vec<f64> = (0..n)
        .map(|idx| s_src * (ax.coords[idx / nz] - source[0]).hypot(az.coords[idx % nz] - source[1]))
        .collect();
    let grad0 = |idx: usize, axis: usize| {
        let d = (ax.coords[idx / nz] - source[0]).hypot(az.coords[idx % nz] - source[1]);
        if d == 0.0 {
            return 0.0;
        }
        let c = if axis == 0 { ax.coords[idx / nz] - source[0] } else { az.coords[idx % nz] - source[1] };
        s_src * c / d
    };
    let mut tau = vec![f64::INFINITY; n];
    let mut seeded = Vec::with_capacity(4);
    for (i, k) in [(ix0, iz0), (ix0 + 1, iz0), (ix0, iz0 + 1), (ix0 + 1, iz0 + 1)] {
        let idx = i * nz + k;
        let d = (ax.coords[i] - source[0]).hypot(az.coords[k] - source[1]);
        t[idx] = d * 0.5 * (s_src + slow[idx]);
        tau[idx] = if t0[idx] > 0.0 { t[idx] / t0[idx] } else { 1.0 };
        state[idx] = State::Known;
        seeded.push(idx);
    }
    let mut accepted: Vec<usize> = Vec::with_capacity(n);
    let mut sorted_seed = seeded.clone();
    sorted_seed.sort_by(|a, b| t[*a].total_cmp(&t[*b]));
    accepted.extend_from_slice(&sorted_seed);

    let neighbours = |idx: usize| {
        let (i, k) = (idx / nz, idx % nz);
        let mut out = [usize::MAX; 4];
        if i > 0 {
            out[0] = idx - nz;
        }
        if i + 1 < nx {
            out[1] = idx + nz;
        }
        if k > 0 {
            out[2] = idx - 1;
        }
        if k + 1 < nz {
            out[3] = idx + 1;
        }
        out
    };

    // Upwind update of τ at `idx` from known neighbours. Along each axis the
    // factored derivative is `a τ + b`; the smaller known neighbour sets the side.
    let update = |idx: usize, t: &[f64], tau: &[f64], state: &[State]| -> (f64, f64) {
        let (i, k) = (idx / nz, idx % nz);
        let known = |j: usize| state[j] == State::Known;
        // (a, b, sign of the upwind side, upwind time)
        let mut terms: [(f64, f64, f64, f64); 2] = [(0.0, 0.0, 0.0, 0.0); 2];
        let mut count = 0;
        for (axis, (pos, len, stride, h)) in [(i, nx, nz, hx), (k, nz, 1usize, hz)].into_iter().enumerate() {
            let mut best: Option<(f64, f64, f64, f64)> = None;
            for dir in [-1i64, 1] {
                let p1 = pos as i64 + dir;
                if p1 < 0 || p1 >= len as i64 {
                    continue;
                }
                let j1 = (idx as i64 + dir * stride as i64) as usize;
                if !known(j1) || best.is_some_and(|b| t[j1] >= b.3) {
                    continue;
                }
                let delta = dir as f64;
                let (mut c, mut tt) = (1.0, tau[j1]);
                if order == FmmOrder::Second {
                    let p2 = pos as i64 + 2 * dir;
                    if p2 >= 0 && p2 < len as i64 {
                        let j2 = (idx as i64 + 2 * dir * stride as i64) as usize;
                        if known(j2) && t[j2] <= t[j1] {
                            c = 1.5;
                            tt = (4.0 * tau[j1] - tau[j2]) / 3.0;
                        }
                    }
                }
                let g = grad0(idx, axis);
                let scale = c * t0[idx] / h;
                best = Some((g - delta * scale, delta * scale * tt, delta, t[j1]));
            }
            if let Some(b) = best {
                terms[count] = b;
                count += 1;
            }
        }
        let s = slow[idx];
        // a causal stencil has the time increasing away from every upwind neighbour
        let causal = |tau_new: f64, term: &(f64, f64, f64, f64)| term.2 * (term.0 * tau_new + term.1) <= 1e-12 * s;
        let one_sided = |term: &(f64, f64, f64, f64)| {
            let cand = (-term.2 * s - term.1) / term.0;
            if cand.is_finite() && t0[idx] * cand >= term.3 {
                cand
            } else {
                // degenerate factor: fall back to the plain update from that neighbour
                f64::INFINITY
            }
        };
        let mut best = f64::INFINITY;
        if count == 2 {
            let (a1, b1) = (terms[0].0, terms[0].1);
            let (a2, b2) = (terms[1].0, terms[1].1);
            let qa = a1 * a1 + a2 * a2;
            let qb = 2.0 * (a1 * b1 + a2 * b2);
            let qc = b1 * b1 + b2 * b2 - s * s;
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 && qa > 0.0 {
                for root in [(-qb + disc.sqrt()) / (2.0 * qa), (-qb - disc.sqrt()) / (2.0 * qa)] {
                    if causal(root, &terms[0]) && causal(root, &terms[1]) && t0[idx] * root >= terms[0].3.max(terms[1].3) {
                        best = best.min(root);
                    }
                }
            }
        }
        if !best.is_finite() {
            for term in &terms[..count] {
                best = best.min(one_sided(term));
            }
        }
        (t0[idx] * best, best)
    };

    for &s in &seeded {
        for j in neighbours(s) {
            if j != usize::MAX && state[j] != State::Known {
                let (val, tj) = update(j, &t, &tau, &state);
                if val < t[j] {
                    t[j] = val;
                    tau[j] = tj;
                    state[j] = State::Trial;
                    heap.push(Trial(val, j));
                }
            }
        }
    }
    while let Some(Trial(val, idx)) = heap.pop() {
        if state[idx] == State::Known || val > t[idx] {
            continue;
        }
        state[idx] = State::Known;
        accepted.push(idx);
        for j in neighbours(idx) {
            if j != usize::MAX && state[j] != State::Known {
                let (val, tj) = update(j, &t, &tau, &state);
                if val < t[j] {
                    t[j] = val;
                    tau[j] = tj;
                    state[j] = State::Trial;
                    heap.push(Trial(val, j));
                }
            }
        }
    }
    Ok(EikonalSolution { times: t, accepted, seeded })
}

/// Rectangular tomography domain `[0, width] × [0, height]` with depth `z`
/// increasing downward, its traveltime solver grid and the acquisition layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomoGeometry {
    pub width: f64,
    pub height: f64,
    pub nx: usize,
    pub nz: usize,
    pub sources: Vec<[f64; 2]>,
    pub receivers: Vec<[f64; 2]>,
    #[serde(default)]
    pub order: FmmOrder,
}

impl TomoGeometry {
    /// 5 sources on the line `x = 0.1 W` at depths `0.1 H ..= 0.5 H` and 23
    /// receivers at depth `0.02 H` spread over `0.12 W ..= 0.98 W`.
    pub fn standard(width: f64, height: f64, nx: usize, nz: usize) -> Self {
        let sources = (0..5).map(|i| [0.1 * width, (0.1 + 0.1 * i as f64) * height]).collect();
        let receivers = (0..23).map(|j| [(0.12 + 0.86 * j as f64 / 22.0) * width, 0.02 * height]).collect();
        Self {
            width,
            height,
            nx,
            nz,
            sources,
            receivers,
            order: FmmOrder::First,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) || self.nx < 2 || self.nz < 2 {
            return Err(Error::Invalid("tomography domain and grid must be non-degenerate".into()));
        }
        if self.sources.is_empty() || self.receivers.is_empty() {
            return Err(Error::Invalid("need at least one source and one receiver".into()));
        }
        for p in self.sources.iter().chain(&self.receivers) {
            if !(0.0..=self.width).contains(&p[0]) || !(0.0..=self.height).contains(&p[1]) {
                return Err(Error::Invalid(format!("acquisition point {p:?} outside the domain")));
            }
        }
        Ok(())
    }

    pub fn num_obs(&self) -> usize {
        self.sources.len() * self.receivers.len()
    }

    pub fn solver_grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::tensor_2d((0.0, self.width, self.nx), (0.0, self.height, self.nz))
    }

    /// Grid over the same domain with a different resolution.
    pub fn field_grid(&self, nx: usize, nz: usize) -> Result<SpatialGrid> {
        SpatialGrid::tensor_2d((0.0, self.width, nx), (0.0, self.height, nz))
    }
}

/// Traveltimes for every (source, receiver) pair, source-major. `v` lives on
/// `field`, which is resampled bilinearly onto the solver grid when it differs.
pub fn predict_traveltimes(v: &[f64], field: &SpatialGrid, geom: &TomoGeometry) -> Result<Vec<f64>> {
    geom.validate()?;
    check_len("predict_traveltimes (velocity)", field.len(), v.len())?;
    let solver = geom.solver_grid()?;
    let resampled;
    let vs = if solver == *field {
        v
    } else {
        let nz = geom.nz;
        resampled = (0..solver.len())
            .map(|i| bilinear(field, v, solver.axes[0].coords[i / nz], solver.axes[1].coords[i % nz]))
            .collect::<Vec<_>>();
        &resampled
    };
    let per_source: Vec<Vec<f64>> = geom
        .sources
        .par_iter()
        .map(|&s| {
            let t = solve_eikonal(&solver, vs, s, geom.order)?;
            Ok(geom.receivers.iter().map(|r| bilinear(&solver, &t, r[0], r[1])).collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_source.concat())
}

pub fn make_synthetic_traveltimes<R: Rng + ?Sized>(v: &[f64], field: &SpatialGrid, geom: &TomoGeometry, sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::Invalid(format!("noise level must be >= 0, got {sigma}")));
    }
    let mut d = predict_traveltimes(v, field, geom)?;
    for x in d.iter_mut() {
        *x += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityPreset {
    Base,
    /// Base log-profile smoothed by a Gaussian of width `2 LAYER_SCALE`.
    Lw,
    /// Base velocity times `1 + 0.05 sin(2πx/25) sin(2πz/25)`.
    Sw,
}

/// Interface velocities of the layered profile in m/s, top to bottom.
pub const LAYER_VELOCITIES: [f64; 5] = [1400.0, 1700.0, 2000.0, 2300.0, 2600.0];
/// Interface depths as fractions of the domain height.
pub const INTERFACE_DEPTHS: [f64; 4] = [0.12, 0.3, 0.5, 0.72];
/// Half-width of each tanh transition in meters.
pub const LAYER_SCALE: f64 = 4.0;
pub const SW_AMPLITUDE: f64 = 0.05;
pub const SW_WAVELENGTH: f64 = 25.0;

/// `log v` of the base profile at depth `z` in a domain of height `height`.
pub fn base_log_velocity(z: f64, height: f64) -> f64 {
    let mut v = LAYER_VELOCITIES[0].ln();
    for (k, frac) in INTERFACE_DEPTHS.iter().enumerate() {
        let jump = LAYER_VELOCITIES[k + 1].ln() - LAYER_VELOCITIES[k].ln();
        v += 0.5 * jump * (1.0 + ((z - frac * height) / LAYER_SCALE).tanh());
    }
    v
}

/// Base log-profile convolved with a centered Gaussian of standard deviation
/// `2 LAYER_SCALE`; the profile extends analytically beyond the domain.
pub fn smoothed_log_velocity(z: f64, height: f64) -> f64 {
    let sd = 2.0 * LAYER_SCALE;
    let m = 600;
    let span = 6.0 * sd;
    let h = 2.0 * span / m as f64;
    let mut acc = 0.0;
    let mut norm = 0.0;
    for i in 0..=m {
        let u = -span + i as f64 * h;
        let w = if i == 0 || i == m { 0.5 } else { 1.0 } * (-0.5 * (u / sd).powi(2)).exp();
        acc += w * base_log_velocity(z - u, height);
        norm += w;
    }
    acc / norm
}

pub fn preset_velocity(preset: VelocityPreset, x: f64, z: f64, height: f64) -> f64 {
    match preset {
        VelocityPreset::Base => base_log_velocity(z, height).exp(),
        VelocityPreset::Lw => smoothed_log_velocity(z, height).exp(),
        VelocityPreset::Sw => {
            let k = 2.0 * std::f64::consts::PI / SW_WAVELENGTH;
            base_log_velocity(z, height).exp() * (1.0 + SW_AMPLITUDE * (k * x).sin() * (k * z).sin())
        }
    }
}

/// Nodal velocity of a preset on a 2D grid whose second axis is depth.
pub fn synthetic_velocity(preset: VelocityPreset, grid: &SpatialGrid) -> Result<Vec<f64>> {
    if grid.dim() != 2 {
        return Err(Error::Invalid("synthetic velocity needs a 2D grid".into()));
    }
    let az = &grid.axes[1];
    let height = az.coords[az.len() - 1] - az.coords[0];
    Ok((0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            preset_velocity(preset, p[0], p[1] - az.coords[0], height)
        })
        .collect())
}
