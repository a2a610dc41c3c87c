//! Time discretization of the mild formulation.
//!
//! The scheme is exponential Euler: over each step the semigroup is applied
//! exactly, the drift is frozen at the left endpoint and integrated exactly
//! through `φ₁(Δt) = (-A)^{-1}(I - S(Δt))`, and the noise uses the left-point
//! (Itô) rule:
//!
//! ```text
//! v_{j+1} = S(Δt) (v_j + σ(w_j) ΔW_j) + φ₁(Δt) F(w_j),    u(t_j) = S(t_j) u_0 + v_j
//! ```
//!
//! where `w` is the previous Picard iterate. Every Picard level reuses the
//! same [`WienerPath`].

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::model::{diffusion_euclidean_lipschitz, diffusion_increment_on_grid, DiffusionSpec, NonlinearitySpec};
use crate::operator::{single_term_multiplier_bound, Discretization, EllipticOperator, SpectralMultiplier};
use crate::rng;
use crate::spectral::{lp_norm, SpectralField};

// ---------------------------------------------------------------------------
// Wiener paths
// ---------------------------------------------------------------------------

/// Stream domain tags, so path increments and bridge refinements never
/// share random numbers.
const INCREMENT_TAG: u64 = 0x5769_656e;
const BRIDGE_TAG: u64 = 0x4272_6964;

/// One realization of a `d`-dimensional Wiener process on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerPath {
    noise_dim: usize,
    dt: f64,
    steps: usize,
    seed: u64,
    path_index: u64,
    refinement: u32,
    /// Row-major `steps × noise_dim`.
    increments: Vec<f64>,
}

/// Draws `J` increments `ΔW_j ~ N(0, Δt I)`; step `j` uses the stream keyed
/// by `(seed, path_index, j)`.
pub fn sample_wiener_path(
    noise_dim: usize,
    horizon: f64,
    steps: usize,
    seed: u64,
    path_index: u64,
) -> Result<WienerPath> {
    if steps == 0 {
        return Err(invalid("a Wiener path needs at least one step"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    let dt = horizon / steps as f64;
    let scale = dt.sqrt();
    let mut increments = Vec::with_capacity(steps * noise_dim);
    for j in 0..steps as u64 {
        let mut r = rng::stream(seed, &[INCREMENT_TAG, path_index, j]);
        increments.extend(rng::normals(&mut r, noise_dim).into_iter().map(|z| z * scale));
    }
    Ok(WienerPath { noise_dim, dt, steps, seed, path_index, refinement: 0, increments })
}

impl WienerPath {
    /// A path with given increments, for tests and deterministic surrogates.
    pub fn from_increments(noise_dim: usize, dt: f64, increments: Vec<f64>) -> Result<Self> {
        if noise_dim == 0 && !increments.is_empty() || noise_dim > 0 && !increments.len().is_multiple_of(noise_dim) {
            return Err(Error::SizeMismatch("increments not a multiple of the noise dimension".into()));
        }
        let steps = increments.len().checked_div(noise_dim).unwrap_or(0);
        Ok(WienerPath { noise_dim, dt, steps, seed: 0, path_index: 0, refinement: 0, increments })
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// `ΔW_j`.
    pub fn increment(&self, j: usize) -> &[f64] {
        &self.increments[j * self.noise_dim..(j + 1) * self.noise_dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub(crate) fn increments_mut(&mut self) -> &mut [f64] {
        &mut self.increments
    }

    /// Brownian-bridge refinement to `2J` steps. Each coarse increment `ΔW`
    /// splits into `ΔW/2 + sqrt(Δt/4) Z` and the remainder, so fine pairs sum
    /// back to the coarse increment up to rounding.
    pub fn refine(&self) -> WienerPath {
        let d = self.noise_dim;
        let half = (self.dt / 4.0).sqrt();
        let mut increments = Vec::with_capacity(2 * self.increments.len());
        for j in 0..self.steps {
            let mut r = rng::stream(self.seed, &[BRIDGE_TAG, self.path_index, self.refinement as u64, j as u64]);
            let z = rng::normals(&mut r, d);
            let coarse = self.increment(j);
            let first: Vec<f64> = coarse.iter().zip(&z).map(|(w, z)| 0.5 * w + half * z).collect();
            let second: Vec<f64> = coarse.iter().zip(&first).map(|(w, a)| w - a).collect();
            increments.extend(first);
            increments.extend(second);
        }
        WienerPath {
            noise_dim: d,
            dt: self.dt / 2.0,
            steps: 2 * self.steps,
            seed: self.seed,
            path_index: self.path_index,
            refinement: self.refinement + 1,
            increments,
        }
    }

    /// Sums consecutive pairs of increments, halving the step count.
    pub fn coarsen(&self) -> Result<WienerPath> {
        if !self.steps.is_multiple_of(2) {
            return Err(invalid("cannot coarsen a path with an odd step count"));
        }
        let d = self.noise_dim;
        let mut increments = Vec::with_capacity(self.increments.len() / 2);
        for j in (0..self.steps).step_by(2) {
            for i in 0..d {
                increments.push(self.increment(j)[i] + self.increment(j + 1)[i]);
            }
        }
        Ok(WienerPath {
            noise_dim: d,
            dt: 2.0 * self.dt,
            steps: self.steps / 2,
            seed: self.seed,
            path_index: self.path_index,
            refinement: self.refinement.saturating_sub(1),
            increments,
        })
    }

    /// Steps `start..start + len` as a path of their own.
    pub fn slice(&self, start: usize, len: usize) -> Result<WienerPath> {
        if start + len > self.steps || len == 0 {
            return Err(invalid(format!("slice {start}..{} outside {} steps", start + len, self.steps)));
        }
        Ok(WienerPath {
            increments: self.increments[start * self.noise_dim..(start + len) * self.noise_dim].to_vec(),
            steps: len,
            ..self.clone()
        })
    }

    /// SHA-256 of the increment bytes.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.increments {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Trajectories and configuration
// ---------------------------------------------------------------------------

/// Fields `u(t_j)` at `t_j = j Δt` for `j = 0..=J`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<SpectralField>,
    /// Picard level that produced the trajectory.
    pub level: usize,
    pub path: u64,
    pub config_hash: String,
}

impl Trajectory {
    /// `u(t) = u_0` for every grid time.
    pub fn constant(u0: &SpectralField, dt: f64, steps: usize) -> Self {
        Trajectory { dt, states: vec![u0.clone(); steps + 1], level: 0, path: 0, config_hash: String::new() }
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|j| j as f64 * self.dt).collect()
    }

    pub fn last(&self) -> &SpectralField {
        self.states.last().expect("trajectories are never empty")
    }

    /// SHA-256 of every coefficient in order.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.states {
            h.update(s.to_bytes());
        }
        hex(&h.finalize())
    }

    /// `(∫_0^T ‖self - other‖^q_{L^p} dt)^{1/q}` by the trapezoid rule.
    pub fn distance(&self, other: &Trajectory, p: f64, q: f64) -> Result<f64> {
        if self.states.len() != other.states.len() {
            return Err(Error::SizeMismatch(format!(
                "trajectories with {} and {} time points",
                self.states.len(),
                other.states.len()
            )));
        }
        let norms: Vec<f64> = self
            .states
            .par_iter()
            .zip(&other.states)
            .map(|(a, b)| lp_norm(&a.sub(b)?, p).map(|n| n.powf(q)))
            .collect::<Result<_>>()?;
        Ok(trapezoid(&norms, self.dt).powf(1.0 / q))
    }
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

fn default_dimension() -> usize {
    1
}

fn default_levels() -> usize {
    10
}

fn default_tolerance() -> f64 {
    1e-10
}

/// Discretization and model parameters of one solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    /// Horizon `T`.
    pub horizon: f64,
    /// Number of time steps `J`.
    pub steps: usize,
    /// Mode cutoff `K` per axis.
    pub cutoff: usize,
    /// Lebesgue exponent `p ≥ 2`.
    pub p: f64,
    /// Moment exponent `q > 2`.
    pub q: f64,
    /// Sobolev order `m ≥ 1`.
    pub m: usize,
    /// Maximum Picard level `n_max`.
    #[serde(default = "default_levels")]
    pub picard_levels: usize,
    /// Stop once the trajectory distance between levels drops below this.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Length of the sub-intervals for partitioned solving; defaults to `T`.
    #[serde(default)]
    pub partition_length: Option<f64>,
    #[serde(default)]
    pub operator: EllipticOperator,
    #[serde(default)]
    pub nonlinearity: NonlinearitySpec,
    #[serde(default)]
    pub diffusion: DiffusionSpec,
}

impl SolverConfig {
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 2.0 && self.p.is_finite()) {
            return Err(Error::Config(format!("p must satisfy 2 <= p < inf, got {}", self.p)));
        }
        if !(self.q > 2.0 && self.q.is_finite()) {
            return Err(Error::Config(format!("q must satisfy 2 < q < inf, got {}", self.q)));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.steps == 0 || !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("need a positive horizon and at least one step".into()));
        }
        if self.dimension == 0 {
            return Err(Error::Config("spatial dimension must be at least 1".into()));
        }
        if let Some(t) = self.partition_length {
            if !(t > 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
                return Err(Error::Config(format!(
                    "partition length must lie in (0, T], got {t} with T = {}",
                    self.horizon
                )));
            }
        }
        self.operator.validate(self.dimension)?;
        self.nonlinearity.validate(self.dimension, self.operator.half_order(), self.m)?;
        self.diffusion.validate(self.dimension)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

/// Precomputed step operators for a fixed `Δt`.
pub struct Solver {
    config: SolverConfig,
    disc: Discretization,
    step: SpectralMultiplier,
    phi1: SpectralMultiplier,
    /// `σ_i` as fields when the noise is additive.
    additive_sigma: Option<Vec<SpectralField>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardOptions {
    pub max_levels: usize,
    pub tolerance: f64,
    pub p: f64,
    pub q: f64,
    /// Stop at the first level whose distance falls below the tolerance.
    pub stop_on_convergence: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardResult {
    /// `u^0, …, u^n`.
    pub trajectories: Vec<Trajectory>,
    /// `deltas[n-1]` is the distance between `u^n` and `u^{n-1}`.
    pub deltas: Vec<f64>,
    pub converged: bool,
}

/// Per-level summary when trajectories are not kept.
#[derive(Clone, Debug, PartialEq)]
pub struct PicardSummary {
    pub deltas: Vec<f64>,
    pub converged: bool,
    pub final_level: Trajectory,
}

impl Solver {
    pub fn new(config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        let disc = config.operator.discretize(config.dimension, config.cutoff)?;
        let dt = config.dt();
        let additive_sigma = if config.diffusion.is_additive() {
            Some(config.diffusion.additive_fields(config.dimension, config.cutoff)?)
        } else {
            None
        };
        Ok(Solver {
            step: disc.semigroup_multiplier(dt),
            phi1: disc.phi1_multiplier(dt),
            disc,
            additive_sigma,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn dt(&self) -> f64 {
        self.config.dt()
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    pub fn picard_options(&self) -> PicardOptions {
        PicardOptions {
            max_levels: self.config.picard_levels,
            tolerance: self.config.tolerance,
            p: self.config.p,
            q: self.config.q,
            stop_on_convergence: true,
        }
    }

    fn check_path(&self, path: &WienerPath) -> Result<()> {
        if path.noise_dim() != self.config.diffusion.noise_dim() {
            return Err(Error::SizeMismatch(format!(
                "path has {} noise components, diffusion has {}",
                path.noise_dim(),
                self.config.diffusion.noise_dim()
            )));
        }
        if (path.dt() - self.dt()).abs() > 1e-12 * self.dt() {
            return Err(Error::SizeMismatch(format!(
                "path step {} does not match solver step {}",
                path.dt(),
                self.dt()
            )));
        }
        Ok(())
    }

    /// `S(Δt) σ(w) ΔW + φ₁ F(w)` contributions frozen at `w`.
    fn forcing(&self, w: &SpectralField, dw: &[f64]) -> Result<(SpectralField, SpectralField)> {
        let (dim, cutoff) = (self.config.dimension, self.config.cutoff);
        let needs_grid = !self.config.nonlinearity.is_zero() || self.additive_sigma.is_none();
        let grid = needs_grid.then(|| w.quadrature_grid());
        let drift = if self.config.nonlinearity.is_zero() {
            SpectralField::zeros(dim, cutoff)
        } else {
            self.config.nonlinearity.evaluate_on_grid(grid.as_ref().unwrap(), cutoff)?
        };
        let noise = match &self.additive_sigma {
            Some(sigma) => {
                let mut n = SpectralField::zeros(dim, cutoff);
                for (s, &x) in sigma.iter().zip(dw) {
                    if x != 0.0 {
                        n.axpy(x, s)?;
                    }
                }
                n
            }
            None => diffusion_increment_on_grid(&self.config.diffusion, grid.as_ref().unwrap(), cutoff, dw)?,
        };
        Ok((drift, noise))
    }

    /// `u^n` from `u^{n-1}` by the O(J) recursion.
    pub fn mild_step_accumulate(&self, path: &WienerPath, u0: &SpectralField, prev: &Trajectory) -> Result<Trajectory> {
        self.check_path(path)?;
        if prev.steps() != path.steps() {
            return Err(Error::SizeMismatch(format!(
                "previous iterate has {} steps, path has {}",
                prev.steps(),
                path.steps()
            )));
        }
        u0.check_compatible(&prev.states[0])?;
        let mut states = Vec::with_capacity(path.steps() + 1);
        states.push(u0.clone());
        let mut free = u0.clone();
        let mut v = SpectralField::zeros(u0.dim(), u0.cutoff());
        for j in 0..path.steps() {
            let (drift, noise) = self.forcing(&prev.states[j], path.increment(j))?;
            v.axpy(1.0, &noise)?;
            let mut next = self.step.apply(&v)?;
            self.phi1.apply_add(&drift, 1.0, &mut next)?;
            v = next;
            free = self.step.apply(&free)?;
            states.push(free.add(&v)?);
        }
        Ok(Trajectory {
            dt: path.dt(),
            states,
            level: prev.level + 1,
            path: path.path_index(),
            config_hash: prev.config_hash.clone(),
        })
    }

    /// Single pass of the scheme with the forcing frozen at the current
    /// state: the limit of the Picard iteration.
    pub fn direct(&self, path: &WienerPath, u0: &SpectralField) -> Result<Trajectory> {
        self.check_path(path)?;
        let mut states = Vec::with_capacity(path.steps() + 1);
        states.push(u0.clone());
        let mut u = u0.clone();
        for j in 0..path.steps() {
            let (drift, noise) = self.forcing(&u, path.increment(j))?;
            u.axpy(1.0, &noise)?;
            let mut next = self.step.apply(&u)?;
            self.phi1.apply_add(&drift, 1.0, &mut next)?;
            u = next;
            states.push(u.clone());
        }
        Ok(Trajectory { dt: path.dt(), states, level: usize::MAX, path: path.path_index(), config_hash: String::new() })
    }

    /// Runs the Picard iteration, handing each level to `visit` and keeping
    /// only the latest iterate.
    pub fn picard_iterate(
        &self,
        path: &WienerPath,
        u0: &SpectralField,
        opts: PicardOptions,
        mut visit: impl FnMut(&Trajectory) -> Result<()>,
    ) -> Result<PicardSummary> {
        let mut current = Trajectory::constant(u0, path.dt(), path.steps());
        current.path = path.path_index();
        visit(&current)?;
        let mut deltas = Vec::new();
        let mut converged = false;
        for _ in 0..opts.max_levels {
            let next = self.mild_step_accumulate(path, u0, &current)?;
            let d = next.distance(&current, opts.p, opts.q)?;
            if !d.is_finite() {
                return Err(Error::SolveFailed {
                    path: path.path_index(),
                    level: next.level,
                    reason: "non-finite trajectory distance".into(),
                });
            }
            deltas.push(d);
            visit(&next)?;
            current = next;
            converged = d < opts.tolerance;
            if converged && opts.stop_on_convergence {
                break;
            }
        }
        Ok(PicardSummary { deltas, converged, final_level: current })
    }

    /// Runs the Picard iteration keeping every level.
    pub fn picard_solve(&self, path: &WienerPath, u0: &SpectralField, opts: PicardOptions) -> Result<PicardResult> {
        let mut trajectories = Vec::new();
        let summary = self.picard_iterate(path, u0, opts, |t| {
            trajectories.push(t.clone());
            Ok(())
        })?;
        Ok(PicardResult { trajectories, deltas: summary.deltas, converged: summary.converged })
    }

    /// Solves on consecutive sub-intervals of length `partition_length`,
    /// restarting each from the previous terminal value.
    pub fn partitioned_solve(
        &self,
        path: &WienerPath,
        u0: &SpectralField,
        partition_length: f64,
        opts: PicardOptions,
    ) -> Result<Trajectory> {
        self.check_path(path)?;
        let chunk = (partition_length / path.dt()).round() as usize;
        if chunk == 0 || ((chunk as f64) * path.dt() - partition_length).abs() > 1e-9 * partition_length {
            return Err(invalid(format!(
                "partition length {partition_length} is not a multiple of the step {}",
                path.dt()
            )));
        }
        let mut states = vec![u0.clone()];
        let mut start = 0;
        let mut level = 0;
        while start < path.steps() {
            let len = chunk.min(path.steps() - start);
            let sub = path.slice(start, len)?;
            let init = states.last().unwrap().clone();
            let summary = self.picard_iterate(&sub, &init, opts, |_| Ok(()))?;
            if !summary.converged {
                return Err(Error::SolveFailed {
                    path: path.path_index(),
                    level: summary.deltas.len(),
                    reason: format!(
                        "sub-interval starting at step {start} did not converge (last distance {:e})",
                        summary.deltas.last().copied().unwrap_or(f64::NAN)
                    ),
                });
            }
            level = level.max(summary.final_level.level);
            states.extend(summary.final_level.states.into_iter().skip(1));
            start += len;
        }
        Ok(Trajectory { dt: path.dt(), states, level, path: path.path_index(), config_hash: String::new() })
    }
}

/// `u^n` from `u^{n-1}`.
pub fn mild_step_accumulate(
    solver: &Solver,
    path: &WienerPath,
    u0: &SpectralField,
    prev: &Trajectory,
) -> Result<Trajectory> {
    solver.mild_step_accumulate(path, u0, prev)
}

pub fn picard_solve(solver: &Solver, path: &WienerPath, u0: &SpectralField) -> Result<PicardResult> {
    solver.picard_solve(path, u0, solver.picard_options())
}

pub fn partitioned_solve(solver: &Solver, path: &WienerPath, u0: &SpectralField) -> Result<Trajectory> {
    let t = solver.config().partition_length.unwrap_or(solver.config().horizon);
    solver.partitioned_solve(path, u0, t, solver.picard_options())
}

// ---------------------------------------------------------------------------
// Contraction
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionProbe {
    /// Largest ratio of successive Picard distances over all paths.
    pub measured_rate: f64,
    /// `C (T^{1-δ} + T^{1/2})`.
    pub predicted: f64,
    pub delta: f64,
    pub constant: f64,
    /// Every path produced a zero distance before two comparable levels existed.
    pub degenerate: bool,
}

/// Distances below this fraction of the first distance are at rounding
/// level and excluded from rate estimates.
const RATE_FLOOR: f64 = 1e-10;

/// Largest ratio `deltas[i+1] / deltas[i]` among distances above the
/// rounding floor, or `None` if fewer than two qualify.
pub fn contraction_rate(deltas: &[f64]) -> Option<f64> {
    let first = *deltas.first()?;
    if !(first > 0.0) {
        return None;
    }
    let floor = RATE_FLOOR * first;
    let mut best: Option<f64> = None;
    for w in deltas.windows(2) {
        if w[0] <= floor || w[1] <= floor {
            break;
        }
        let r = w[1] / w[0];
        best = Some(best.map_or(r, |b: f64| b.max(r)));
    }
    best
}

/// `C` in `C (T^{1-δ} + T^{1/2})`, from the certified Lipschitz constants:
/// the drift part bounds `∫ ‖(-A)^δ S(t-s)‖ ‖(-A)^{-δ} D^α‖ L_α ds` and the
/// noise part is the Euclidean Lipschitz constant of `σ`.
pub fn contraction_constant(config: &SolverConfig) -> Result<f64> {
    let op = &config.operator;
    let delta = op.default_delta();
    let smoothing = if delta > 0.0 { (delta / std::f64::consts::E).powf(delta) / (1.0 - delta) } else { 1.0 };
    let mut drift = 0.0;
    for t in &config.nonlinearity.terms {
        let lip = t.function.derivative_bound(1).ok_or_else(|| invalid("uncertified nonlinearity"))?;
        let m = single_term_multiplier_bound(op, delta, &t.alpha, config.dimension, config.cutoff)?;
        drift += t.coefficient.abs() * lip * m * smoothing;
    }
    let noise = diffusion_euclidean_lipschitz(&config.diffusion)?;
    Ok(drift.max(noise))
}

/// Measures Picard contraction over a set of paths.
pub fn contraction_probe(config: &SolverConfig, u0: &SpectralField, paths: &[WienerPath]) -> Result<ContractionProbe> {
    if config.picard_levels < 2 {
        return Err(invalid("contraction probe needs at least two Picard levels"));
    }
    let solver = Solver::new(config)?;
    let opts = PicardOptions { stop_on_convergence: false, ..solver.picard_options() };
    let rates: Vec<Option<f64>> = paths
        .par_iter()
        .map(|path| solver.picard_iterate(path, u0, opts, |_| Ok(())).map(|s| contraction_rate(&s.deltas)))
        .collect::<Result<_>>()?;
    let degenerate = rates.iter().all(Option::is_none);
    let measured_rate = rates.into_iter().flatten().fold(0.0, f64::max);
    let delta = config.operator.default_delta();
    let constant = contraction_constant(config)?;
    let t = config.horizon;
    Ok(ContractionProbe {
        measured_rate,
        predicted: constant * (t.powf(1.0 - delta) + t.sqrt()),
        delta,
        constant,
        degenerate,
    })
}

// ---------------------------------------------------------------------------
// Factorization
// ---------------------------------------------------------------------------

/// `Σ_j e^{-λ(t_J - t_j)} ΔW_j`, the left-point stochastic convolution at
/// the final grid time.
pub fn direct_convolution(lambda: f64, dt: f64, increments: &[f64]) -> f64 {
    let n = increments.len();
    increments.iter().enumerate().map(|(j, w)| (-lambda * dt * (n - j) as f64).exp() * w).sum()
}

/// Gauss-Legendre nodes and weights on `[0, 1]` by Golub-Welsch.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i.abs_diff(j) == 1 {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = nalgebra::SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|i| (0.5 * (eig.eigenvalues[i] + 1.0), eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

const GAUSS_POINTS: usize = 24;

/// Cells within this distance of the diagonal `r = s` or of the endpoint
/// `s = t` get the graded quadrature; the rest use midpoint products.
const NEAR_FIELD: usize = 16;

/// `∫ (t-s)^{α-1} g(s) ds` over one outer cell, in units of `Δt`, where
/// `g(s) = ∫_{inner cell, r < s} (s-r)^{-α} dr`. `m` is the number of whole
/// cells between the outer cell and `t`; `d` is the outer index minus the
/// inner index.
fn kernel_cell_integral(m: usize, d: usize, alpha: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let a1 = 1.0 - alpha;
    // Outer cell [0, 1], inner cell [-d, 1-d], t = 1 + m.
    let t = 1.0 + m as f64;
    let (a, b) = (-(d as f64), 1.0 - d as f64);
    let g = |s: f64| ((s - a).powf(a1) - (s - b).max(0.0).powf(a1)) / a1;
    let (nodes, weights) = rule;
    let mut total = 0.0;
    // Left half: s = x^{1/(1-α)} / 2 grades away the (s - s0)^{1-α} cusp.
    let pl = 1.0 / a1;
    let hl: f64 = 0.5;
    for (x, w) in nodes.iter().zip(weights) {
        let s = hl * x.powf(pl);
        let ds = hl * pl * x.powf(pl - 1.0);
        total += w * (t - s).powf(alpha - 1.0) * g(s) * ds;
    }
    // Right half: t - s = m + h x^{1/α} absorbs the (t - s)^{α-1} singularity.
    let pr = 1.0 / alpha;
    let hr: f64 = 0.5;
    for (x, w) in nodes.iter().zip(weights) {
        let v = hr * x.powf(pr);
        let s = 1.0 - v;
        let dv = hr * pr * x.powf(pr - 1.0);
        total += w * (m as f64 + v).powf(alpha - 1.0) * g(s) * dv;
    }
    total
}

/// The same convolution through the factorization
/// `(1/Γ(α)Γ(1-α)) ∫_0^t (t-s)^{α-1} S(t-s) ∫_0^s (s-r)^{-α} S(s-r) dW(r) ds`.
///
/// Increments are spread uniformly over their cells, so `W` is piecewise
/// linear. For every pair of outer cell `s` and inner cell `r` the double
/// integral of the two power kernels is computed by product quadrature:
/// graded Gauss-Legendre near the diagonal and near `s = t`, cell midpoints
/// elsewhere. The semigroup factors combine to `S(t - r)`, taken as its
/// average over the inner cell.
pub fn factorized_convolution(lambda: f64, dt: f64, increments: &[f64], alpha: f64) -> f64 {
    let weights = factorization_weights(increments.len(), alpha);
    factorized_with_weights(lambda, dt, increments, &weights)
}

/// `Σ_{i ≥ j} K_{ij} / (Γ(α) Γ(1-α))` for every inner cell `j`, where `K_{ij}`
/// is the power-kernel double integral over outer cell `i` and inner cell
/// `j` in units of `Δt`. Exact quadrature would give 1 everywhere.
fn factorization_weights(n: usize, alpha: f64) -> Vec<f64> {
    let a1 = 1.0 - alpha;
    let rule = gauss_legendre(GAUSS_POINTS);
    let outer = |m: usize| ((m as f64 + 1.0).powf(alpha) - (m as f64).powf(alpha)) / alpha;
    let inner_mid = |d: usize| {
        let s = 0.5 + d as f64;
        (s.powf(a1) - (s - 1.0).powf(a1)) / a1
    };
    let kernel = |m: usize, d: usize| {
        if m < NEAR_FIELD || d < NEAR_FIELD {
            kernel_cell_integral(m, d, alpha, &rule)
        } else {
            outer(m) * inner_mid(d)
        }
    };
    // Γ(α) Γ(1-α) = π / sin(πα)
    let norm = (PI * alpha).sin() / PI;
    (0..n).map(|j| (j..n).map(|i| kernel(n - 1 - i, i - j)).sum::<f64>() * norm).collect()
}

fn factorized_with_weights(lambda: f64, dt: f64, increments: &[f64], weights: &[f64]) -> f64 {
    let n = increments.len();
    // Average of e^{-λ(t-r)} over inner cell j is e^{-λ(t - t_{j+1})} φ₁(Δt)/Δt.
    let cell_average = crate::operator::phi1(dt, lambda) / dt;
    increments
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(j, (w, k))| (-lambda * dt * (n - 1 - j) as f64).exp() * cell_average * k * w)
        .sum()
}

/// `(1 - e^{-λt}) / λ`, the deterministic convolution `∫_0^t e^{-λ(t-r)} dr`.
pub fn deterministic_convolution(lambda: f64, t: f64) -> f64 {
    crate::operator::phi1(t, lambda)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorizationCheck {
    pub direct: SpectralField,
    pub factorized: SpectralField,
    /// `‖direct - factorized‖_{L²} / ‖direct‖_{L²}`.
    pub rel_err: f64,
}

/// Compares the direct and factorized stochastic convolutions of an
/// additive noise at `t = t_steps`, mode by mode.
pub fn factorization_check(
    op: &EllipticOperator,
    diffusion: &DiffusionSpec,
    path: &WienerPath,
    alpha: f64,
    steps: usize,
    dim: usize,
    cutoff: usize,
) -> Result<FactorizationCheck> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(format!("factorization exponent must lie in (0, 1/2), got {alpha}")));
    }
    if !op.is_diagonal() {
        return Err(Error::Unsupported("factorization check requires a diagonal operator".into()));
    }
    if !diffusion.is_additive() {
        return Err(Error::Unsupported("factorization check requires additive noise".into()));
    }
    if steps == 0 || steps > path.steps() {
        return Err(invalid(format!("time index {steps} outside 1..={}", path.steps())));
    }
    if diffusion.noise_dim() != path.noise_dim() {
        return Err(Error::SizeMismatch("noise dimension mismatch".into()));
    }
    let sigma = diffusion.additive_fields(dim, cutoff)?;
    let lambdas = op.discretize(dim, cutoff)?.eigenvalues().to_vec();
    let weights = factorization_weights(steps, alpha);
    let mut direct = SpectralField::zeros(dim, cutoff);
    let mut factorized = SpectralField::zeros(dim, cutoff);
    let results: Vec<(num_complex::Complex64, num_complex::Complex64)> = (0..lambdas.len())
        .into_par_iter()
        .map(|k| {
            let coef: Vec<num_complex::Complex64> = sigma.iter().map(|s| s.coefficients()[k]).collect();
            if coef.iter().all(|c| c.norm() == 0.0) {
                return Default::default();
            }
            let (re, im): (Vec<f64>, Vec<f64>) = (0..steps)
                .map(|j| {
                    let dw = path.increment(j);
                    let c: num_complex::Complex64 = coef.iter().zip(dw).map(|(c, w)| c * w).sum();
                    (c.re, c.im)
                })
                .unzip();
            let l = lambdas[k];
            let dt = path.dt();
            (
                num_complex::Complex64::new(direct_convolution(l, dt, &re), direct_convolution(l, dt, &im)),
                num_complex::Complex64::new(
                    factorized_with_weights(l, dt, &re, &weights),
                    factorized_with_weights(l, dt, &im, &weights),
                ),
            )
        })
        .collect();
    for (k, (d, f)) in results.into_iter().enumerate() {
        direct.coefficients_mut()[k] = d;
        factorized.coefficients_mut()[k] = f;
    }
    let norm = direct.energy().sqrt();
    let diff = direct.sub(&factorized)?.energy().sqrt();
    let rel_err = if norm > 0.0 { diff / norm } else { diff };
    Ok(FactorizationCheck { direct, factorized, rel_err })
}

// ---------------------------------------------------------------------------
// Linear oracle
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeVariance {
    pub wavevector: Vec<i64>,
    pub lambda: f64,
    /// `E|c_k(T)|² / Σ_i |σ̂_{i,k}|²` over the paths.
    pub empirical: f64,
    pub std_error: f64,
    /// `(1 - e^{-2λT}) / (2λ)`.
    pub exact: f64,
    /// `Σ_j e^{-2λ(T - t_j)} Δt`, the variance the scheme targets.
    pub scheme: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongOrder {
    pub steps: Vec<usize>,
    /// Root-mean-square `L²` error at `T` against the finest level.
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log Δt`.
    pub order: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearOracleReport {
    pub modes: Vec<ModeVariance>,
    pub paths: usize,
}

fn check_linear(config: &SolverConfig) -> Result<()> {
    if !config.operator.is_diagonal() {
        return Err(Error::Unsupported("linear oracle requires a diagonal operator".into()));
    }
    if !config.nonlinearity.is_zero() || !config.diffusion.is_additive() {
        return Err(invalid("linear oracle requires F = 0 and additive noise"));
    }
    Ok(())
}

/// Per-mode variance at `T` from `paths` independent zero-start solves,
/// against the exact Ornstein-Uhlenbeck variance.
pub fn linear_oracle(config: &SolverConfig, paths: usize, seed: u64) -> Result<LinearOracleReport> {
    check_linear(config)?;
    if paths < 2 {
        return Err(invalid("linear oracle needs at least two paths"));
    }
    let solver = Solver::new(config)?;
    let zero = SpectralField::zeros(config.dimension, config.cutoff);
    let sigma = config.diffusion.additive_fields(config.dimension, config.cutoff)?;
    let finals: Vec<SpectralField> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = sample_wiener_path(config.diffusion.noise_dim(), config.horizon, config.steps, seed, i)?;
            Ok(solver.direct(&path, &zero)?.last().clone())
        })
        .collect::<Result<_>>()?;
    let lambdas = solver.discretization().eigenvalues();
    let dt = config.dt();
    let t = config.horizon;
    let mut modes = Vec::new();
    for (k, &lambda) in lambdas.iter().enumerate() {
        let q: f64 = sigma.iter().map(|s| s.coefficients()[k].norm_sqr()).sum();
        if q == 0.0 {
            continue;
        }
        let samples: Vec<f64> = finals.iter().map(|u| u.coefficients()[k].norm_sqr() / q).collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let scheme: f64 = (0..config.steps).map(|j| (-2.0 * lambda * (t - j as f64 * dt)).exp() * dt).sum();
        modes.push(ModeVariance {
            wavevector: zero.wavevector(k),
            lambda,
            empirical: mean,
            std_error: (var / n).sqrt(),
            exact: -(-2.0 * lambda * t).exp_m1() / (2.0 * lambda),
            scheme,
        });
    }
    Ok(LinearOracleReport { modes, paths })
}

/// Strong convergence order by coupled refinement: each path is sampled at
/// `config.steps` and bridge-refined `levels + extra` times; errors at `T`
/// are measured against the finest refinement.
pub fn strong_order(config: &SolverConfig, paths: usize, levels: usize, seed: u64) -> Result<StrongOrder> {
    check_linear(config)?;
    if levels < 2 {
        return Err(invalid("strong order needs at least two levels"));
    }
    const REFERENCE_GAP: usize = 3;
    let zero = SpectralField::zeros(config.dimension, config.cutoff);
    let solvers: Vec<Solver> = (0..levels + REFERENCE_GAP)
        .map(|l| {
            let cfg = SolverConfig { steps: config.steps << l, ..config.clone() };
            Solver::new(&cfg)
        })
        .collect::<Result<_>>()?;
    let per_path: Vec<Vec<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut path = sample_wiener_path(config.diffusion.noise_dim(), config.horizon, config.steps, seed, i)?;
            let mut finals = Vec::with_capacity(solvers.len());
            for (l, s) in solvers.iter().enumerate() {
                if l > 0 {
                    path = path.refine();
                }
                finals.push(s.direct(&path, &zero)?.last().clone());
            }
            let reference = finals.last().unwrap().clone();
            finals[..levels].iter().map(|u| Ok(u.sub(&reference)?.energy())).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let errors: Vec<f64> =
        (0..levels).map(|l| (per_path.iter().map(|e| e[l]).sum::<f64>() / paths as f64).sqrt()).collect();
    let steps: Vec<usize> = (0..levels).map(|l| config.steps << l).collect();
    let xs: Vec<f64> = steps.iter().map(|&s| (config.horizon / s as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    Ok(StrongOrder { order: slope(&xs, &ys), steps, errors })
}

/// Least-squares slope.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NonlinearTerm, ScalarFunction, SeparableFunction};
    use crate::spectral::{MultiIndex, TrigPolynomial, TWO_PI};
    use approx::assert_relative_eq;

    pub(crate) fn base_config() -> SolverConfig {
        SolverConfig {
            dimension: 1,
            horizon: 0.1,
            steps: 64,
            cutoff: 6,
            p: 2.0,
            q: 3.0,
            m: 1,
            picard_levels: 8,
            tolerance: 1e-12,
            partition_length: None,
            operator: EllipticOperator::default(),
            nonlinearity: NonlinearitySpec::default(),
            diffusion: DiffusionSpec::default(),
        }
    }

    fn sin_x(cutoff: usize) -> SpectralField {
        SpectralField::from_fn(1, cutoff, |x| (TWO_PI * x[0]).sin())
    }

    #[test]
    fn wiener_paths_are_deterministic_and_refine_consistently() {
        let a = sample_wiener_path(2, 1.0, 16, 5, 3).unwrap();
        let b = sample_wiener_path(2, 1.0, 16, 5, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), sample_wiener_path(2, 1.0, 16, 5, 4).unwrap().hash());
        let fine = a.refine();
        assert_eq!(fine.steps(), 32);
        let back = fine.coarsen().unwrap();
        for (x, y) in back.increments().iter().zip(a.increments()) {
            assert!((x - y).abs() <= 1e-14 * y.abs().max(1e-3));
        }
        assert_ne!(fine.refine().increments(), a.refine().refine().coarsen().unwrap().increments());
    }

    #[test]
    fn pure_semigroup_flow() {
        let cfg = base_config();
        let solver = Solver::new(&cfg).unwrap();
        let path = WienerPath::from_increments(0, cfg.dt(), vec![]).unwrap();
        let path = WienerPath { steps: cfg.steps, ..path };
        let u0 = sin_x(6);
        let r = solver.picard_solve(&path, &u0, solver.picard_options()).unwrap();
        assert_eq!(r.deltas[1], 0.0);
        assert!(r.converged);
        let disc = solver.discretization();
        for (j, s) in r.trajectories[1].states.iter().enumerate() {
            let exact = disc.semigroup(j as f64 * cfg.dt(), &u0).unwrap();
            assert!(s.sub(&exact).unwrap().energy().sqrt() < 1e-13);
        }
    }

    #[test]
    fn constant_forcing_is_integrated_exactly() {
        let mut cfg = base_config();
        cfg.operator = EllipticOperator::constant(1.0);
        cfg.nonlinearity = NonlinearitySpec::single(1.0, MultiIndex::zero(1), ScalarFunction::constant(0.7));
        cfg.horizon = 2.0;
        cfg.steps = 20;
        let solver = Solver::new(&cfg).unwrap();
        let path = WienerPath { steps: cfg.steps, ..WienerPath::from_increments(0, cfg.dt(), vec![]).unwrap() };
        let zero = SpectralField::zeros(1, 6);
        let u = solver.mild_step_accumulate(&path, &zero, &Trajectory::constant(&zero, cfg.dt(), cfg.steps)).unwrap();
        for (j, s) in u.states.iter().enumerate() {
            let t = j as f64 * cfg.dt();
            assert_relative_eq!(s.mean(), 0.7 * (1.0 - (-t).exp()), epsilon = 1e-10);
        }
    }

    #[test]
    fn ou_variance_bookkeeping() {
        let mut cfg = base_config();
        cfg.operator = EllipticOperator::constant(2.0);
        cfg.diffusion = DiffusionSpec::constant(1.0);
        cfg.steps = 10;
        cfg.horizon = 1.0;
        let solver = Solver::new(&cfg).unwrap();
        // With unit basis increments the final mean is the weighted sum;
        // feeding e_j isolates each weight.
        let zero = SpectralField::zeros(1, 6);
        let mut total = 0.0;
        for j in 0..10 {
            let mut inc = vec![0.0; 10];
            inc[j] = 1.0;
            let path = WienerPath::from_increments(1, cfg.dt(), inc).unwrap();
            let w = solver.direct(&path, &zero).unwrap().last().mean();
            assert_relative_eq!(w, (-2.0 * (1.0 - j as f64 * 0.1)).exp(), max_relative = 1e-13);
            total += w * w * cfg.dt();
        }
        let expected: f64 = (0..10).map(|j| (-4.0 * (1.0 - j as f64 * 0.1)).exp() * 0.1).sum();
        assert_relative_eq!(total, expected, max_relative = 1e-13);
    }

    fn nonlinear_config() -> SolverConfig {
        let mut cfg = base_config();
        cfg.nonlinearity = NonlinearitySpec::new(vec![
            NonlinearTerm { coefficient: 0.5, alpha: MultiIndex::new([1]), function: ScalarFunction::tanh(1.0) },
            NonlinearTerm { coefficient: 1.0, alpha: MultiIndex::zero(1), function: ScalarFunction::atan(0.5) },
        ]);
        cfg.diffusion = DiffusionSpec::new(vec![SeparableFunction::new(
            TrigPolynomial::constant(0.5).plus(0.2, vec![1], crate::spectral::TrigKind::Cos),
            ScalarFunction::tanh(0.8),
        )]);
        cfg
    }

    #[test]
    fn picard_converges_to_direct_stepping() {
        let mut cfg = nonlinear_config();
        cfg.steps = 16;
        cfg.picard_levels = 40;
        let solver = Solver::new(&cfg).unwrap();
        let path = sample_wiener_path(1, cfg.horizon, cfg.steps, 1, 0).unwrap();
        let u0 = sin_x(6);
        let r = solver.picard_solve(&path, &u0, solver.picard_options()).unwrap();
        assert!(r.converged);
        let direct = solver.direct(&path, &u0).unwrap();
        let d = r.trajectories.last().unwrap().distance(&direct, 2.0, 3.0).unwrap();
        assert!(d < 1e-12, "{d}");
        // Level n agrees with direct stepping on the first n steps.
        let u3 = &r.trajectories[3];
        for j in 0..=3 {
            assert!(u3.states[j].sub(&direct.states[j]).unwrap().energy().sqrt() < 1e-13);
        }
    }

    #[test]
    fn linear_drift_contracts_at_the_lipschitz_rate() {
        let mut cfg = base_config();
        let c = 2.0;
        cfg.nonlinearity = NonlinearitySpec::single(1.0, MultiIndex::zero(1), ScalarFunction::linear(-c));
        cfg.picard_levels = 6;
        let solver = Solver::new(&cfg).unwrap();
        let path = WienerPath { steps: cfg.steps, ..WienerPath::from_increments(0, cfg.dt(), vec![]).unwrap() };
        let opts = PicardOptions { stop_on_convergence: false, ..solver.picard_options() };
        let r = solver.picard_iterate(&path, &sin_x(6), opts, |_| Ok(())).unwrap();
        let rate = contraction_rate(&r.deltas).unwrap();
        assert!(rate <= c * cfg.horizon, "{rate}");
    }

    #[test]
    fn discretization_is_adapted() {
        let cfg = nonlinear_config();
        let solver = Solver::new(&cfg).unwrap();
        let path = sample_wiener_path(1, cfg.horizon, cfg.steps, 2, 0).unwrap();
        let mut perturbed = path.clone();
        let j0 = 20;
        for w in &mut perturbed.increments_mut()[j0..] {
            *w += 1.0;
        }
        let u0 = sin_x(6);
        let opts = PicardOptions { max_levels: 4, stop_on_convergence: false, ..solver.picard_options() };
        let a = solver.picard_solve(&path, &u0, opts).unwrap();
        let b = solver.picard_solve(&perturbed, &u0, opts).unwrap();
        for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
            assert_eq!(ta.states[..=j0], tb.states[..=j0]);
        }
        assert_ne!(a.trajectories[4].states[j0 + 1], b.trajectories[4].states[j0 + 1]);
    }

    #[test]
    fn partitioned_solve_examples() {
        // Linear homogeneous flow concatenates exactly.
        let cfg = base_config();
        let solver = Solver::new(&cfg).unwrap();
        let path = WienerPath { steps: cfg.steps, ..WienerPath::from_increments(0, cfg.dt(), vec![]).unwrap() };
        let u0 = sin_x(6);
        let whole = solver.partitioned_solve(&path, &u0, cfg.horizon, solver.picard_options()).unwrap();
        let parts = solver.partitioned_solve(&path, &u0, cfg.horizon / 4.0, solver.picard_options()).unwrap();
        assert!(whole.distance(&parts, 2.0, 3.0).unwrap() < 1e-14);

        let mut cfg = nonlinear_config();
        cfg.picard_levels = 60;
        let solver = Solver::new(&cfg).unwrap();
        let path = sample_wiener_path(1, cfg.horizon, cfg.steps, 3, 0).unwrap();
        let one = solver.partitioned_solve(&path, &u0, cfg.horizon, solver.picard_options()).unwrap();
        let picard = solver.picard_solve(&path, &u0, solver.picard_options()).unwrap();
        assert!(one.distance(picard.trajectories.last().unwrap(), 2.0, 3.0).unwrap() < 1e-14);
        let two = solver.partitioned_solve(&path, &u0, cfg.horizon / 2.0, solver.picard_options()).unwrap();
        assert!(one.distance(&two, 2.0, 3.0).unwrap() < 1e-10);
        assert!(solver.partitioned_solve(&path, &u0, 0.0123, solver.picard_options()).is_err());
    }

    #[test]
    fn contraction_probe_examples() {
        let mut cfg = base_config();
        cfg.picard_levels = 4;
        let paths = vec![WienerPath { steps: cfg.steps, ..WienerPath::from_increments(0, cfg.dt(), vec![]).unwrap() }];
        let r = contraction_probe(&cfg, &sin_x(6), &paths).unwrap();
        assert_eq!(r.measured_rate, 0.0);
        assert!(r.degenerate);
        assert_eq!(r.delta, 0.5);
        assert_relative_eq!(r.predicted, r.constant * 2.0 * cfg.horizon.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn factorization_surrogate_matches_closed_form() {
        for &lambda in &[1.0, 5.0, 20.0] {
            let n = 2000;
            let t = 1.0;
            let dt = t / n as f64;
            let f = factorized_convolution(lambda, dt, &vec![dt; n], 0.3);
            assert!((f - deterministic_convolution(lambda, t)).abs() < 1e-4, "λ={lambda}: {f}");
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        for k in 0..16 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum();
            assert_relative_eq!(q, 1.0 / (k as f64 + 1.0), max_relative = 1e-13);
        }
    }

    #[test]
    fn kernel_weights_reproduce_the_beta_identity() {
        // The last cell is a pure triangle with a closed form.
        for &alpha in &[0.1, 0.25, 0.4] {
            let w = factorization_weights(200, alpha);
            assert_relative_eq!(w[199], 1.0, max_relative = 1e-6);
            for &k in &w {
                assert!((k - 1.0).abs() < 1e-4, "α={alpha}: {k}");
            }
        }
    }

    #[test]
    fn factorization_check_examples() {
        let op = EllipticOperator::default();
        let zero_noise = DiffusionSpec::constant(0.0);
        let path = sample_wiener_path(1, 1.0, 64, 1, 0).unwrap();
        let r = factorization_check(&op, &zero_noise, &path, 0.25, 64, 1, 2).unwrap();
        assert_eq!(r.direct.energy(), 0.0);
        assert_eq!(r.factorized.energy(), 0.0);
        let sigma = DiffusionSpec::constant(1.0);
        assert!(factorization_check(&op, &sigma, &path, 0.6, 64, 1, 2).is_err());
        let coarse = factorization_check(&op, &sigma, &path, 0.25, 64, 1, 2).unwrap();
        let fine = factorization_check(&op, &sigma, &path.refine(), 0.25, 128, 1, 2).unwrap();
        assert!(fine.rel_err < coarse.rel_err);
    }

    #[test]
    fn zero_noise_gives_zero_variance() {
        let mut cfg = base_config();
        cfg.diffusion = DiffusionSpec::constant(0.0);
        let r = linear_oracle(&cfg, 4, 0).unwrap();
        assert!(r.modes.is_empty());
        cfg.diffusion = DiffusionSpec::constant(1.0);
        let r = linear_oracle(&cfg, 4, 0).unwrap();
        assert_eq!(r.modes.len(), 1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = base_config();
        cfg.q = 2.0;
        assert!(matches!(Solver::new(&cfg), Err(Error::Config(_))));
        let mut cfg = base_config();
        cfg.partition_length = Some(1.0);
        assert!(Solver::new(&cfg).is_err());
        let mut cfg = base_config();
        cfg.nonlinearity = NonlinearitySpec::single(1.0, MultiIndex::new([2]), ScalarFunction::identity());
        assert!(Solver::new(&cfg).is_err());
    }
}
