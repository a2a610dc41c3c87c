//! Monte Carlo moment estimation over Picard levels, scaling studies in the
//! initial condition, frozen verification suites and their baselines.
//!
//! The time integral of the trajectory distance lives in [`crate::solver`];
//! everything here is an expectation over independent paths. Paths are
//! solved in parallel and reduced in path order, so a report depends only on
//! the configuration and the master seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis;
use crate::error::{invalid, Error, Result};
use crate::model::{
    gamma_norm_closed, gamma_norm_mc, gaussian_moment_constant, growth_and_lipschitz_certify, Certifiable,
    DiffusionSpec, McEstimate, NonlinearTerm, NonlinearitySpec, ScalarFunction, SeparableFunction,
};
use crate::operator::{apply_semigroup, smoothing_bound_check, EllipticOperator};
use crate::rng;
use crate::solver::{
    self, contraction_probe, factorization_check, linear_oracle, sample_wiener_path, Solver, SolverConfig, Trajectory,
    WienerPath,
};
use crate::spectral::{derivative, lp_norm, MultiIndex, SpectralField, TrigKind, TrigPolynomial, TWO_PI};

const INITIAL_TAG: u64 = 0x496e_6974;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Initial data `u_0`, shared by every path or drawn per path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// The same trigonometric polynomial on every path.
    Deterministic { field: TrigPolynomial },
    /// A random trigonometric polynomial with modes up to `bandwidth`,
    /// coefficients damped by `(1 + |k|²)^{-decay/2}` and rescaled so that
    /// `‖u_0‖_{W^{m,p}} = target` exactly on every path.
    RandomTrig {
        bandwidth: usize,
        #[serde(default = "default_decay")]
        decay: f64,
        target: f64,
    },
}

fn default_decay() -> f64 {
    2.0
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Deterministic { field: analysis::unit_sine(1) }
    }
}

impl InitialCondition {
    /// `u_0 → s u_0`.
    pub fn scaled(&self, s: f64) -> InitialCondition {
        match self {
            InitialCondition::Deterministic { field } => InitialCondition::Deterministic { field: field.scaled(s) },
            InitialCondition::RandomTrig { bandwidth, decay, target } => {
                InitialCondition::RandomTrig { bandwidth: *bandwidth, decay: *decay, target: target * s }
            }
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, InitialCondition::RandomTrig { .. })
    }

    fn validate(&self, cfg: &SolverConfig) -> Result<()> {
        match self {
            InitialCondition::Deterministic { field } => {
                field.check_dim(cfg.dimension).map_err(|e| Error::Config(e.to_string()))?;
                if field.bandwidth() > cfg.cutoff {
                    return Err(Error::Config(format!(
                        "initial field has modes up to {} beyond the cutoff {}",
                        field.bandwidth(),
                        cfg.cutoff
                    )));
                }
            }
            InitialCondition::RandomTrig { bandwidth, decay, target } => {
                if *bandwidth == 0 || *bandwidth > cfg.cutoff {
                    return Err(Error::Config(format!(
                        "initial bandwidth must lie in 1..={}, got {bandwidth}",
                        cfg.cutoff
                    )));
                }
                if !(target.is_finite() && *target >= 0.0 && decay.is_finite()) {
                    return Err(Error::Config(format!("invalid initial target {target} or decay {decay}")));
                }
            }
        }
        Ok(())
    }

    /// `u_0` on path `path` for master seed `seed`.
    pub fn sample(&self, cfg: &SolverConfig, seed: u64, path: u64) -> Result<SpectralField> {
        match self {
            InitialCondition::Deterministic { field } => field.to_field(cfg.dimension, cfg.cutoff),
            InitialCondition::RandomTrig { bandwidth, decay, target } => {
                let mut r = rng::stream(seed, &[INITIAL_TAG, path]);
                let f = rng::random_field(&mut r, cfg.dimension, *bandwidth, *decay).with_cutoff(cfg.cutoff);
                let norm = crate::spectral::sobolev_norm(&f, cfg.m, cfg.p)?;
                if !(norm > 0.0) {
                    return Err(Error::NonFinite("random initial condition normalization".into()));
                }
                Ok(f.scale(target / norm))
            }
        }
    }
}

fn default_batches() -> usize {
    10
}

fn default_scales() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 4.0]
}

fn default_snapshots() -> usize {
    1
}

/// Output and estimator options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Number of batches for batch-means standard errors.
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Initial-condition scales for the scaling study.
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    /// Paths whose final state is written out by `simulate`.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    /// Also write raw trajectory dumps from `simulate`.
    #[serde(default)]
    pub binary_dump: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            batches: default_batches(),
            scales: default_scales(),
            snapshots: default_snapshots(),
            binary_dump: false,
        }
    }
}

fn default_paths() -> usize {
    100
}

/// A full Monte Carlo experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Number of independent paths `M`.
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// Master seed.
    #[serde(default)]
    pub seed: u64,
    pub solver: SolverConfig,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub report: ReportOptions,
}

impl ExperimentConfig {
    pub fn new(solver: SolverConfig, initial: InitialCondition, paths: usize, seed: u64) -> Self {
        ExperimentConfig { paths, seed, solver, initial, report: ReportOptions::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::Config("need at least one path".into()));
        }
        if self.report.batches == 0 {
            return Err(Error::Config("need at least one batch".into()));
        }
        if self.report.scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("scales must be finite and non-negative".into()));
        }
        self.solver.validate()?;
        self.initial.validate(&self.solver)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        content_hash(self)
    }
}

/// SHA-256 of the JSON serialization of `value`.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("plain data always serializes");
    solver::hex(&Sha256::digest(&bytes))
}

// ---------------------------------------------------------------------------
// Moments
// ---------------------------------------------------------------------------

/// `(‖u‖_{W^{m,p}}, ‖u‖_{W^{1,mp}})` from one set of derivative grids.
pub fn sobolev_pair(u: &SpectralField, m: usize, p: f64) -> Result<(f64, f64)> {
    let mp = m as f64 * p;
    let (mut high, mut low) = (0.0, 0.0);
    for alpha in MultiIndex::all_up_to(u.dim(), m) {
        let grid = if alpha.is_zero() { u.quadrature_grid() } else { derivative(u, &alpha)?.quadrature_grid() };
        high += grid.mean_abs_pow(p);
        if alpha.order() <= 1 {
            low += grid.mean_abs_pow(mp);
        }
    }
    Ok((high.powf(1.0 / p), low.powf(1.0 / mp)))
}

/// Mean and batch-means standard error. Batches are contiguous blocks in
/// path order; with fewer than two batches the error is reported as zero.
pub fn batch_means(samples: &[f64], batches: usize) -> McEstimate {
    let n = samples.len();
    if n == 0 {
        return McEstimate { estimate: 0.0, std_error: 0.0 };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let b = batches.min(n);
    if b < 2 {
        return McEstimate { estimate: mean, std_error: 0.0 };
    }
    let means: Vec<f64> = (0..b)
        .map(|j| {
            let block = &samples[j * n / b..(j + 1) * n / b];
            block.iter().sum::<f64>() / block.len() as f64
        })
        .collect();
    let mb = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (b as f64 - 1.0);
    McEstimate { estimate: mean, std_error: (var / b as f64).sqrt() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMoments {
    pub level: usize,
    /// `E sup_t ‖u^n(t)‖^q_{W^{m,p}}`.
    pub high: McEstimate,
    /// `E sup_t ‖u^n(t)‖^{mq}_{W^{1,mp}}`.
    pub low: McEstimate,
    /// Mean trajectory distance to the previous level (zero at level 0).
    pub mean_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub config_hash: String,
    pub paths: usize,
    /// Levels `0..=n_max`.
    pub levels: Vec<LevelMoments>,
    /// `E‖u_0‖^q_{W^{m,p}}`.
    pub initial_high: McEstimate,
    /// `E‖u_0‖^{mq}_{W^{1,mp}}`.
    pub initial_low: McEstimate,
    pub times: Vec<f64>,
    /// `E‖u^{n_max}(t_j)‖^q_{W^{m,p}}` at every grid time.
    pub time_high: Vec<f64>,
    /// `E‖u^{n_max}(t_j)‖^{mq}_{W^{1,mp}}` at every grid time.
    pub time_low: Vec<f64>,
    /// Relative change in the final-level sup moment when the sup is taken
    /// over every other grid time only.
    pub grid_sensitivity: f64,
    /// Smallest `C` with `K_n ≤ C (1 + E‖u_0‖^q_{W^{m,p}} + E‖u_0‖^{mq}_{W^{1,mp}})`
    /// at every level.
    pub fitted_constant: f64,
    /// Paths whose last Picard distance fell below the tolerance.
    pub converged_paths: usize,
    /// Hash of the final-level trajectory of every path.
    pub trajectory_hashes: Vec<String>,
}

impl MomentReport {
    /// `K_n`, the `W^{m,p}` sequence.
    pub fn k_sequence(&self) -> Vec<McEstimate> {
        self.levels.iter().map(|l| l.high).collect()
    }

    pub fn low_sequence(&self) -> Vec<McEstimate> {
        self.levels.iter().map(|l| l.low).collect()
    }

    pub fn final_level(&self) -> &LevelMoments {
        self.levels.last().expect("reports always hold level 0")
    }
}

struct PathMoments {
    high: Vec<f64>,
    low: Vec<f64>,
    deltas: Vec<f64>,
    final_high: Vec<f64>,
    final_low: Vec<f64>,
    coarse_high: f64,
    u0: (f64, f64),
    hash: String,
    converged: bool,
}

fn with_path_context(err: Error, path: u64, level: usize) -> Error {
    match err {
        e @ Error::SolveFailed { .. } => e,
        e => Error::SolveFailed { path, level, reason: e.to_string() },
    }
}

fn path_moments(solver: &Solver, cfg: &ExperimentConfig, path: &WienerPath, u0: &SpectralField) -> Result<PathMoments> {
    let sc = &cfg.solver;
    let (q, mq) = (sc.q, sc.m as f64 * sc.q);
    let n_max = sc.picard_levels;
    let mut out = PathMoments {
        high: Vec::with_capacity(n_max + 1),
        low: Vec::with_capacity(n_max + 1),
        deltas: Vec::new(),
        final_high: Vec::new(),
        final_low: Vec::new(),
        coarse_high: 0.0,
        u0: (0.0, 0.0),
        hash: String::new(),
        converged: false,
    };
    let (h0, l0) = sobolev_pair(u0, sc.m, sc.p)?;
    out.u0 = (h0.powf(q), l0.powf(mq));
    let opts = solver::PicardOptions { stop_on_convergence: false, ..solver.picard_options() };
    let id = path.path_index();
    let summary = solver.picard_iterate(path, u0, opts, |traj| {
        let last = traj.level == n_max;
        let hash_before = last.then(|| traj.hash());
        let (mut sup_h, mut sup_l, mut coarse) = (0.0f64, 0.0f64, 0.0f64);
        for (j, state) in traj.states.iter().enumerate() {
            let (h, l) = sobolev_pair(state, sc.m, sc.p).map_err(|e| with_path_context(e, id, traj.level))?;
            let (h, l) = (h.powf(q), l.powf(mq));
            if !(h.is_finite() && l.is_finite()) {
                return Err(Error::SolveFailed {
                    path: id,
                    level: traj.level,
                    reason: format!("non-finite Sobolev norm at step {j}"),
                });
            }
            sup_h = sup_h.max(h);
            sup_l = sup_l.max(l);
            if last {
                out.final_high.push(h);
                out.final_low.push(l);
                if j % 2 == 0 {
                    coarse = coarse.max(h);
                }
            }
        }
        out.high.push(sup_h);
        out.low.push(sup_l);
        if let Some(before) = hash_before {
            let after = traj.hash();
            if before != after {
                return Err(Error::SolveFailed {
                    path: id,
                    level: traj.level,
                    reason: "trajectory changed during aggregation".into(),
                });
            }
            out.hash = after;
            out.coarse_high = coarse;
        }
        Ok(())
    });
    let summary = summary.map_err(|e| with_path_context(e, id, 0))?;
    out.deltas = summary.deltas;
    out.converged = summary.converged;
    Ok(out)
}

/// Per-path Picard moments averaged over `cfg.paths` paths.
pub fn run_moments(cfg: &ExperimentConfig) -> Result<MomentReport> {
    cfg.validate()?;
    let sc = &cfg.solver;
    let solver = Solver::new(sc)?;
    let results: Vec<PathMoments> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = sample_wiener_path(sc.diffusion.noise_dim(), sc.horizon, sc.steps, cfg.seed, i)?;
            let u0 = cfg.initial.sample(sc, cfg.seed, i)?;
            path_moments(&solver, cfg, &path, &u0)
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(cfg, &results))
}

fn aggregate(cfg: &ExperimentConfig, results: &[PathMoments]) -> MomentReport {
    let b = cfg.report.batches;
    let n_max = cfg.solver.picard_levels;
    let column = |f: &dyn Fn(&PathMoments) -> f64| -> Vec<f64> { results.iter().map(f).collect() };
    let levels: Vec<LevelMoments> = (0..=n_max)
        .map(|n| LevelMoments {
            level: n,
            high: batch_means(&column(&|r| r.high[n]), b),
            low: batch_means(&column(&|r| r.low[n]), b),
            mean_delta: if n == 0 {
                0.0
            } else {
                column(&|r| r.deltas[n - 1]).iter().sum::<f64>() / results.len() as f64
            },
        })
        .collect();
    let initial_high = batch_means(&column(&|r| r.u0.0), b);
    let initial_low = batch_means(&column(&|r| r.u0.1), b);
    let points = cfg.solver.steps + 1;
    let time_mean = |f: &dyn Fn(&PathMoments, usize) -> f64| -> Vec<f64> {
        (0..points).map(|j| results.iter().map(|r| f(r, j)).sum::<f64>() / results.len() as f64).collect()
    };
    let time_high = time_mean(&|r, j| r.final_high[j]);
    let time_low = time_mean(&|r, j| r.final_low[j]);
    let full = levels[n_max].high.estimate;
    let coarse = column(&|r| r.coarse_high).iter().sum::<f64>() / results.len() as f64;
    let grid_sensitivity = if full > 0.0 { (full - coarse) / full } else { 0.0 };
    let rhs = 1.0 + initial_high.estimate + initial_low.estimate;
    let fitted_constant = levels.iter().map(|l| l.high.estimate / rhs).fold(0.0, f64::max);
    MomentReport {
        config_hash: cfg.hash(),
        paths: results.len(),
        levels,
        initial_high,
        initial_low,
        times: (0..points).map(|j| j as f64 * cfg.solver.dt()).collect(),
        time_high,
        time_low,
        grid_sensitivity,
        fitted_constant,
        converged_paths: results.iter().filter(|r| r.converged).count(),
        trajectory_hashes: results.iter().map(|r| r.hash.clone()).collect(),
    }
}

// ---------------------------------------------------------------------------
// Uniformity in n
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityCheck {
    pub plateau_pass: bool,
    /// `K_n = E sup_t ‖u^n‖^q_{W^{m,p}}`.
    pub k_sequence: Vec<f64>,
    pub k_std_errors: Vec<f64>,
    /// `E sup_t ‖u^n‖^{mq}_{W^{1,mp}}`.
    pub low_sequence: Vec<f64>,
    /// Geometric rate of `|K_{n+1} - K_n|` fitted over levels `n ≥ 1`.
    pub tail_rate: Option<f64>,
}

/// `K_last ≤ 1.1 K_mid + 3 sqrt(se_last² + se_mid²)` with `mid = ⌈n_max/2⌉`.
pub fn plateau(seq: &[McEstimate]) -> Result<bool> {
    if seq.len() < 6 {
        return Err(invalid(format!("plateau check needs n_max >= 5, got {}", seq.len().saturating_sub(1))));
    }
    let n_max = seq.len() - 1;
    let (last, mid) = (seq[n_max], seq[n_max.div_ceil(2)]);
    let se = last.std_error.hypot(mid.std_error);
    Ok(last.estimate <= 1.1 * mid.estimate + 3.0 * se)
}

fn tail_rate(seq: &[f64]) -> Option<f64> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for n in 1..seq.len().saturating_sub(1) {
        let d = (seq[n + 1] - seq[n]).abs();
        if d > 1e-14 * seq[n].abs().max(f64::MIN_POSITIVE) {
            xs.push(n as f64);
            ys.push(d.ln());
        }
    }
    (xs.len() >= 2).then(|| solver::slope(&xs, &ys).exp())
}

/// Checks that both moment sequences plateau across late Picard levels.
pub fn uniformity_check(report: &MomentReport) -> Result<UniformityCheck> {
    let k = report.k_sequence();
    let low = report.low_sequence();
    let plateau_pass = plateau(&k)? && plateau(&low)?;
    let k_sequence: Vec<f64> = k.iter().map(|e| e.estimate).collect();
    Ok(UniformityCheck {
        plateau_pass,
        tail_rate: tail_rate(&k_sequence),
        k_std_errors: k.iter().map(|e| e.std_error).collect(),
        low_sequence: low.iter().map(|e| e.estimate).collect(),
        k_sequence,
    })
}

// ---------------------------------------------------------------------------
// Scaling in the initial condition
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub scale: f64,
    /// `E sup_t ‖u(t)‖^q_{W^{m,p}}` at the last Picard level.
    pub sup_moment: McEstimate,
    pub initial_high: McEstimate,
    pub initial_low: McEstimate,
    /// `sup_moment / (1 + initial_high + initial_low)`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub config_hash: String,
    pub rows: Vec<ScalingRow>,
    /// Smallest constant covering every row.
    pub constant: f64,
}

/// Reruns the moments with `u_0 → s u_0` for every scale, using the same
/// paths at each scale.
pub fn theorem_scaling_study(cfg: &ExperimentConfig, scales: &[f64]) -> Result<ScalingTable> {
    if scales.is_empty() || scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(invalid("scales must be finite, non-negative and non-empty"));
    }
    let mut rows = Vec::with_capacity(scales.len());
    for &s in scales {
        let scaled = ExperimentConfig { initial: cfg.initial.scaled(s), ..cfg.clone() };
        let r = run_moments(&scaled)?;
        let sup_moment = r.final_level().high;
        let ratio = sup_moment.estimate / (1.0 + r.initial_high.estimate + r.initial_low.estimate);
        rows.push(ScalingRow { scale: s, sup_moment, initial_high: r.initial_high, initial_low: r.initial_low, ratio });
    }
    let constant = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    if !constant.is_finite() {
        return Err(Error::NonFinite("scaling constant".into()));
    }
    Ok(ScalingTable { config_hash: cfg.hash(), rows, constant })
}

// ---------------------------------------------------------------------------
// Simulation output
// ---------------------------------------------------------------------------

/// Norms of one state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSample {
    pub lp: f64,
    pub high: f64,
    pub low: f64,
}

pub struct Simulation {
    pub times: Vec<f64>,
    /// `series[path][j]`.
    pub series: Vec<Vec<NormSample>>,
    /// Full trajectories of the first `report.snapshots` paths.
    pub snapshots: Vec<Trajectory>,
}

/// Direct-stepping solves of every path with per-time norms.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulation> {
    cfg.validate()?;
    let sc = &cfg.solver;
    let solver = Solver::new(sc)?;
    let hash = cfg.hash();
    let keep = cfg.report.snapshots as u64;
    let runs: Vec<(Vec<NormSample>, Option<Trajectory>)> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = sample_wiener_path(sc.diffusion.noise_dim(), sc.horizon, sc.steps, cfg.seed, i)?;
            let u0 = cfg.initial.sample(sc, cfg.seed, i)?;
            let mut traj = solver.direct(&path, &u0).map_err(|e| with_path_context(e, i, 0))?;
            traj.config_hash = hash.clone();
            let norms = traj
                .states
                .iter()
                .map(|s| {
                    let (high, low) = sobolev_pair(s, sc.m, sc.p)?;
                    Ok(NormSample { lp: lp_norm(s, sc.p)?, high, low })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((norms, (i < keep).then_some(traj)))
        })
        .collect::<Result<_>>()?;
    let (series, snapshots): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok(Simulation {
        times: (0..=sc.steps).map(|j| j as f64 * sc.dt()).collect(),
        series,
        snapshots: snapshots.into_iter().flatten().collect(),
    })
}

/// Writes CSV rows after a `# config_hash: …` header line.
pub fn write_csv(path: &Path, config_hash: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# config_hash: {config_hash}").unwrap();
    writeln!(out, "{}", header.join(",")).unwrap();
    for row in rows {
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config_hash: &'a str,
    config: &'a ExperimentConfig,
    report: &'a T,
}

/// Pretty JSON whose first field line is the config hash, followed by the
/// full configuration and the report.
pub fn write_json<T: Serialize>(path: &Path, cfg: &ExperimentConfig, report: &T) -> Result<()> {
    let hash = cfg.hash();
    let env = Envelope { config_hash: &hash, config: cfg, report };
    fs::write(path, serde_json::to_string_pretty(&env)? + "\n")?;
    Ok(())
}

/// Raw trajectory: a text header line with the config hash and layout, then
/// little-endian `f64` pairs for every coefficient of every state.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let first = &traj.states[0];
    let mut f = fs::File::create(path)?;
    writeln!(
        f,
        "spde-trajectory config_hash={} dim={} cutoff={} states={} dt={:e}",
        traj.config_hash,
        first.dim(),
        first.cutoff(),
        traj.states.len(),
        traj.dt
    )?;
    for s in &traj.states {
        f.write_all(&s.to_bytes())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Frozen suites
// ---------------------------------------------------------------------------

/// Bounded smooth nonlinearity `a tanh(u) + b ∂_x atan(u)`.
fn suite_nonlinearity(dim: usize, a: f64, b: f64) -> NonlinearitySpec {
    NonlinearitySpec::new(vec![
        NonlinearTerm { coefficient: a, alpha: MultiIndex::zero(dim), function: ScalarFunction::tanh(1.0) },
        NonlinearTerm { coefficient: b, alpha: MultiIndex::unit(dim, 0), function: ScalarFunction::atan(1.0) },
    ])
}

/// Multiplicative noise `(c + c/2 cos 2πx) sin(u)` plus a constant additive component.
fn suite_diffusion(c: f64, additive: f64) -> DiffusionSpec {
    DiffusionSpec::new(vec![
        SeparableFunction::new(
            TrigPolynomial::constant(c).plus(0.5 * c, vec![1], TrigKind::Cos),
            ScalarFunction::Sine { amplitude: 1.0, frequency: 1.0 },
        ),
        SeparableFunction::constant(additive),
    ])
}

/// Small-horizon nonlinear configuration for contraction measurements.
pub fn contraction_suite(horizon: f64) -> SolverConfig {
    SolverConfig {
        dimension: 1,
        horizon,
        steps: 128,
        cutoff: 16,
        p: 2.0,
        q: 3.0,
        m: 1,
        picard_levels: 8,
        tolerance: 1e-13,
        partition_length: None,
        operator: EllipticOperator::diagonal(1, 0.05, 1.0),
        nonlinearity: suite_nonlinearity(1, 1.0, 0.5),
        diffusion: suite_diffusion(0.5, 0.2),
    }
}

/// Contractive nonlinear experiment for uniform-in-`n` moment checks.
pub fn uniformity_suite(paths: usize, cutoff: usize, steps: usize) -> ExperimentConfig {
    let solver = SolverConfig {
        dimension: 1,
        horizon: 0.5,
        steps,
        cutoff,
        p: 2.0,
        q: 3.0,
        m: 2,
        picard_levels: 10,
        tolerance: 1e-12,
        partition_length: None,
        operator: EllipticOperator::diagonal(1, 0.05, 1.0),
        nonlinearity: suite_nonlinearity(1, 1.0, 0.25),
        diffusion: suite_diffusion(0.5, 0.2),
    };
    let initial = InitialCondition::RandomTrig { bandwidth: 4.min(cutoff), decay: 2.0, target: 2.0 };
    ExperimentConfig::new(solver, initial, paths, 0x556e_6966)
}

/// Experiment behind the pinned scaling constant.
pub fn scaling_suite() -> ExperimentConfig {
    let mut cfg = uniformity_suite(40, 8, 64);
    cfg.solver.picard_levels = 6;
    cfg.seed = 0x5363_616c;
    cfg
}

pub const SCALING_SUITE_SCALES: [f64; 4] = [0.0, 1.0, 2.0, 4.0];

/// Size of the frozen Moser suite.
pub const MOSER_SUITE_SIZE: usize = 100;

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// A stored regression value with an integrity checksum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub name: String,
    pub values: BTreeMap<String, f64>,
    /// SHA-256 of the canonical JSON of `values`.
    pub checksum: String,
}

impl Baseline {
    pub fn new(name: &str, values: BTreeMap<String, f64>) -> Self {
        let checksum = values_checksum(&values);
        Baseline { name: name.to_string(), values, checksum }
    }

    pub fn get(&self, key: &str) -> Result<f64> {
        self.values
            .get(key)
            .copied()
            .ok_or_else(|| Error::BaselineMismatch(format!("baseline `{}` has no value `{key}`", self.name)))
    }
}

fn values_checksum(values: &BTreeMap<String, f64>) -> String {
    solver::hex(&Sha256::digest(serde_json::to_vec(values).expect("maps of floats serialize")))
}

/// Default baseline directory of this crate.
pub fn default_baseline_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/baselines"))
}

/// Reads and verifies `dir/name.json`.
pub fn load_baseline(dir: &Path, name: &str) -> Result<Baseline> {
    let path = dir.join(format!("{name}.json"));
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::BaselineMismatch(format!(
            "cannot read {}: {e}; regenerate deliberately with --regenerate-baselines",
            path.display()
        ))
    })?;
    let b: Baseline = serde_json::from_str(&text)
        .map_err(|e| Error::BaselineMismatch(format!("{} is not a valid baseline: {e}", path.display())))?;
    if b.name != name {
        return Err(Error::BaselineMismatch(format!("{} holds baseline `{}`", path.display(), b.name)));
    }
    let expected = values_checksum(&b.values);
    if b.checksum != expected {
        return Err(Error::BaselineMismatch(format!(
            "{}: checksum {} does not match contents ({expected})",
            path.display(),
            b.checksum
        )));
    }
    Ok(b)
}

pub fn store_baseline(dir: &Path, baseline: &Baseline) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.json", baseline.name));
    fs::write(path, serde_json::to_string_pretty(baseline)? + "\n")?;
    Ok(())
}

/// Rounds `x > 0` up to `digits` significant figures.
pub fn round_up_significant(x: f64, digits: i32) -> f64 {
    if !(x > 0.0 && x.is_finite()) {
        return x;
    }
    let scale = 10f64.powi(digits - 1 - x.log10().floor() as i32);
    (x * scale).ceil() / scale
}

// ---------------------------------------------------------------------------
// Full verification
// ---------------------------------------------------------------------------

pub const SUITES: [&str; 5] = ["operator", "model", "analysis", "solver", "harness"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub suites: Vec<SuiteReport>,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    /// Runs only suites whose name contains this string.
    pub filter: Option<String>,
    pub baseline_dir: PathBuf,
    /// Overwrite stored baselines with freshly measured values.
    pub regenerate: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { filter: None, baseline_dir: default_baseline_dir(), regenerate: false }
    }
}

type Check = fn(&VerifyOptions) -> Result<(bool, String)>;

fn checks_for(suite: &str) -> Vec<(&'static str, Check)> {
    match suite {
        "operator" => vec![("semigroup_exactness", check_semigroup as Check), ("smoothing_bound", check_smoothing)],
        "model" => vec![("gamma_norms", check_gamma_norms), ("growth_certificate", check_growth)],
        "analysis" => vec![("chain_rule_counts", check_chain_counts), ("moser_baseline", check_moser)],
        "solver" => vec![
            ("adaptedness", check_adaptedness),
            ("picard_limit", check_picard_limit),
            ("linear_oracle", check_linear_oracle),
            ("factorization", check_factorization),
            ("contraction", check_contraction),
        ],
        "harness" => vec![
            ("deterministic_moments", check_deterministic_moments),
            ("uniformity", check_uniformity),
            ("scaling_baseline", check_scaling),
        ],
        _ => vec![],
    }
}

/// Runs every suite selected by the filter with frozen seeds. Baseline
/// corruption aborts with [`Error::BaselineMismatch`]; any other failure is
/// recorded against its check.
pub fn run_full_verification(opts: &VerifyOptions) -> Result<VerificationReport> {
    let selected: Vec<&str> =
        SUITES.iter().copied().filter(|s| opts.filter.as_deref().is_none_or(|f| s.contains(f))).collect();
    if selected.is_empty() {
        return Err(Error::Config(format!(
            "filter {:?} matches none of {}",
            opts.filter.as_deref().unwrap_or(""),
            SUITES.join(", ")
        )));
    }
    let mut suites = Vec::new();
    for name in selected {
        let mut checks = Vec::new();
        for (check, f) in checks_for(name) {
            let (passed, detail) = match f(opts) {
                Ok(r) => r,
                Err(e @ Error::BaselineMismatch(_)) => return Err(e),
                Err(e) => (false, format!("error: {e}")),
            };
            checks.push(CheckResult { name: check.to_string(), passed, detail });
        }
        suites.push(SuiteReport { name: name.to_string(), checks });
    }
    let passed = suites.iter().all(SuiteReport::passed);
    Ok(VerificationReport { suites, passed })
}

const VERIFY_SEED: u64 = 0x5665_7269;

fn check_semigroup(_: &VerifyOptions) -> Result<(bool, String)> {
    let op = EllipticOperator::diagonal(1, 0.3, 1.0);
    let mut r = rng::stream(VERIFY_SEED, &[1]);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let u = rng::random_field(&mut r, 1, 8, 1.0);
        let (s, t) = (r.random_range(0.0..0.5), r.random_range(0.0..0.5));
        let lhs = apply_semigroup(&op, s, &apply_semigroup(&op, t, &u)?)?;
        let rhs = apply_semigroup(&op, s + t, &u)?;
        worst = worst.max(lhs.sub(&rhs)?.energy().sqrt() / u.energy().sqrt());
    }
    Ok((worst <= 1e-11, format!("worst relative semigroup-law defect {worst:.3e}")))
}

fn check_smoothing(_: &VerifyOptions) -> Result<(bool, String)> {
    let op = EllipticOperator::default();
    let mut worst = f64::NEG_INFINITY;
    for delta in [0.25, 0.5, 0.75] {
        for i in 0..13 {
            let t = 10f64.powf(-3.0 + 3.0 * i as f64 / 12.0);
            let b = smoothing_bound_check(&op, delta, t, 1)?;
            worst = worst.max(b.measured - b.bound);
        }
    }
    Ok((worst <= 1e-12, format!("max measured - bound = {worst:.3e}")))
}

fn check_gamma_norms(_: &VerifyOptions) -> Result<(bool, String)> {
    let unit = DiffusionSpec::constant(1.0);
    let u = SpectralField::zeros(1, 4);
    let mc = gamma_norm_mc(&unit, &u, 2.0, 10_000, VERIFY_SEED)?;
    let unit_ok = (mc.estimate - 1.0).abs() <= 3.0 * mc.std_error;
    let spec = suite_diffusion(0.5, 0.2);
    let z = SpectralField::from_fn(1, 8, |x| (TWO_PI * x[0]).sin());
    let mc = gamma_norm_mc(&spec, &z, 4.0, 10_000, VERIFY_SEED + 1)?;
    let closed = gamma_norm_closed(&spec, &z, 4.0)?;
    let bound_ok = mc.estimate <= closed + 3.0 * mc.std_error;
    Ok((unit_ok && bound_ok, format!("unit estimate ok: {unit_ok}; MC {:.5} vs closed {closed:.5}", mc.estimate)))
}

fn check_growth(_: &VerifyOptions) -> Result<(bool, String)> {
    let spec = suite_diffusion(0.5, 0.2);
    let cert = growth_and_lipschitz_certify(Certifiable::Diffusion(&spec))?;
    let mut r = rng::stream(VERIFY_SEED, &[2]);
    let mut worst = 0.0f64;
    for i in 0..10 {
        let z = rng::random_field(&mut r, 1, 6, 1.0).scale(0.5 * (i + 1) as f64);
        let g = gamma_norm_closed(&spec, &z, 2.0)?;
        let rhs = cert.c_growth * (1.0 + lp_norm(&z, 2.0)?.powi(2));
        worst = worst.max(g * g / rhs);
    }
    Ok((worst <= 1.0, format!("max ‖σ(z)‖²_γ / C(1+‖z‖²) = {worst:.4}")))
}

fn check_chain_counts(_: &VerifyOptions) -> Result<(bool, String)> {
    // Total constants for |γ| = n in one dimension are the Bell numbers.
    let bell = [1u64, 2, 5, 15];
    for (n, &b) in (1..=4).zip(&bell) {
        let total: u64 = analysis::faa_di_bruno_terms(&MultiIndex::new([n]))?.iter().map(|t| t.constant).sum();
        if total != b {
            return Ok((false, format!("|γ| = {n}: total {total}, expected {b}")));
        }
    }
    Ok((true, "totals 1, 2, 5, 15".into()))
}

/// Largest Moser ratio on the frozen suite.
pub fn moser_suite_measurement() -> Result<f64> {
    let cases = analysis::moser_suite(MOSER_SUITE_SIZE, analysis::MOSER_SUITE_SEED);
    analysis::moser_suite_constant(&cases, &analysis::MOSER_SCALES)
}

fn check_moser(opts: &VerifyOptions) -> Result<(bool, String)> {
    let measured = moser_suite_measurement()?;
    if opts.regenerate {
        let stored = round_up_significant(measured, 4);
        store_baseline(&opts.baseline_dir, &Baseline::new("moser", BTreeMap::from([("constant".into(), stored)])))?;
        return Ok((true, format!("regenerated: C* = {stored} (measured {measured:.6})")));
    }
    let c = load_baseline(&opts.baseline_dir, "moser")?.get("constant")?;
    Ok((measured <= c, format!("max ratio {measured:.6} vs stored C* = {c}")))
}

fn check_adaptedness(_: &VerifyOptions) -> Result<(bool, String)> {
    let cfg = contraction_suite(0.1);
    let s = Solver::new(&cfg)?;
    let u0 = analysis::unit_sine(1).to_field(1, cfg.cutoff)?;
    let path = sample_wiener_path(2, cfg.horizon, cfg.steps, VERIFY_SEED, 0)?;
    let mut bumped = path.clone();
    let cut = cfg.steps / 2;
    for x in &mut bumped.increments_mut()[cut * 2..] {
        *x += 1.0;
    }
    let a = s.direct(&path, &u0)?;
    let b = s.direct(&bumped, &u0)?;
    let same = a.states[..=cut] == b.states[..=cut];
    Ok((same, format!("prefix of {} states identical: {same}", cut + 1)))
}

fn check_picard_limit(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut cfg = contraction_suite(0.1);
    cfg.picard_levels = 30;
    let s = Solver::new(&cfg)?;
    let u0 = analysis::unit_sine(1).to_field(1, cfg.cutoff)?;
    let path = sample_wiener_path(2, cfg.horizon, cfg.steps, VERIFY_SEED, 1)?;
    let picard = s.picard_iterate(&path, &u0, s.picard_options(), |_| Ok(()))?;
    let direct = s.direct(&path, &u0)?;
    let gap = picard.final_level.distance(&direct, cfg.p, cfg.q)?;
    Ok((
        picard.converged && gap < 1e-10,
        format!("converged: {}; distance to direct stepping {gap:.3e}", picard.converged),
    ))
}

fn check_linear_oracle(_: &VerifyOptions) -> Result<(bool, String)> {
    let cfg = SolverConfig {
        dimension: 1,
        horizon: 1.0,
        steps: 256,
        cutoff: 2,
        p: 2.0,
        q: 3.0,
        m: 1,
        picard_levels: 1,
        tolerance: 1e-12,
        partition_length: None,
        operator: EllipticOperator::diagonal(1, 0.01, 1.0),
        nonlinearity: NonlinearitySpec::default(),
        diffusion: DiffusionSpec::new(vec![
            SeparableFunction::constant(1.0),
            SeparableFunction::new(TrigPolynomial::cos(2f64.sqrt(), vec![1]), ScalarFunction::constant(1.0)),
        ]),
    };
    let r = linear_oracle(&cfg, 2000, VERIFY_SEED)?;
    let worst = r.modes.iter().map(|m| (m.empirical - m.scheme).abs() / m.std_error).fold(0.0, f64::max);
    Ok((worst <= 4.0, format!("worst deviation {worst:.2} standard errors over {} modes", r.modes.len())))
}

fn check_factorization(_: &VerifyOptions) -> Result<(bool, String)> {
    let lambda = 3.0;
    let t = 1.0;
    let n = 400;
    let dt = t / n as f64;
    let ones = vec![dt; n];
    let fact = solver::factorized_convolution(lambda, dt, &ones, 0.25);
    let exact = solver::deterministic_convolution(lambda, t);
    let err = (fact - exact).abs() / exact;
    let op = EllipticOperator::default();
    let spec = DiffusionSpec::constant(1.0);
    let path = sample_wiener_path(1, 1.0, 64, VERIFY_SEED, 0)?;
    let coarse = factorization_check(&op, &spec, &path, 0.25, 64, 1, 2)?;
    let fine = factorization_check(&op, &spec, &path.refine(), 0.25, 128, 1, 2)?;
    let ok = err <= 1e-4 && fine.rel_err < coarse.rel_err;
    Ok((ok, format!("surrogate error {err:.2e}; stochastic {:.3e} -> {:.3e}", coarse.rel_err, fine.rel_err)))
}

fn check_contraction(_: &VerifyOptions) -> Result<(bool, String)> {
    let u0 = analysis::unit_sine(1).to_field(1, 16)?;
    let rate = |t: f64| -> Result<f64> {
        let cfg = contraction_suite(t);
        let paths: Vec<WienerPath> =
            (0..4).map(|i| sample_wiener_path(2, t, cfg.steps, VERIFY_SEED, i)).collect::<Result<_>>()?;
        Ok(contraction_probe(&cfg, &u0, &paths)?.measured_rate)
    };
    let (long, short) = (rate(0.4)?, rate(0.1)?);
    Ok((short <= 0.75 * long && long < 1.0, format!("rate {long:.4} at T = 0.4, {short:.4} at T = 0.1")))
}

fn check_deterministic_moments(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut solver = contraction_suite(0.2);
    solver.nonlinearity = NonlinearitySpec::default();
    solver.diffusion = DiffusionSpec::default();
    solver.steps = 32;
    solver.picard_levels = 2;
    let cfg = ExperimentConfig::new(solver.clone(), InitialCondition::default(), 3, VERIFY_SEED);
    let r = run_moments(&cfg)?;
    let u0 = analysis::unit_sine(1).to_field(1, solver.cutoff)?;
    let exact = (0..=solver.steps)
        .map(|j| {
            let u = apply_semigroup(&solver.operator, j as f64 * solver.dt(), &u0)?;
            Ok(sobolev_pair(&u, solver.m, solver.p)?.0.powf(solver.q))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let got = r.final_level().high;
    let ok = (got.estimate - exact).abs() <= 1e-10 * exact && got.std_error <= 1e-12 * exact;
    Ok((ok, format!("estimate {:.12} vs exact {exact:.12}", got.estimate)))
}

fn check_uniformity(_: &VerifyOptions) -> Result<(bool, String)> {
    let cfg = uniformity_suite(16, 8, 64);
    let u = uniformity_check(&run_moments(&cfg)?)?;
    Ok((u.plateau_pass, format!("K_n = {:?}", u.k_sequence.iter().map(|k| format!("{k:.4}")).collect::<Vec<_>>())))
}

/// Fitted constant of the scaling suite over [`SCALING_SUITE_SCALES`].
pub fn scaling_suite_measurement() -> Result<ScalingTable> {
    theorem_scaling_study(&scaling_suite(), &SCALING_SUITE_SCALES)
}

/// Relative tolerance when comparing the pinned scaling constant.
pub const SCALING_PIN_TOLERANCE: f64 = 1e-6;

fn check_scaling(opts: &VerifyOptions) -> Result<(bool, String)> {
    let table = scaling_suite_measurement()?;
    if opts.regenerate {
        store_baseline(
            &opts.baseline_dir,
            &Baseline::new("scaling", BTreeMap::from([("constant".into(), table.constant)])),
        )?;
        return Ok((true, format!("regenerated: C = {}", table.constant)));
    }
    let c = load_baseline(&opts.baseline_dir, "scaling")?.get("constant")?;
    let ok = table.constant.is_finite() && (table.constant - c).abs() <= SCALING_PIN_TOLERANCE * c.abs();
    Ok((ok, format!("fitted C = {:.9} vs pinned {c:.9}", table.constant)))
}

/// `E|X|^q` for `X ~ N(0, variance)`.
pub fn gaussian_abs_moment(variance: f64, q: f64) -> Result<f64> {
    Ok(gaussian_moment_constant(q)?.powf(q) * variance.powf(q / 2.0))
}
