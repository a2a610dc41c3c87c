//! `spde`: run simulations, moment studies and the verification suites.
//!
//! `SPDE_THREADS` sets the worker thread count; nothing else is read from
//! the environment.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;
use spde_core::error::{Error, Result};
use spde_core::harness::{
    self, content_hash, run_full_verification, run_moments, simulate, theorem_scaling_study, uniformity_check,
    write_csv, write_json, write_trajectory, ExperimentConfig, VerifyOptions,
};
use spde_core::solver::{sample_wiener_path, strong_order, PicardOptions, Solver};

const THREADS_VAR: &str = "SPDE_THREADS";

#[derive(Parser)]
#[command(name = "spde", version, about = "Pseudo-spectral SPDE simulator and verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Direct-stepping solves with per-path norm time series.
    Simulate(RunArgs),
    /// Picard-level moment estimates and the uniform-in-n check.
    Moments(RunArgs),
    /// Run the frozen verification suites.
    Verify(VerifyArgs),
    /// Rescale the initial condition and fit the moment bound constant.
    Scaling(RunArgs),
    /// Picard distances per level and, for linear configs, the strong order.
    Convergence(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration. Defaults to the built-in uniformity suite.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    /// Number of time steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Fourier cutoff K (modes -K..=K per axis).
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Only run suites whose name contains this string.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Directory holding the stored baselines.
    #[arg(long)]
    baseline_dir: Option<PathBuf>,
    /// Overwrite stored baselines with freshly measured values.
    #[arg(long)]
    regenerate_baselines: bool,
}

impl RunArgs {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => harness::uniformity_suite(100, 32, 256),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(paths) = self.paths {
            cfg.paths = paths;
        }
        if let Some(steps) = self.steps {
            cfg.solver.steps = steps;
        }
        if let Some(modes) = self.modes {
            cfg.solver.cutoff = modes;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot configure thread pool: {e}")))
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x:.10e}")
}

fn run_simulate(args: &RunArgs) -> Result<bool> {
    let cfg = args.experiment()?;
    prepare(&args.out_dir)?;
    let hash = cfg.hash();
    let sim = simulate(&cfg)?;
    let mut rows = Vec::new();
    for (path, series) in sim.series.iter().enumerate() {
        for (t, n) in sim.times.iter().zip(series) {
            rows.push(vec![path.to_string(), fmt(*t), fmt(n.lp), fmt(n.high), fmt(n.low)]);
        }
    }
    write_csv(&args.out_dir.join("norms.csv"), &hash, &["path", "t", "lp", "w_m_p", "w_1_mp"], &rows)?;
    for traj in &sim.snapshots {
        let last = traj.last();
        let rows: Vec<Vec<String>> = (0..last.len())
            .map(|i| {
                let k = last.wavevector(i);
                let c = last.coefficients()[i];
                let mut row: Vec<String> = k.iter().map(|x| x.to_string()).collect();
                row.extend([fmt(c.re), fmt(c.im)]);
                row
            })
            .collect();
        let mut header: Vec<String> = (0..last.dim()).map(|a| format!("k{a}")).collect();
        header.extend(["re".into(), "im".into()]);
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&args.out_dir.join(format!("snapshot_{}.csv", traj.path)), &hash, &header, &rows)?;
        if cfg.report.binary_dump {
            write_trajectory(&args.out_dir.join(format!("trajectory_{}.bin", traj.path)), traj)?;
        }
    }
    println!("simulated {} paths, {} steps; config {hash}", cfg.paths, cfg.solver.steps);
    Ok(true)
}

fn run_moments_cmd(args: &RunArgs) -> Result<bool> {
    let cfg = args.experiment()?;
    prepare(&args.out_dir)?;
    let report = run_moments(&cfg)?;
    let rows: Vec<Vec<String>> = report
        .levels
        .iter()
        .map(|l| {
            vec![
                l.level.to_string(),
                fmt(l.high.estimate),
                fmt(l.high.std_error),
                fmt(l.low.estimate),
                fmt(l.low.std_error),
                fmt(l.mean_delta),
            ]
        })
        .collect();
    write_csv(
        &args.out_dir.join("moments.csv"),
        &report.config_hash,
        &["level", "high", "high_se", "low", "low_se", "mean_delta"],
        &rows,
    )?;
    let check = (report.levels.len() > 5).then(|| uniformity_check(&report)).transpose()?;
    write_json(&args.out_dir.join("moments.json"), &cfg, &json!({ "moments": report, "uniformity": check }))?;
    for l in &report.levels {
        println!(
            "level {:>2}: K = {:.6} ± {:.2e}, L = {:.6} ± {:.2e}",
            l.level, l.high.estimate, l.high.std_error, l.low.estimate, l.low.std_error
        );
    }
    println!("fitted constant {:.6}", report.fitted_constant);
    Ok(match check {
        Some(c) => {
            println!("uniform in n: {}", if c.plateau_pass { "pass" } else { "FAIL" });
            c.plateau_pass
        }
        None => {
            println!("uniform in n: skipped (needs at least 6 levels)");
            true
        }
    })
}

fn run_scaling(args: &RunArgs) -> Result<bool> {
    let cfg = args.experiment()?;
    prepare(&args.out_dir)?;
    let table = theorem_scaling_study(&cfg, &cfg.report.scales)?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt(r.scale),
                fmt(r.sup_moment.estimate),
                fmt(r.sup_moment.std_error),
                fmt(r.initial_high.estimate),
                fmt(r.initial_low.estimate),
                fmt(r.ratio),
            ]
        })
        .collect();
    write_csv(
        &args.out_dir.join("scaling.csv"),
        &table.config_hash,
        &["scale", "sup_moment", "sup_moment_se", "initial_high", "initial_low", "ratio"],
        &rows,
    )?;
    write_json(&args.out_dir.join("scaling.json"), &cfg, &table)?;
    for r in &table.rows {
        println!("s = {:<6} ratio {:.6}", r.scale, r.ratio);
    }
    println!("fitted constant {:.6}", table.constant);
    Ok(table.constant.is_finite())
}

fn run_convergence(args: &RunArgs) -> Result<bool> {
    let cfg = args.experiment()?;
    prepare(&args.out_dir)?;
    let hash = cfg.hash();
    let solver = Solver::new(&cfg.solver)?;
    let opts = PicardOptions { stop_on_convergence: false, ..solver.picard_options() };
    let per_path: Vec<Vec<f64>> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| {
            let sc = &cfg.solver;
            let path = sample_wiener_path(sc.diffusion.noise_dim(), sc.horizon, sc.steps, cfg.seed, i)?;
            let u0 = cfg.initial.sample(sc, cfg.seed, i)?;
            Ok(solver.picard_iterate(&path, &u0, opts, |_| Ok(()))?.deltas)
        })
        .collect::<Result<_>>()?;
    let deltas: Vec<Vec<f64>> =
        (0..cfg.solver.picard_levels).map(|l| per_path.iter().map(|d| d[l]).collect()).collect();
    let mut rows = Vec::new();
    for (l, d) in deltas.iter().enumerate() {
        let mean = d.iter().sum::<f64>() / d.len().max(1) as f64;
        rows.push(vec![(l + 1).to_string(), fmt(mean)]);
        println!("level {:>2}: mean distance to previous level {mean:.3e}", l + 1);
    }
    write_csv(&args.out_dir.join("picard.csv"), &hash, &["level", "mean_delta"], &rows)?;
    let linear =
        cfg.solver.nonlinearity.is_zero() && cfg.solver.diffusion.is_additive() && cfg.solver.operator.is_diagonal();
    if linear {
        let order = strong_order(&cfg.solver, cfg.paths, 4, cfg.seed)?;
        let rows: Vec<Vec<String>> =
            order.steps.iter().zip(&order.errors).map(|(s, e)| vec![s.to_string(), fmt(*e)]).collect();
        write_csv(&args.out_dir.join("strong_order.csv"), &hash, &["steps", "rms_error"], &rows)?;
        println!("scheme strong order {:.3}", order.order);
    }
    Ok(true)
}

fn run_verify(args: &VerifyArgs) -> Result<bool> {
    prepare(&args.out_dir)?;
    let opts = VerifyOptions {
        filter: args.filter.clone(),
        baseline_dir: args.baseline_dir.clone().unwrap_or_else(harness::default_baseline_dir),
        regenerate: args.regenerate_baselines,
    };
    let report = run_full_verification(&opts)?;
    let hash = content_hash(&json!({ "filter": opts.filter, "regenerate": opts.regenerate }));
    let body = json!({ "config_hash": hash, "report": report });
    fs::write(args.out_dir.join("verify.json"), serde_json::to_string_pretty(&body)? + "\n")?;
    for suite in &report.suites {
        for c in &suite.checks {
            println!("{:<9} {:<24} {}  {}", suite.name, c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
        }
    }
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Moments(a) => run_moments_cmd(a),
        Command::Verify(a) => run_verify(a),
        Command::Scaling(a) => run_scaling(a),
        Command::Convergence(a) => run_convergence(a),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
