//! Command-line experiment runner.
//!
//! Each subcommand reads an [`ExperimentConfig`], runs, and writes its
//! outputs to `<out>/<subcommand>-<hash16>/` together with a
//! `manifest.json`.

pub mod config;
pub mod output;
pub mod verify;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::averaging::{averaging_error_experiment, estimate_invariant_measure, mixing_experiment, solve_averaged};
use crate::error::{Error, Result};
use crate::ldp::{ldp_check, mc_probability, rate_function, solve_skeleton, EventSpec, RateResult};
use crate::sde::{simulate_slow_fast, write_snapshot, Trajectory};
use crate::spectral::{BasisSet, SpectralField};

pub use config::ExperimentConfig;
use output::{loglog_svg, Cell, Manifest, RunDir, Series, Versions, SPEC_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ASSUMPTION: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "scbf", version, about = "Two-time-scale stochastic CBF experiments")]
pub struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted override such as `model.eps=0.05`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed; same as `--set monte_carlo.seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run even when assumption gates fail.
    #[arg(long, global = true)]
    pub allow_unstable: bool,
    /// Output root; same as `--set output.dir=PATH`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Slow-fast sample paths.
    Simulate,
    /// Frozen-equation invariant measure and mixing.
    Frozen,
    /// Averaged solve and averaging-error sweep.
    Average,
    /// Controlled deterministic solve.
    Skeleton,
    /// Rate-function optimization.
    Rate,
    /// Monte Carlo event probability.
    Mc,
    /// `-eps log p` against the rate along the eps grid.
    Ldp,
    /// Operator and integrator property suites.
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Frozen => "frozen",
            Command::Average => "average",
            Command::Skeleton => "skeleton",
            Command::Rate => "rate",
            Command::Mc => "mc",
            Command::Ldp => "ldp",
            Command::Verify => "verify",
        }
    }

    fn uses_fast_equation(self) -> bool {
        !matches!(self, Command::Verify)
    }
}

/// Outcome of a successful run.
#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub passed: bool,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::AssumptionViolation(_) => EXIT_ASSUMPTION,
        Error::NumericalBlowup { .. } => EXIT_BLOWUP,
        _ => EXIT_USAGE,
    }
}

/// Parses arguments, runs, and returns the process exit code. Errors are
/// reported as one JSON line on standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            eprintln!(
                "{}",
                json!({"error": "usage", "message": e.to_string().trim(), "exit_code": EXIT_USAGE})
            );
            return EXIT_USAGE;
        }
    };
    match run(&cli) {
        Ok(o) => {
            println!("{}", o.dir.display());
            if o.passed {
                EXIT_OK
            } else {
                EXIT_VERIFY
            }
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!(
                "{}",
                json!({"error": e.kind(), "message": e.to_string(), "exit_code": code})
            );
            code
        }
    }
}

/// Resolves the config and runs the subcommand, inside a dedicated rayon
/// pool when `--threads` is given.
pub fn run(cli: &Cli) -> Result<RunOutcome> {
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("monte_carlo.seed={s}"));
    }
    if let Some(o) = &cli.out {
        let quoted = toml::Value::String(o.to_string_lossy().into_owned()).to_string();
        overrides.push(format!("output.dir={quoted}"));
    }
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p, &overrides)?,
        None => ExperimentConfig::with_overrides("", &overrides)?,
    };
    if !cli.allow_unstable && cli.command.uses_fast_equation() {
        cfg.check_assumptions()?;
    }
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| execute(cli.command, &cfg, cli.threads))
        }
        None => execute(cli.command, &cfg, None),
    }
}

/// Runs one subcommand against a resolved config.
pub fn execute(cmd: Command, cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutcome> {
    let start = Instant::now();
    let hash = cfg.hash16()?;
    let mut dir = RunDir::create(&cfg.output.dir, cmd.name(), &hash)?;
    let passed = match cmd {
        Command::Simulate => run_simulate(cfg, &mut dir)?,
        Command::Frozen => run_frozen(cfg, &mut dir)?,
        Command::Average => run_average(cfg, &mut dir)?,
        Command::Skeleton => run_skeleton(cfg, &mut dir)?,
        Command::Rate => run_rate(cfg, &mut dir)?,
        Command::Mc => run_mc(cfg, &mut dir)?,
        Command::Ldp => run_ldp(cfg, &mut dir)?,
        Command::Verify => run_verify(cfg, &mut dir)?,
    };
    let manifest = Manifest {
        spec_version: SPEC_VERSION,
        subcommand: cmd.name().to_string(),
        config_hash: hash,
        config: serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?,
        seed: cfg.monte_carlo.seed,
        threads,
        versions: Versions::current(),
        wall_time_s: start.elapsed().as_secs_f64(),
        files: dir.files.clone(),
    };
    dir.write_json("manifest.json", &manifest)?;
    Ok(RunOutcome {
        dir: dir.path,
        passed,
    })
}

fn trajectory_csv(t: &Trajectory) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf)?;
    Ok(buf)
}

fn run_simulate(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<bool> {
    use rayon::prelude::*;
    let basis = cfg.basis()?;
    let (x0, y0) = cfg.initial_state(&basis)?;
    let model = cfg.model();
    let opts = cfg.sim_options(&basis);
    let paths: Vec<Trajectory> = (0..cfg.monte_carlo.n_paths as u64)
        .into_par_iter()
        .map(|k| simulate_slow_fast(&model, &x0, &y0, &opts.clone().with_path(k)))
        .collect::<Result<_>>()?;
    dir.write("trajectory.csv", trajectory_csv(&paths[0])?)?;
    let rows: Vec<Vec<Cell>> = paths
        .iter()
        .map(|t| {
            let n = t.norms.last().copied().unwrap_or_default();
            let stopped = t.stopped_at.unwrap_or(f64::NAN);
            vec![
                t.path_index.into(),
                n.h.into(),
                n.v.into(),
                n.lr1.into(),
                t.fast_norm_h.last().copied().unwrap_or(f64::NAN).into(),
                stopped.into(),
            ]
        })
        .collect();
    dir.write_csv(
        "endpoints.csv",
        &["path", "norm_H_slow", "norm_V_slow", "norm_Lr1_slow", "norm_H_fast", "stopped_at"],
        &rows,
    )?;
    if let Some(last) = paths[0].slow.last() {
        let mut bytes = Vec::new();
        write_snapshot(last, &mut bytes)?;
        dir.write("final_state.bin", bytes)?;
    }
    if let Some(e) = paths[0].energy {
        dir.write_json(
            "energy.json",
            &json!({
                "budget": e,
                "residual": e.residual(model.mu, model.alpha, model.beta),
                "tolerance": e.tolerance(opts.dt),
            }),
        )?;
    }
    Ok(true)
}

fn second_fast_state(basis: &std::sync::Arc<BasisSet>, y: &SpectralField, seed: u64) -> SpectralField {
    if y.norm_h() > 0.0 {
        -y
    } else {
        SpectralField::random(basis, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), 1.0, 2.0)
    }
}

fn run_frozen(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<bool> {
    let basis = cfg.basis()?;
    let (x0, y0) = cfg.initial_state(&basis)?;
    let model = cfg.model();
    let est = estimate_invariant_measure(&model, &x0, Some(&y0), &cfg.frozen.invariant)?;
    let rows: Vec<Vec<Cell>> = est
        .y_mean
        .iter()
        .zip(&est.y_var)
        .enumerate()
        .map(|(i, (m, v))| vec![i.into(), (*m).into(), (*v).into()])
        .collect();
    dir.write_csv("frozen_moments.csv", &["coord", "mean", "var"], &rows)?;
    let y2 = second_fast_state(&basis, &y0, cfg.initial.seed);
    let mix = mixing_experiment(
        &model,
        &x0,
        &y0,
        &y2,
        cfg.frozen.mixing_horizon,
        cfg.frozen.mixing_paths,
        cfg.frozen.invariant.dt,
    )?;
    let rows: Vec<Vec<Cell>> = mix
        .times
        .iter()
        .zip(&mix.msd)
        .map(|(t, m)| vec![(*t).into(), (*m).into()])
        .collect();
    dir.write_csv("mixing.csv", &["time", "msd"], &rows)?;
    dir.write_json(
        "frozen.json",
        &json!({
            "spec_version": SPEC_VERSION,
            "n_samples": est.n_samples,
            "burn_in": est.burn_in,
            "stride": est.stride,
            "drift_stderr": est.stderr,
            "mean_f_norm_h": est.mean_f.norm_h(),
            "fitted_rate": mix.fitted_rate,
            "linear_rate": mix.linear_rate,
            "predicted_zeta": mix.predicted_zeta,
        }),
    )?;
    Ok(true)
}

fn run_average(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<bool> {
    let basis = cfg.basis()?;
    let (x0, y0) = cfg.initial_state(&basis)?;
    let model = cfg.model();
    let opts = cfg.sim_options(&basis);
    let avg = solve_averaged(&model, &x0, opts.dt, &cfg.drift)?;
    dir.write("averaged.csv", trajectory_csv(&avg)?)?;
    let table = averaging_error_experiment(
        &model,
        &x0,
        &y0,
        &cfg.sweep.eps,
        &cfg.sweep.delta_rule,
        cfg.monte_carlo.n_paths,
        &opts,
        &cfg.drift,
    )?;
    let rows: Vec<Vec<Cell>> = table
        .rows
        .iter()
        .map(|r| vec![r.eps.into(), r.delta.into(), r.err.into(), r.stderr.into(), r.n_excluded.into()])
        .collect();
    dir.write_csv("averaging_error.csv", &["eps", "delta", "err", "stderr", "n_excluded"], &rows)?;
    if cfg.output.svg {
        let pts = table.rows.iter().map(|r| (r.eps, r.err)).collect();
        dir.write(
            "averaging_error.svg",
            loglog_svg(
                "averaging error",
                "eps",
                "E sup |X - X_bar|^2",
                &[Series { label: "error", points: pts }],
            ),
        )?;
    }
    dir.write_json(
        "averaging.json",
        &json!({
            "spec_version": SPEC_VERSION,
            "strictly_decreasing": table.strictly_decreasing,
            "decreasing_within_slack": table.decreasing_within_slack,
            "total_reduction": table.total_reduction,
        }),
    )?;
    Ok(true)
}

fn run_skeleton(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<bool> {
    let basis = cfg.basis()?;
    let (x0, _) = cfg.initial_state(&basis)?;
    let h = cfg.control(&basis)?;
    let opts = cfg.sim_options(&basis);
    let tr = solve_skeleton(&cfg.model(), &h, &x0, opts.dt, &cfg.drift)?;
    dir.write("skeleton.csv", trajectory_csv(&tr)?)?;
    Ok(true)
}

/// Event from config; exceedance references are the averaged solution.
pub fn build_event(cfg: &ExperimentConfig, x0: &SpectralField) -> Result<EventSpec> {
    let basis = x0.basis();
    match cfg.event.kind {
        config::EventKindConfig::TerminalBall => {
            EventSpec::terminal_ball(config::padded(basis, &cfg.event.center)?, cfg.event.radius)
        }
        config::EventKindConfig::SupExceedance => {
            let dt = cfg.sim_options(basis).dt;
            let reference = solve_averaged(&cfg.model(), x0, dt, &cfg.drift)?;
            EventSpec::sup_exceedance(reference, cfg.event.radius)
        }
    }
}

fn rate_record(event: &EventSpec, r: &RateResult) -> serde_json::Value {
    json!({
        "spec_version": SPEC_VERSION,
        "event": event.kind_name(),
        "I": if r.converged { Some(r.value) } else { None },
        "converged": r.converged,
        "iterations": r.iterations,
        "residual": r.residual,
        "control_energy": r.control.energy(),
    })
}

fn control_rows(r: &RateResult) -> Vec<Vec<Cell>> {
    let dtk = r.control.knot_spacing();
    r.control
        .values()
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let mut row: Vec<Cell> = vec![(k as f64 * dtk).into()];
            row.extend(v.iter().map(|x| Cell::Num(*x)));
            row
        })
        .collect()
}

fn write_control(dir: &mut RunDir, r: &RateResult) -> Result<()> {
    let names: Vec<String> = (0..r.control.dim()).map(|i| format!("h{i}")).collect();
    let mut header = vec!["t_start"];
    header.extend(names.iter().map(|s| s.as_str()));
    dir.write_csv("control.csv", &header, &control_rows(r))
}

fn run_rate(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<bool> {
    let basis = cfg.basis()?;
    let (x0, _) = cfg.initial_state(&basis)?;
    let event = build_event(cfg, &x0)?;
    let r = rate_function(&cfg.model(), &x0, &event, &cfg.rate, &cfg.drift, None)?;
    dir.write_json("rate.json", &rate_record(&event, &r))?;
    write_control(dir, &r)?;
    Ok(true)
}

fn run_mc(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<bool> {
    let basis = cfg.basis()?;
    let (x0, y0) = cfg.initial_state(&basis)?;
    let event = build_event(cfg, &x0)?;
    let model = cfg.model();
    let m = mc_probability(&model, &x0, &y0, &event, cfg.monte_carlo.n_paths, &cfg.sim_options(&basis))?;
    dir.write_json(
        "mc.json",
        &json!({
            "spec_version": SPEC_VERSION,
            "event": event.kind_name(),
            "eps": model.eps,
            "p_hat": m.p_hat,
            "ci_lo": m.ci_lo,
            "ci_hi": m.ci_hi,
            "hits": m.hits,
            "n_paths": m.n_paths,
            "n_excluded": m.n_excluded,
            "I": null,
            "converged": null,
            "iterations": null,
        }),
    )?;
    Ok(true)
}

fn run_ldp(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<bool> {
    let basis = cfg.basis()?;
    let (x0, y0) = cfg.initial_state(&basis)?;
    let event = build_event(cfg, &x0)?;
    let model = cfg.model();
    let rate = rate_function(&model, &x0, &event, &cfg.rate, &cfg.drift, None)?;
    write_control(dir, &rate)?;
    let i_value = if rate.converged { rate.value } else { f64::INFINITY };
    let table = ldp_check(
        &model,
        &x0,
        &y0,
        &event,
        &cfg.sweep.eps,
        &cfg.sweep.delta_rule,
        cfg.monte_carlo.n_paths,
        &cfg.sim_options(&basis),
        i_value,
    )?;
    let rows: Vec<Vec<Cell>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.eps.into(),
                r.delta.into(),
                r.p_hat.into(),
                r.ci_lo.into(),
                r.ci_hi.into(),
                r.hits.into(),
                r.neg_eps_log_p.into(),
                r.rate.into(),
            ]
        })
        .collect();
    dir.write_csv(
        "ldp_trend.csv",
        &["eps", "delta", "p_hat", "ci_lo", "ci_hi", "hits", "neg_eps_log_p", "rate"],
        &rows,
    )?;
    let records: Vec<serde_json::Value> = table
        .rows
        .iter()
        .map(|r| {
            json!({
                "event": event.kind_name(),
                "eps": r.eps,
                "p_hat": r.p_hat,
                "ci_lo": r.ci_lo,
                "ci_hi": r.ci_hi,
                "I": if rate.converged { Some(rate.value) } else { None },
                "converged": rate.converged,
                "iterations": rate.iterations,
            })
        })
        .collect();
    dir.write_json(
        "ldp.json",
        &json!({
            "spec_version": SPEC_VERSION,
            "records": records,
            "monotone": table.monotone,
            "rel_err_smallest": table.rel_err_smallest,
            "zero_hit_eps": table.zero_hit_eps,
        }),
    )?;
    if cfg.output.svg {
        let est = table.rows.iter().map(|r| (r.eps, r.neg_eps_log_p)).collect();
        let rate_line = table.rows.iter().map(|r| (r.eps, r.rate)).collect();
        dir.write(
            "ldp_trend.svg",
            loglog_svg(
                "large deviations trend",
                "eps",
                "-eps log p",
                &[
                    Series { label: "-eps log p_hat", points: est },
                    Series { label: "I", points: rate_line },
                ],
            ),
        )?;
    }
    Ok(true)
}

fn run_verify(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<bool> {
    let v = &cfg.verify;
    let report = verify::run_all(v.n, &v.r_values, v.mu, v.beta, v.pairs, v.seed)?;
    dir.write_json("verify.json", &report)?;
    let rows: Vec<Vec<Cell>> = report
        .suites
        .iter()
        .map(|s| {
            vec![
                s.name.as_str().into(),
                s.cases.into(),
                s.failures.into(),
                s.worst.into(),
                if s.passed { "pass" } else { "fail" }.into(),
            ]
        })
        .collect();
    dir.write_csv("verify.csv", &["suite", "cases", "failures", "worst", "status"], &rows)?;
    Ok(report.passed)
}
