//! Acceptance suite. Each test prints one `PASS`/`FAIL` line with the
//! measured quantity and the pinned tolerance, then asserts.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scbf::averaging::{
    averaging_error_experiment, estimate_invariant_measure, mixing_experiment, solve_averaged,
    DeltaRule, DriftMode, InvariantOptions,
};
use scbf::harness::verify::{energy_suite, operator_suites};
use scbf::ldp::{
    khasminskii_experiment, ldp_check, linear_rate_oracle, rate_function, solve_skeleton,
    EventSpec, RateOptions,
};
use scbf::sde::{
    simulate_slow_fast, Control, CouplingSpec, ModelParams, NoiseModel, SimOptions,
};
use scbf::{BasisSet, SpectralField};

const OPERATOR_PAIRS: usize = 1000;
const OPERATOR_BUDGET: Duration = Duration::from_secs(60);
const DECAY_TOL: f64 = 1e-8;
const OU_VAR_TOL: f64 = 0.05;
const OU_MIN_SAMPLES: usize = 100_000;
const MIXING_TOL: f64 = 0.10;
const FROZEN_BUDGET: Duration = Duration::from_secs(300);
const AVERAGING_MIN_REDUCTION: f64 = 2.0;
const AVERAGING_PATHS: usize = 100;
const AVERAGING_BUDGET: Duration = Duration::from_secs(900);
const KHASMINSKII_MIN_FACTOR: f64 = 1.5;
const KHASMINSKII_PATHS: usize = 100;
const RATE_TOL: f64 = 0.01;
const RATE_BUDGET: Duration = Duration::from_secs(120);
const LDP_TOL: f64 = 0.25;
const LDP_PATHS: usize = 100_000;
const LDP_BUDGET: Duration = Duration::from_secs(1800);
const SKELETON_TOL: f64 = 1e-10;

fn report(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn quiet() -> ModelParams {
    ModelParams {
        coupling: CouplingSpec {
            c_f: 0.0,
            c_fx: Some(0.0),
            c_g: 0.0,
            l_g: 0.0,
            ..CouplingSpec::default()
        },
        noise: NoiseModel {
            q1_amp: 0.0,
            q2_amp: 0.0,
            ..NoiseModel::default()
        },
        ..ModelParams::default()
    }
}

/// One noisy mode, no coupling, no damping: the slow equation is the
/// scalar OU process `dx = -gamma x dt + sqrt(eps) dW` in each of the two
/// real coordinates of the first mode, with `gamma = mu`.
fn single_mode(mu: f64) -> ModelParams {
    ModelParams {
        mu,
        coupling: CouplingSpec {
            c_f: 0.0,
            c_fx: Some(0.0),
            c_g: 0.0,
            l_g: 0.0,
            sigma1_gain: 1.0,
            noise_state_gain: 0.0,
            ..CouplingSpec::default()
        },
        noise: NoiseModel {
            q1_amp: 1.0,
            q2_amp: 1.0,
            active_modes: Some(1),
            ..NoiseModel::default()
        },
        ..ModelParams::default()
    }
}

fn coords(basis: &std::sync::Arc<BasisSet>, lead: &[f64]) -> SpectralField {
    let mut c = vec![0.0; basis.dim()];
    c[..lead.len()].copy_from_slice(lead);
    SpectralField::from_coords(basis, &c).unwrap()
}

#[test]
fn operator_inequalities() {
    let start = Instant::now();
    let suites = operator_suites(6, &[1.0, 2.0, 3.0, 5.0], 1.0, 1.0, OPERATOR_PAIRS, 2024).unwrap();
    let elapsed = start.elapsed();
    let failures: usize = suites.iter().map(|s| s.failures).sum();
    let cases: usize = suites.iter().map(|s| s.cases).sum();
    let worst = suites.iter().map(|s| s.worst).fold(0.0, f64::max);
    report(
        "operator_inequalities",
        failures == 0 && elapsed < OPERATOR_BUDGET,
        format!(
            "{cases} checks, {failures} failures, worst violation/slack {worst:.3e}, {:.1}s (budget {}s, slack 1e-9)",
            elapsed.as_secs_f64(),
            OPERATOR_BUDGET.as_secs()
        ),
    );
}

#[test]
fn linear_decay_oracle() {
    let b = BasisSet::new(1, 1.5).unwrap();
    let (mu, alpha) = (1.0, 0.25);
    let p = ModelParams { mu, alpha, ..quiet() };
    let x0 = coords(&b, &[0.8, -0.3]);
    let opts = SimOptions::for_basis(&b).with_dt(1e-4);
    let tr = simulate_slow_fast(&p, &x0, &SpectralField::zeros(&b), &opts).unwrap();
    let got = tr.slow.last().unwrap();
    let exact = x0.scale((-(mu + alpha) * p.horizon).exp());
    let rel = (got - &exact).norm_h() / exact.norm_h();
    report(
        "linear_decay_oracle",
        rel <= DECAY_TOL,
        format!("relative error {rel:.3e} (tol {DECAY_TOL:e})"),
    );
}

#[test]
fn noise_free_energy_balance() {
    let s = energy_suite(4, &[3.0, 5.0], 10, 77).unwrap();
    report(
        "noise_free_energy_balance",
        s.passed && s.cases == 20,
        format!(
            "{} runs, {} failures, worst residual/tolerance {:.3e} (tol 10 dt (1 + sup |X|_V^2))",
            s.cases, s.failures, s.worst
        ),
    );

    // Same identity with the slow coupling switched on and a fast input.
    let b = BasisSet::new(4, 1.5).unwrap();
    let p = ModelParams {
        beta: 1.0,
        r: 3.0,
        coupling: CouplingSpec {
            c_f: 0.5,
            l_g: 0.3,
            ..quiet().coupling
        },
        ..quiet()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x0 = SpectralField::random(&b, &mut rng, 1.0, 1.0);
        let y0 = SpectralField::random(&b, &mut rng, 1.0, 1.0);
        let opts = SimOptions {
            track_energy: true,
            record_every: usize::MAX,
            ..SimOptions::for_basis(&b)
        };
        let tr = simulate_slow_fast(&p, &x0, &y0, &opts).unwrap();
        let e = tr.energy.unwrap();
        worst = worst.max(e.residual(p.mu, p.alpha, p.beta) / e.tolerance(opts.dt));
    }
    report(
        "noise_free_energy_balance_coupled",
        worst <= 1.0,
        format!("worst residual/tolerance {worst:.3e} over 10 initial conditions"),
    );
}

#[test]
fn frozen_ergodicity() {
    let start = Instant::now();
    let b = BasisSet::new(2, 1.5).unwrap();
    let p = ModelParams {
        alpha: 0.1,
        coupling: CouplingSpec {
            c_g: 0.0,
            l_g: 0.25,
            noise_state_gain: 0.0,
            ..CouplingSpec::default()
        },
        ..ModelParams::default()
    };
    let x = SpectralField::zeros(&b);
    let opts = InvariantOptions {
        horizon: 2000.0,
        n_paths: 6,
        dt: 0.01,
        stride: Some(10),
        burn_in: Some(10.0),
        ..InvariantOptions::default()
    };
    let est = estimate_invariant_measure(&p, &x, None, &opts).unwrap();
    let q2 = p.noise.q2(&b);
    let mut worst = 0.0f64;
    for (j, v) in est.y_var.iter().enumerate() {
        let rate = p.mu * b.eigenvalues()[j / 2] + p.alpha + p.coupling.l_g;
        let oracle = q2[j] * q2[j] / (2.0 * rate);
        worst = worst.max((v - oracle).abs() / oracle);
    }
    report(
        "frozen_stationary_variance",
        worst <= OU_VAR_TOL && est.n_samples >= OU_MIN_SAMPLES,
        format!(
            "worst relative variance error {worst:.4} over {} coordinates, {} samples (tol {OU_VAR_TOL}, min {OU_MIN_SAMPLES})",
            est.y_var.len(),
            est.n_samples
        ),
    );

    let y1 = coords(&b, &[1.0, 0.5]);
    let y2 = coords(&b, &[-1.0, -0.5]);
    let mix = mixing_experiment(&p, &x, &y1, &y2, 3.0, 50, 0.01).unwrap();
    let oracle = 2.0 * (p.mu * b.lambda_1() + p.alpha + p.coupling.l_g);
    let fitted = mix.fitted_rate.unwrap_or(f64::NAN);
    let rel = (fitted - oracle).abs() / oracle;
    let elapsed = start.elapsed();
    report(
        "frozen_mixing_rate",
        rel <= MIXING_TOL && elapsed < FROZEN_BUDGET,
        format!(
            "fitted {fitted:.5} vs linear oracle {oracle:.5}, relative {rel:.2e} (tol {MIXING_TOL}), {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn averaging_trend() {
    let start = Instant::now();
    let b = BasisSet::new(2, 1.5).unwrap();
    let p = ModelParams {
        noise: NoiseModel {
            active_modes: Some(2),
            ..NoiseModel::default()
        },
        ..ModelParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0 = SpectralField::random(&b, &mut rng, 1.0, 1.0);
    let y0 = SpectralField::random(&b, &mut rng, 0.5, 1.0);
    let opts = SimOptions::for_basis(&b).with_dt(1e-3);
    let table = averaging_error_experiment(
        &p,
        &x0,
        &y0,
        &[1e-1, 1e-2, 1e-3],
        &DeltaRule::default(),
        AVERAGING_PATHS,
        &opts,
        &DriftMode::ClosedForm,
    )
    .unwrap();
    let elapsed = start.elapsed();
    let errs: Vec<String> = table.rows.iter().map(|r| format!("{:.3e}", r.err)).collect();
    report(
        "averaging_trend",
        table.strictly_decreasing
            && table.total_reduction >= AVERAGING_MIN_REDUCTION
            && elapsed < AVERAGING_BUDGET,
        format!(
            "errors [{}], reduction {:.1}x (min {AVERAGING_MIN_REDUCTION}x), {:.1}s",
            errs.join(", "),
            table.total_reduction,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn khasminskii_ladder() {
    let b = BasisSet::new(2, 1.5).unwrap();
    let p = ModelParams {
        eps: 0.1,
        noise: NoiseModel {
            active_modes: Some(2),
            ..NoiseModel::default()
        },
        ..ModelParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x0 = SpectralField::random(&b, &mut rng, 1.0, 1.0);
    let y0 = SpectralField::random(&b, &mut rng, 0.5, 1.0);
    let mut hv = vec![0.0; b.dim()];
    hv[0] = 0.5;
    hv[3] = -0.25;
    let h = Control::constant(p.horizon, 8, hv);
    let opts = SimOptions::for_basis(&b).with_dt(1e-3);
    let rows = khasminskii_experiment(
        &p,
        &x0,
        &y0,
        Some(&h),
        &[(0.02, 1e-3), (0.01, 5e-4)],
        KHASMINSKII_PATHS,
        &opts,
    )
    .unwrap();
    let factor = rows[0].err / rows[1].err;
    report(
        "khasminskii_ladder",
        factor >= KHASMINSKII_MIN_FACTOR,
        format!(
            "E int |Y - Y_hat|^2: {:.3e} -> {:.3e}, factor {factor:.2} (min {KHASMINSKII_MIN_FACTOR})",
            rows[0].err, rows[1].err
        ),
    );
}

#[test]
fn rate_function_oracle() {
    let start = Instant::now();
    let b = BasisSet::new(1, 1.5).unwrap();
    let p = single_mode(1.0);
    let (a, target) = (0.5, 1.5);
    let x0 = coords(&b, &[a]);
    let event = EventSpec::terminal_ball(coords(&b, &[target]), 1e-6).unwrap();
    let opts = RateOptions {
        n_knots: 32,
        support_modes: Some(1),
        budget: 100.0,
        dt: Some(1.0 / 32.0),
        ..RateOptions::default()
    };
    let r = rate_function(&p, &x0, &event, &opts, &DriftMode::ClosedForm, None).unwrap();
    let oracle = linear_rate_oracle(1.0, 1.0, a, target, p.horizon);
    let rel = (r.value - oracle).abs() / oracle;
    let elapsed = start.elapsed();
    report(
        "rate_function_oracle",
        r.converged && rel <= RATE_TOL && elapsed < RATE_BUDGET,
        format!(
            "I = {:.6} vs oracle {oracle:.6}, relative {rel:.2e} (tol {RATE_TOL}), {} iterations, {:.1}s",
            r.value,
            r.iterations,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn ldp_trend() {
    let start = Instant::now();
    let b = BasisSet::new(1, 1.5).unwrap();
    let p = single_mode(1.0);
    let x0 = coords(&b, &[0.3, 0.0]);
    let dt = 0.01;
    let reference = solve_averaged(&p, &x0, dt, &DriftMode::ClosedForm).unwrap();
    // I = gamma eta^2 / (sigma^2 (1 - e^{-2 gamma T})) = 0.4 at gamma = sigma = T = 1.
    let oracle = 0.4;
    let eta = (oracle * (1.0 - (-2.0f64).exp())).sqrt();
    let event = EventSpec::sup_exceedance(reference, eta).unwrap();
    let rate_opts = RateOptions {
        n_knots: 32,
        support_modes: Some(1),
        dt: Some(1.0 / 32.0),
        ..RateOptions::default()
    };
    let rate = rate_function(&p, &x0, &event, &rate_opts, &DriftMode::ClosedForm, None).unwrap();
    let opts = SimOptions::for_basis(&b).with_dt(dt);
    let table = ldp_check(
        &p,
        &x0,
        &SpectralField::zeros(&b),
        &event,
        &[0.2, 0.1, 0.05],
        &DeltaRule::default(),
        LDP_PATHS,
        &opts,
        oracle,
    )
    .unwrap();
    let elapsed = start.elapsed();
    let rel = table.rel_err_smallest.unwrap_or(f64::INFINITY);
    let trend: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("eps {}: {:.4} [{:.4}, {:.4}]", r.eps, r.neg_eps_log_p, r.neg_eps_log_lo, r.neg_eps_log_hi))
        .collect();
    report(
        "ldp_trend",
        rel <= LDP_TOL && table.monotone && table.zero_hit_eps.is_empty() && elapsed < LDP_BUDGET,
        format!(
            "-eps log p: {}; I oracle {oracle}, optimizer {:.4}; relative error at smallest eps {rel:.3} (tol {LDP_TOL}), monotone {}, {:.1}s",
            trend.join("; "),
            rate.value,
            table.monotone,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn skeleton_matches_averaged_at_zero_control() {
    let b = BasisSet::new(4, 1.5).unwrap();
    let p = ModelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = Control::zero(p.horizon, 16, b.dim());
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let x0 = SpectralField::random(&b, &mut rng, 2.0, 1.0);
        let dt = 1e-3;
        let s = solve_skeleton(&p, &h, &x0, dt, &DriftMode::ClosedForm).unwrap();
        let a = solve_averaged(&p, &x0, dt, &DriftMode::ClosedForm).unwrap();
        worst = worst.max(s.sup_distance(&a).unwrap());
    }
    report(
        "skeleton_zero_control",
        worst <= SKELETON_TOL,
        format!("sup-H distance {worst:.3e} over 5 initial conditions (tol {SKELETON_TOL:e})"),
    );
}

#[test]
fn thread_count_does_not_change_outputs() {
    let root = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_scbf");
    let run = |sub: &str, threads: &str, out: &std::path::Path| {
        let status = std::process::Command::new(bin)
            .args([
                sub,
                "--threads",
                threads,
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "42",
                "--set",
                "basis.n=2",
                "--set",
                "monte_carlo.n_paths=8",
                "--set",
                "sweep.eps=[0.2, 0.1]",
                "--set",
                "scheme.dt=0.01",
                "--set",
                "output.svg=false",
            ])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        let dir = String::from_utf8(status.stdout).unwrap();
        std::path::PathBuf::from(dir.trim())
    };
    let mut identical = true;
    let mut compared = Vec::new();
    for (sub, file) in [("average", "averaging_error.csv"), ("simulate", "endpoints.csv")] {
        let a = run(sub, "1", &root.path().join("one"));
        let c = run(sub, "3", &root.path().join("three"));
        assert_eq!(a.file_name(), c.file_name());
        let ba = std::fs::read(a.join(file)).unwrap();
        let bc = std::fs::read(c.join(file)).unwrap();
        identical &= ba == bc;
        compared.push(format!("{file} ({} bytes)", ba.len()));
    }
    report(
        "thread_count_determinism",
        identical,
        format!("byte comparison of {} with --threads 1 vs 3", compared.join(", ")),
    );
}
