//! Property suites run by `scbf verify`.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::operators::{
    check_c_splitting, check_c_strong_monotone, check_g_ball_monotone, check_g_local_monotone,
    trilinear_b, OperatorParams, CHECK_SLACK,
};
use crate::sde::{simulate_slow_fast, CouplingSpec, ModelParams, NoiseModel, SimOptions};
use crate::spectral::{BasisSet, SpectralField};

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest violation relative to the suite's tolerance; at most 1 on
    /// success.
    pub worst: f64,
    pub seconds: f64,
    pub passed: bool,
}

impl SuiteResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            cases: 0,
            failures: 0,
            worst: 0.0,
            seconds: 0.0,
            passed: false,
        }
    }

    /// `excess / tol`, recorded as a failure above 1.
    fn record(&mut self, excess: f64, tol: f64) {
        self.cases += 1;
        let ratio = if tol > 0.0 { excess / tol } else if excess > 0.0 { f64::INFINITY } else { 0.0 };
        let ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
        self.worst = self.worst.max(ratio);
        if ratio > 1.0 {
            self.failures += 1;
        }
    }

    fn finish(mut self, start: Instant) -> Self {
        self.seconds = start.elapsed().as_secs_f64();
        self.passed = self.failures == 0 && self.cases > 0;
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub spec_version: &'static str,
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

fn random_field(basis: &Arc<BasisSet>, rng: &mut ChaCha8Rng) -> SpectralField {
    let amp = 10f64.powf(rng.random_range(-1.0..1.0));
    let slope = rng.random_range(0.0..2.0);
    SpectralField::random(basis, rng, amp, slope)
}

/// Antisymmetry of `b`, strong monotonicity and splitting of `C`, and
/// local monotonicity of `G` on `pairs` random pairs per exponent.
pub fn operator_suites(
    n: usize,
    r_values: &[f64],
    mu: f64,
    beta: f64,
    pairs: usize,
    seed: u64,
) -> Result<Vec<SuiteResult>> {
    let basis = BasisSet::new(n, 1.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fields: Vec<(SpectralField, SpectralField, SpectralField)> = (0..pairs)
        .map(|_| {
            (
                random_field(&basis, &mut rng),
                random_field(&basis, &mut rng),
                random_field(&basis, &mut rng),
            )
        })
        .collect();

    let start = Instant::now();
    let mut anti = SuiteResult::new("b_antisymmetry");
    for (u, v, w) in &fields {
        let bound = u.lp_norm(4.0) * v.norm_v() * w.lp_norm(4.0) + f64::MIN_POSITIVE;
        let bvv = trilinear_b(u, v, v)?;
        anti.record(bvv.abs(), CHECK_SLACK * bound);
        let swap = trilinear_b(u, v, w)? + trilinear_b(u, w, v)?;
        let wbound = bound + u.lp_norm(4.0) * w.norm_v() * v.lp_norm(4.0);
        anti.record(swap.abs(), CHECK_SLACK * wbound);
    }
    let mut out = vec![anti.finish(start)];

    for &r in r_values {
        let params = OperatorParams::new(mu, beta, r)?;
        let start = Instant::now();
        let mut mono = SuiteResult::new(&format!("c_monotone_r{r}"));
        let mut split = SuiteResult::new(&format!("c_splitting_r{r}"));
        let mut g = SuiteResult::new(&format!("g_monotone_r{r}"));
        for (u, v, _) in &fields {
            let c = check_c_strong_monotone(u, v, r)?;
            mono.record((c.rhs - c.lhs).max(0.0), CHECK_SLACK * c.scale);
            let c = check_c_splitting(u, v, r)?;
            split.record((c.rhs - c.lhs).max(0.0), CHECK_SLACK * c.scale);
            let m = if r >= 3.0 {
                check_g_local_monotone(u, v, &params)?
            } else {
                check_g_ball_monotone(u, v, &params, v.lp_norm(4.0))?
            };
            g.record((-m.value).max(0.0), CHECK_SLACK * m.scale);
        }
        out.push(mono.finish(start));
        out.push(split.finish(start));
        out.push(g.finish(start));
    }
    Ok(out)
}

fn quiet_model() -> ModelParams {
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

/// Single-mode noise-free decay against `exp(-(mu + alpha) T)`.
pub fn linear_decay_suite() -> Result<SuiteResult> {
    let start = Instant::now();
    let mut s = SuiteResult::new("linear_decay");
    let basis = BasisSet::new(2, 1.5)?;
    for (mu, alpha) in [(1.0, 0.0), (0.5, 0.3)] {
        let p = ModelParams {
            mu,
            alpha,
            ..quiet_model()
        };
        let mut c = vec![0.0; basis.dim()];
        c[0] = 0.7;
        let x0 = SpectralField::from_coords(&basis, &c)?;
        let opts = SimOptions::for_basis(&basis).with_dt(1e-4);
        let tr = simulate_slow_fast(&p, &x0, &SpectralField::zeros(&basis), &opts)?;
        let got = tr.slow.last().expect("recorded").coords()[0];
        let exact = 0.7 * (-(mu + alpha) * p.horizon).exp();
        s.record(((got - exact) / exact).abs(), 1e-8);
    }
    Ok(s.finish(start))
}

/// Noise-free energy identity on random initial data.
pub fn energy_suite(n: usize, r_values: &[f64], ics: usize, seed: u64) -> Result<SuiteResult> {
    let start = Instant::now();
    let mut s = SuiteResult::new("energy_balance");
    let basis = BasisSet::new(n, 1.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &r in r_values {
        let p = ModelParams {
            beta: 1.0,
            r,
            alpha: 0.2,
            ..quiet_model()
        };
        for _ in 0..ics {
            let x0 = SpectralField::random(&basis, &mut rng, 1.0, 1.0);
            let opts = SimOptions {
                track_energy: true,
                record_every: usize::MAX,
                ..SimOptions::for_basis(&basis)
            };
            let tr = simulate_slow_fast(&p, &x0, &SpectralField::zeros(&basis), &opts)?;
            let e = tr.energy.expect("tracked");
            s.record(e.residual(p.mu, p.alpha, p.beta), e.tolerance(opts.dt));
        }
    }
    Ok(s.finish(start))
}

pub fn run_all(n: usize, r_values: &[f64], mu: f64, beta: f64, pairs: usize, seed: u64) -> Result<VerifyReport> {
    let mut suites = operator_suites(n, r_values, mu, beta, pairs, seed)?;
    suites.push(linear_decay_suite()?);
    let energy_rs: Vec<f64> = r_values.iter().copied().filter(|r| *r >= 3.0).collect();
    suites.push(energy_suite(4, &energy_rs, 2, seed)?);
    let passed = suites.iter().all(|s| s.passed);
    Ok(VerifyReport {
        spec_version: super::output::SPEC_VERSION,
        suites,
        passed,
    })
}
