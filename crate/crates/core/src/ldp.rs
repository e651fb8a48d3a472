//! Skeleton equation, rate-function evaluation by penalized control
//! optimization, and Monte Carlo large-deviation experiments.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{solve_averaged_controlled, DeltaRule, DriftMode};
use crate::error::{Error, Result};
use crate::sde::{
    default_dt, simulate_auxiliary, simulate_controlled, step_grid, Control, ModelParams,
    SimOptions, SlowFastRunner, Trajectory,
};
use crate::spectral::{BasisSet, SpectralField};
use crate::util::{linear_fit, mean, std_error, wilson_interval, Z95};

/// Target sets for rate-function and probability estimates.
#[derive(Debug, Clone)]
pub enum EventKind {
    /// `{ |X_T - center|_H < radius }`.
    TerminalBall { center: SpectralField },
    /// `{ sup_t |X_t - reference_t|_H >= radius }`, with the reference
    /// interpolated linearly between its recorded times.
    SupExceedance { reference: Trajectory },
}

#[derive(Debug, Clone)]
pub struct EventSpec {
    pub kind: EventKind,
    /// `f64::INFINITY` is allowed: the whole space for a terminal ball and
    /// the empty set for an exceedance.
    pub radius: f64,
}

impl EventSpec {
    pub fn terminal_ball(center: SpectralField, radius: f64) -> Result<Self> {
        let e = Self {
            kind: EventKind::TerminalBall { center },
            radius,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn sup_exceedance(reference: Trajectory, radius: f64) -> Result<Self> {
        let e = Self {
            kind: EventKind::SupExceedance { reference },
            radius,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 0.0) {
            return Err(Error::invalid("event radius must be >= 0"));
        }
        if let EventKind::SupExceedance { reference } = &self.kind {
            if reference.states().len() < 2 || reference.times[0] != 0.0 {
                return Err(Error::invalid(
                    "exceedance reference needs at least two snapshots starting at t = 0",
                ));
            }
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            EventKind::TerminalBall { .. } => "terminal_ball",
            EventKind::SupExceedance { .. } => "sup_exceedance",
        }
    }

    fn basis(&self) -> &Arc<BasisSet> {
        match &self.kind {
            EventKind::TerminalBall { center } => center.basis(),
            EventKind::SupExceedance { reference } => reference.states()[0].basis(),
        }
    }

    /// Reference coordinates on the uniform grid `k * dt`, `k = 0..=n`.
    fn reference_on_grid(&self, n: usize, dt: f64) -> Option<Vec<Vec<f64>>> {
        let EventKind::SupExceedance { reference } = &self.kind else {
            return None;
        };
        let states: Vec<Vec<f64>> = reference.states().iter().map(|s| s.coords()).collect();
        let times = &reference.times;
        let mut out = Vec::with_capacity(n + 1);
        let mut i = 0;
        for k in 0..=n {
            let t = k as f64 * dt;
            while i + 2 < times.len() && times[i + 1] <= t {
                i += 1;
            }
            let (t0, t1) = (times[i], times[i + 1]);
            let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            out.push(
                states[i]
                    .iter()
                    .zip(&states[i + 1])
                    .map(|(a, b)| a + w * (b - a))
                    .collect(),
            );
        }
        Some(out)
    }

    fn tracker(&self, n: usize, dt: f64) -> EventTracker {
        EventTracker {
            reference: self.reference_on_grid(n, dt).map(Arc::new),
            center: match &self.kind {
                EventKind::TerminalBall { center } => Some(Arc::new(center.coords())),
                _ => None,
            },
            radius: self.radius,
            sup: 0.0,
            last_dist: f64::INFINITY,
        }
    }

    /// Penalty distance of a path sampled on the grid `k * dt` to the event.
    pub fn distance(&self, path: &[Vec<f64>], dt: f64) -> f64 {
        let mut tr = self.tracker(path.len() - 1, dt);
        for (k, x) in path.iter().enumerate() {
            tr.observe(k, x);
        }
        tr.distance()
    }
}

/// Streaming evaluation of an event along one path.
#[derive(Clone)]
struct EventTracker {
    reference: Option<Arc<Vec<Vec<f64>>>>,
    center: Option<Arc<Vec<f64>>>,
    radius: f64,
    sup: f64,
    last_dist: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

impl EventTracker {
    fn observe(&mut self, k: usize, x: &[f64]) {
        if let Some(r) = &self.reference {
            self.sup = self.sup.max(dist(x, &r[k]));
        }
        if let Some(c) = &self.center {
            self.last_dist = dist(x, c);
        }
    }

    /// Exceedance is already certain.
    fn decided(&self) -> bool {
        self.reference.is_some() && self.sup >= self.radius
    }

    fn contains(&self) -> bool {
        if self.reference.is_some() {
            self.sup >= self.radius
        } else {
            self.radius == f64::INFINITY || self.last_dist < self.radius
        }
    }

    fn distance(&self) -> f64 {
        if self.reference.is_some() {
            (self.radius - self.sup).max(0.0)
        } else if self.radius == f64::INFINITY {
            0.0
        } else {
            (self.last_dist - self.radius).max(0.0)
        }
    }
}

/// Skeleton equation
/// `dX = -[mu A X + B(X) + alpha X + beta C(X)] dt + F_bar(X) dt + sigma1(X) Q1^(1/2) h dt`.
pub fn solve_skeleton(
    params: &ModelParams,
    h: &Control,
    x0: &SpectralField,
    dt: f64,
    mode: &DriftMode,
) -> Result<Trajectory> {
    check_budget(h)?;
    Ok(solve_averaged_controlled(params, x0, Some(h), dt, mode, 1, false)?.0)
}

/// As [`solve_skeleton`] with the energy integrals recorded.
pub fn solve_skeleton_with_energy(
    params: &ModelParams,
    h: &Control,
    x0: &SpectralField,
    dt: f64,
    mode: &DriftMode,
) -> Result<Trajectory> {
    check_budget(h)?;
    Ok(solve_averaged_controlled(params, x0, Some(h), dt, mode, 1, true)?.0)
}

fn check_budget(h: &Control) -> Result<()> {
    let e = h.l2_sq();
    if e > h.budget() + 1e-12 * h.budget().max(1.0) {
        return Err(Error::invalid(format!(
            "control energy {e} exceeds budget {}",
            h.budget()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateOptions {
    pub n_knots: usize,
    /// Control acts on the lowest `K` modes; all modes when unset.
    #[serde(default)]
    pub support_modes: Option<usize>,
    /// Budget `M` of `integral |h|^2`.
    pub budget: f64,
    /// Skeleton step; defaults to the largest divisor of the knot spacing
    /// not above the default slow step.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "d_penalty0")]
    pub penalty0: f64,
    #[serde(default = "d_growth")]
    pub penalty_growth: f64,
    #[serde(default = "d_stages")]
    pub stages: usize,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default = "d_fd_step")]
    pub fd_step: f64,
    /// Largest accepted distance to the event.
    #[serde(default = "d_target_tol")]
    pub target_tol: f64,
    #[serde(default = "d_init")]
    pub init_scale: f64,
}

fn d_penalty0() -> f64 {
    10.0
}
fn d_growth() -> f64 {
    10.0
}
fn d_stages() -> usize {
    5
}
fn d_max_iter() -> usize {
    200
}
fn d_fd_step() -> f64 {
    1e-5
}
fn d_target_tol() -> f64 {
    1e-3
}
fn d_init() -> f64 {
    1e-3
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            n_knots: 32,
            support_modes: None,
            budget: 100.0,
            dt: None,
            penalty0: d_penalty0(),
            penalty_growth: d_growth(),
            stages: d_stages(),
            max_iter: d_max_iter(),
            fd_step: d_fd_step(),
            target_tol: d_target_tol(),
            init_scale: d_init(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RateResult {
    /// `1/2 integral |h*|^2`; meaningful only when `converged`.
    pub value: f64,
    pub control: Control,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Penalized objective over the knot values of the control.
struct Problem<'a> {
    params: &'a ModelParams,
    x0: &'a SpectralField,
    event: &'a EventSpec,
    mode: &'a DriftMode,
    horizon: f64,
    n_knots: usize,
    support: usize,
    dim: usize,
    dt: f64,
    budget: f64,
}

impl Problem<'_> {
    fn n_vars(&self) -> usize {
        self.n_knots * self.support
    }

    fn control(&self, v: &[f64]) -> Control {
        let values = (0..self.n_knots)
            .map(|k| {
                let mut h = vec![0.0; self.dim];
                h[..self.support].copy_from_slice(&v[k * self.support..(k + 1) * self.support]);
                h
            })
            .collect();
        Control::new(self.horizon, values, f64::INFINITY)
            .unwrap_or_else(|_| Control::zero(self.horizon, self.n_knots, self.dim))
    }

    fn energy(&self, v: &[f64]) -> f64 {
        0.5 * v.iter().map(|a| a * a).sum::<f64>() * (self.horizon / self.n_knots as f64)
    }

    /// Distance to the event; `None` when the skeleton blows up.
    fn distance(&self, v: &[f64]) -> Option<f64> {
        let h = self.control(v);
        let traj = solve_averaged_controlled(self.params, self.x0, Some(&h), self.dt, self.mode, 1, false)
            .ok()?
            .0;
        let path: Vec<Vec<f64>> = traj.states().iter().map(|s| s.coords()).collect();
        Some(self.event.distance(&path, self.dt))
    }

    fn objective(&self, v: &[f64], penalty: f64) -> f64 {
        match self.distance(v) {
            Some(d) => self.energy(v) + penalty * d * d,
            None => f64::INFINITY,
        }
    }

    fn gradient(&self, v: &[f64], penalty: f64, step: f64) -> Vec<f64> {
        let dtk = self.horizon / self.n_knots as f64;
        (0..v.len())
            .into_par_iter()
            .map(|i| {
                let hstep = step * v[i].abs().max(1.0);
                let mut vp = v.to_vec();
                let mut vm = v.to_vec();
                vp[i] += hstep;
                vm[i] -= hstep;
                let dp = self.distance(&vp).unwrap_or(f64::INFINITY);
                let dm = self.distance(&vm).unwrap_or(f64::INFINITY);
                let g_pen = penalty * (dp * dp - dm * dm) / (2.0 * hstep);
                v[i] * dtk + if g_pen.is_finite() { g_pen } else { 0.0 }
            })
            .collect()
    }

    fn feasible(&self, v: &[f64], tol: f64) -> Option<f64> {
        let d = self.distance(v)?;
        let l2 = 2.0 * self.energy(v);
        (d <= tol && l2 <= self.budget * (1.0 + 1e-12)).then_some(d)
    }
}

/// Quasi-Newton minimization with Armijo backtracking. Returns the number
/// of iterations taken.
fn bfgs(problem: &Problem, v: &mut Vec<f64>, penalty: f64, opts: &RateOptions) -> usize {
    let n = v.len();
    let mut hinv = vec![0.0; n * n];
    let reset = |h: &mut Vec<f64>| {
        h.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            h[i * n + i] = 1.0;
        }
    };
    reset(&mut hinv);
    let mut f = problem.objective(v, penalty);
    if !f.is_finite() {
        return 0;
    }
    let mut g = problem.gradient(v, penalty, opts.fd_step);
    let mut it = 0;
    while it < opts.max_iter {
        it += 1;
        let gn = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        if gn <= 1e-9 * f.abs().max(1.0) {
            break;
        }
        let mut p: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| hinv[i * n + j] * g[j]).sum::<f64>())
            .collect();
        let mut slope: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            reset(&mut hinv);
            p = g.iter().map(|a| -a).collect();
            slope = -gn * gn;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-14 {
            let trial: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
            let ft = problem.objective(&trial, penalty);
            if ft <= f + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, ft)) = accepted else {
            break;
        };
        let g_new = problem.gradient(&trial, penalty, opts.fd_step);
        let s: Vec<f64> = trial.iter().zip(v.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * (s.iter().map(|a| a * a).sum::<f64>().sqrt() * y.iter().map(|a| a * a).sum::<f64>().sqrt()).max(1e-300) {
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| hinv[i * n + j] * y[j]).sum())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let df = f - ft;
        *v = trial;
        g = g_new;
        f = ft;
        if df.abs() <= 1e-15 * f.abs().max(1e-300) {
            break;
        }
    }
    it
}

/// `I = inf { 1/2 integral |h|^2 : skeleton(h) in event }` over piecewise
/// constant controls, by quadratic-penalty continuation. A feasible
/// `probe` bounds the result from above.
pub fn rate_function(
    params: &ModelParams,
    x0: &SpectralField,
    event: &EventSpec,
    opts: &RateOptions,
    mode: &DriftMode,
    probe: Option<&Control>,
) -> Result<RateResult> {
    event.validate()?;
    let basis = x0.basis().clone();
    if !basis.compatible(event.basis()) {
        return Err(Error::invalid("event and initial state live on different bases"));
    }
    if opts.n_knots == 0 || opts.stages == 0 {
        return Err(Error::invalid("n_knots and stages must be >= 1"));
    }
    let support = 2 * opts.support_modes.unwrap_or(basis.len()).min(basis.len());
    if support == 0 {
        return Err(Error::invalid("support_modes must be >= 1"));
    }
    let horizon = params.horizon;
    let spacing = horizon / opts.n_knots as f64;
    let dt_max = opts.dt.unwrap_or_else(|| default_dt(&basis));
    let per_knot = ((spacing / dt_max) - 1e-9).ceil().max(1.0);
    let problem = Problem {
        params,
        x0,
        event,
        mode,
        horizon,
        n_knots: opts.n_knots,
        support,
        dim: basis.dim(),
        dt: spacing / per_knot,
        budget: opts.budget,
    };
    let n = problem.n_vars();
    let zero = vec![0.0; n];
    let d0 = problem
        .distance(&zero)
        .ok_or(Error::NumericalBlowup { step: 0, time: 0.0 })?;
    if d0 == 0.0 {
        return Ok(RateResult {
            value: 0.0,
            control: problem.control(&zero),
            residual: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    let mut v: Vec<f64> = (0..n)
        .map(|i| opts.init_scale * (1.0 + 0.1 * i as f64 / n as f64))
        .collect();
    let mut penalty = opts.penalty0;
    let mut iterations = 0;
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for _ in 0..opts.stages {
        iterations += bfgs(&problem, &mut v, penalty, opts);
        if let Some(d) = problem.feasible(&v, opts.target_tol) {
            let e = problem.energy(&v);
            if best.as_ref().is_none_or(|b| e < b.1) {
                best = Some((v.clone(), e, d));
            }
        }
        penalty *= opts.penalty_growth;
    }

    let mut result = match best {
        Some((bv, _, d)) => {
            let control = Control::new(horizon, problem.control(&bv).values().to_vec(), opts.budget)?;
            RateResult {
                value: control.energy(),
                control,
                residual: d,
                iterations,
                converged: true,
            }
        }
        None => {
            let control = problem.control(&v);
            RateResult {
                value: control.energy(),
                residual: problem.distance(&v).unwrap_or(f64::INFINITY),
                control,
                iterations,
                converged: false,
            }
        }
    };

    if let Some(p) = probe {
        if p.dim() != basis.dim() {
            return Err(Error::invalid("probe control dimension does not match basis"));
        }
        let tr = solve_averaged_controlled(params, x0, Some(p), problem.dt, mode, 1, false)?.0;
        let path: Vec<Vec<f64>> = tr.states().iter().map(|s| s.coords()).collect();
        let d = event.distance(&path, problem.dt);
        let ok = d <= opts.target_tol && p.l2_sq() <= opts.budget * (1.0 + 1e-12);
        if ok && (!result.converged || p.energy() < result.value) {
            result = RateResult {
                value: p.energy(),
                control: p.clone(),
                residual: d,
                iterations: result.iterations,
                converged: true,
            };
        }
    }
    Ok(result)
}

/// Closed-form minimal energy for the scalar linear system
/// `dx = -gamma x dt + sigma h dt` to move from `a` to `b` in time `T`.
pub fn linear_rate_oracle(gamma: f64, sigma: f64, a: f64, b: f64, horizon: f64) -> f64 {
    let d = b - a * (-gamma * horizon).exp();
    if gamma.abs() < 1e-12 {
        return d * d / (2.0 * sigma * sigma * horizon);
    }
    gamma * d * d / (sigma * sigma * (1.0 - (-2.0 * gamma * horizon).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub hits: u64,
    pub n_paths: u64,
    pub n_excluded: u64,
}

/// Fraction of coupled-system paths whose slow component lies in `event`,
/// with a Wilson 95% interval.
pub fn mc_probability(
    params: &ModelParams,
    x0: &SpectralField,
    y0: &SpectralField,
    event: &EventSpec,
    n_paths: usize,
    opts: &SimOptions,
) -> Result<McEstimate> {
    event.validate()?;
    if n_paths < 100 {
        return Err(Error::invalid("mc_probability needs n_paths >= 100"));
    }
    let (n_steps, dt) = step_grid(params.horizon, opts.dt);
    let template = event.tracker(n_steps, dt);
    let outcomes: Vec<Result<Option<bool>>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|k| {
            let o = SimOptions {
                record_fast: false,
                ..opts.clone()
            }
            .with_path(k);
            let mut run = SlowFastRunner::new(params, x0, y0, None, &o)?;
            let mut tr = template.clone();
            tr.observe(0, run.x());
            while !run.finished() {
                match run.step() {
                    Ok(()) => {}
                    Err(Error::NumericalBlowup { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                }
                tr.observe(run.step_index(), run.x());
                if tr.decided() {
                    return Ok(Some(true));
                }
            }
            Ok(Some(tr.contains()))
        })
        .collect();
    let mut hits = 0u64;
    let mut total = 0u64;
    let mut excluded = 0u64;
    for o in outcomes {
        match o? {
            Some(h) => {
                total += 1;
                hits += h as u64;
            }
            None => excluded += 1,
        }
    }
    let (lo, hi) = wilson_interval(hits, total, Z95);
    Ok(McEstimate {
        p_hat: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        ci_lo: lo,
        ci_hi: hi,
        hits,
        n_paths: total,
        n_excluded: excluded,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LdpRow {
    pub eps: f64,
    pub delta: f64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub hits: u64,
    /// `-eps log p_hat`; infinite when no path hit the event.
    pub neg_eps_log_p: f64,
    pub neg_eps_log_lo: f64,
    pub neg_eps_log_hi: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LdpTable {
    pub rows: Vec<LdpRow>,
    /// Levels with zero hits, excluded from the trend verdict.
    pub zero_hit_eps: Vec<f64>,
    /// `|-eps log p - I|` shrinks along the grid up to interval slack.
    pub monotone: bool,
    /// Relative error `|-eps log p - I| / I` at the smallest usable `eps`.
    pub rel_err_smallest: Option<f64>,
}

/// `-eps log p_hat` against the rate `rate` along a decreasing `eps` grid.
#[allow(clippy::too_many_arguments)]
pub fn ldp_check(
    params: &ModelParams,
    x0: &SpectralField,
    y0: &SpectralField,
    event: &EventSpec,
    eps_grid: &[f64],
    rule: &DeltaRule,
    n_paths: usize,
    opts: &SimOptions,
    rate: f64,
) -> Result<LdpTable> {
    if eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("eps grid must be strictly decreasing"));
    }
    let mut rows = Vec::new();
    let mut zero = Vec::new();
    for &eps in eps_grid {
        let delta = rule.delta(eps);
        let p = params.with_scales(eps, delta);
        let mc = mc_probability(&p, x0, y0, event, n_paths, opts)?;
        if mc.hits == 0 {
            zero.push(eps);
        }
        let nl = |q: f64| if q > 0.0 { -eps * q.ln() } else { f64::INFINITY };
        rows.push(LdpRow {
            eps,
            delta,
            p_hat: mc.p_hat,
            ci_lo: mc.ci_lo,
            ci_hi: mc.ci_hi,
            hits: mc.hits,
            neg_eps_log_p: nl(mc.p_hat),
            neg_eps_log_lo: nl(mc.ci_hi),
            neg_eps_log_hi: nl(mc.ci_lo),
            rate,
        });
    }
    let usable: Vec<&LdpRow> = rows.iter().filter(|r| r.hits > 0).collect();
    let gap_lo = |r: &LdpRow| {
        if r.neg_eps_log_lo <= rate && rate <= r.neg_eps_log_hi {
            0.0
        } else {
            (r.neg_eps_log_lo - rate).abs().min((r.neg_eps_log_hi - rate).abs())
        }
    };
    let gap_hi = |r: &LdpRow| (r.neg_eps_log_lo - rate).abs().max((r.neg_eps_log_hi - rate).abs());
    let monotone = usable.windows(2).all(|w| gap_lo(w[1]) <= gap_hi(w[0]));
    let rel_err_smallest = usable
        .last()
        .map(|r| (r.neg_eps_log_p - rate).abs() / rate.abs().max(f64::MIN_POSITIVE));
    Ok(LdpTable {
        rows,
        zero_hit_eps: zero,
        monotone,
        rel_err_smallest,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct WeakRow {
    pub eps: f64,
    pub delta: f64,
    /// `E sup_t |X^{eps, delta, h} - X_bar^h|_H^2`.
    pub err_sup: f64,
    pub stderr_sup: f64,
    /// `E integral |X^{eps, delta, h} - X_bar^h|_V^2 dt`.
    pub err_v: f64,
    pub stderr_v: f64,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct WeakTable {
    pub rows: Vec<WeakRow>,
    pub decreasing: bool,
    /// Slope of `log err_sup` against `log(eps^2 + delta/eps + delta^(1/8))`.
    pub slope: Option<f64>,
}

/// Controlled system with a fixed control `h` against its skeleton.
#[allow(clippy::too_many_arguments)]
pub fn weak_convergence_experiment(
    params: &ModelParams,
    x0: &SpectralField,
    y0: &SpectralField,
    h: &Control,
    eps_grid: &[f64],
    rule: &DeltaRule,
    n_paths: usize,
    opts: &SimOptions,
    mode: &DriftMode,
) -> Result<WeakTable> {
    if eps_grid.is_empty() || n_paths == 0 {
        return Err(Error::invalid("need a non-empty eps grid and n_paths >= 1"));
    }
    let reference = solve_skeleton(params, h, x0, opts.dt, mode)?;
    let (_, dt) = step_grid(params.horizon, opts.dt);
    let opts = SimOptions {
        record_every: 1,
        record_fast: false,
        ..opts.clone()
    };
    let mut rows = Vec::new();
    for &eps in eps_grid {
        let delta = rule.delta(eps);
        let p = params.with_scales(eps, delta);
        let res: Vec<Result<Option<(f64, f64)>>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|k| {
                let o = opts.clone().with_path(k);
                match simulate_controlled(&p, x0, y0, Some(h), &o) {
                    Ok(tr) => {
                        let mut sup = 0.0f64;
                        let mut vint = 0.0;
                        let mut prev = None;
                        for (a, b) in tr.slow.iter().zip(&reference.slow) {
                            let d = a - b;
                            sup = sup.max(d.norm_h_sq());
                            let v = d.norm_v_sq();
                            if let Some(pv) = prev {
                                vint += 0.5 * dt * (pv + v);
                            }
                            prev = Some(v);
                        }
                        Ok(Some((sup, vint)))
                    }
                    Err(Error::NumericalBlowup { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect();
        let mut sups = Vec::new();
        let mut vs = Vec::new();
        let mut excluded = 0;
        for r in res {
            match r? {
                Some((s, v)) => {
                    sups.push(s);
                    vs.push(v);
                }
                None => excluded += 1,
            }
        }
        rows.push(WeakRow {
            eps,
            delta,
            err_sup: mean(&sups),
            stderr_sup: std_error(&sups),
            err_v: mean(&vs),
            stderr_v: std_error(&vs),
            n_excluded: excluded,
        });
    }
    let decreasing = rows.windows(2).all(|w| w[1].err_sup < w[0].err_sup);
    let (lx, ly): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.err_sup > 0.0)
        .map(|r| {
            let scale = r.eps * r.eps + r.delta / r.eps + r.delta.powf(0.125);
            (scale.ln(), r.err_sup.ln())
        })
        .unzip();
    Ok(WeakTable {
        slope: linear_fit(&lx, &ly).map(|(_, s)| s),
        rows,
        decreasing,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct KhasminskiiRow {
    pub block: f64,
    pub delta: f64,
    /// `E integral_0^T |Y_t - Y_hat_t|_H^2 dt`.
    pub err: f64,
    pub stderr: f64,
}

/// Compares the controlled fast component with the auxiliary process for
/// each `(Delta, delta)` pair of the ladder.
#[allow(clippy::too_many_arguments)]
pub fn khasminskii_experiment(
    params: &ModelParams,
    x0: &SpectralField,
    y0: &SpectralField,
    h: Option<&Control>,
    ladder: &[(f64, f64)],
    n_paths: usize,
    opts: &SimOptions,
) -> Result<Vec<KhasminskiiRow>> {
    let opts = SimOptions {
        record_every: 1,
        record_fast: true,
        ..opts.clone()
    };
    let (_, dt) = step_grid(params.horizon, opts.dt);
    let mut rows = Vec::new();
    for &(block, delta) in ladder {
        let p = ModelParams {
            delta,
            ..params.clone()
        };
        let res: Vec<Result<f64>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|k| {
                let o = opts.clone().with_path(k);
                let tr = simulate_controlled(&p, x0, y0, h, &o)?;
                let aux = simulate_auxiliary(&p, &tr, y0, block, &o)?;
                let mut acc = 0.0;
                let mut prev = None;
                for (a, b) in tr.fast.iter().zip(&aux.fast) {
                    let v = (a - b).norm_h_sq();
                    if let Some(pv) = prev {
                        acc += 0.5 * dt * (pv + v);
                    }
                    prev = Some(v);
                }
                Ok(acc)
            })
            .collect();
        let vals = res.into_iter().collect::<Result<Vec<f64>>>()?;
        rows.push(KhasminskiiRow {
            block,
            delta,
            err: mean(&vals),
            stderr: std_error(&vals),
        });
    }
    Ok(rows)
}

/// `integral_0^T |X_t - X_{t(Delta)}|^2 dt` for a trajectory recorded on a
/// uniform grid.
pub fn time_increment_integral(traj: &Trajectory, block: f64) -> Result<f64> {
    let s = traj.states();
    if s.len() < 2 {
        return Err(Error::invalid("trajectory too short"));
    }
    let dt = traj.times[1] - traj.times[0];
    let mut acc = 0.0;
    let mut prev: Option<f64> = None;
    for (k, x) in s.iter().enumerate() {
        let t = traj.times[k];
        let start = ((t / block) + 1e-9).floor() * block;
        let idx = ((start / dt) + 1e-9).floor() as usize;
        let v = (x - &s[idx]).norm_h_sq();
        if let Some(p) = prev {
            acc += 0.5 * dt * (p + v);
        }
        prev = Some(v);
    }
    Ok(acc)
}

/// Log-log slope of the increment integral over a ladder of block lengths.
pub fn increment_slope(trajs: &[Trajectory], blocks: &[f64]) -> Result<(Vec<f64>, Option<f64>)> {
    let mut vals = Vec::new();
    for &b in blocks {
        let v: Vec<f64> = trajs
            .iter()
            .map(|t| time_increment_integral(t, b))
            .collect::<Result<_>>()?;
        vals.push(mean(&v));
    }
    let lx: Vec<f64> = blocks.iter().map(|b| b.ln()).collect();
    let ly: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
    Ok((vals, linear_fit(&lx, &ly).map(|(_, s)| s)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{CouplingSpec, NoiseModel};

    fn scalar_params() -> ModelParams {
        ModelParams {
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
                active_modes: Some(1),
                ..NoiseModel::default()
            },
            ..ModelParams::default()
        }
    }

    #[test]
    fn oracle_limits() {
        let v = linear_rate_oracle(1.0, 1.0, 0.0, 1.0, 1.0);
        assert!((v - 1.0 / (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        let w = linear_rate_oracle(0.0, 2.0, 1.0, 3.0, 2.0);
        assert!((w - 4.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn zero_control_when_event_already_reached() {
        let b = BasisSet::new(1, 1.5).unwrap();
        let x0 = SpectralField::from_coords(&b, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let ev = EventSpec::terminal_ball(SpectralField::zeros(&b), 10.0).unwrap();
        let r = rate_function(
            &scalar_params(),
            &x0,
            &ev,
            &RateOptions::default(),
            &DriftMode::ClosedForm,
            None,
        )
        .unwrap();
        assert!(r.converged);
        assert_eq!(r.value, 0.0);
        assert!(r.control.is_zero());
    }

    #[test]
    fn whole_and_empty_events() {
        let b = BasisSet::new(1, 1.5).unwrap();
        let x0 = SpectralField::zeros(&b);
        let p = scalar_params();
        let opts = SimOptions::for_basis(&b).with_dt(0.05);
        let whole = EventSpec::terminal_ball(x0.clone(), f64::INFINITY).unwrap();
        let m = mc_probability(&p, &x0, &x0, &whole, 100, &opts).unwrap();
        assert_eq!(m.p_hat, 1.0);
        let far = SpectralField::from_coords(&b, &[100.0, 0.0, 0.0, 0.0]).unwrap();
        let empty = EventSpec::terminal_ball(far, 0.0).unwrap();
        let m = mc_probability(&p, &x0, &x0, &empty, 100, &opts).unwrap();
        assert_eq!(m.p_hat, 0.0);
        assert_eq!(m.ci_lo, 0.0);
        assert!(m.ci_hi > 0.0);
        assert!(mc_probability(&p, &x0, &x0, &empty, 99, &opts).is_err());
    }

    #[test]
    fn negative_radius_rejected() {
        let b = BasisSet::new(1, 1.5).unwrap();
        assert!(EventSpec::terminal_ball(SpectralField::zeros(&b), -1.0).is_err());
    }

    #[test]
    fn increment_integral_of_constant_path_vanishes() {
        let b = BasisSet::new(1, 1.5).unwrap();
        let x0 = SpectralField::from_coords(&b, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let mut p = scalar_params();
        p.mu = 1e-12;
        let h = Control::zero(1.0, 4, b.dim());
        let tr = solve_skeleton(&p, &h, &x0, 0.01, &DriftMode::ClosedForm).unwrap();
        assert!(time_increment_integral(&tr, 0.25).unwrap() < 1e-20);
    }
}
