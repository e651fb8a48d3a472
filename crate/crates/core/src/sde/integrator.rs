//! Exponential Euler-Maruyama integrators for the slow-fast system, the
//! controlled system, the frozen equation and the Khasminskii auxiliary
//! process.
//!
//! All states are carried as orthonormal H-coordinates. Each coordinate `j`
//! with linear decay rate `a_j` is advanced by
//!
//! ```text
//! x <- e^{-a h} x + phi(a, h) N(x) + e^{-a h / 2} (noise increment)
//! ```
//!
//! where `phi(a, h) = (1 - e^{-a h}) / a` and `N` collects the explicit
//! terms. Weighting the increment by the half-step factor gives the correct
//! stationary variance of the linear part to second order in `a h`.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::control::Control;
use super::noise::{fill_increments, stream, Bridge, Lane};
use super::params::{coord_rates, CouplingVariant, ModelParams};
use super::trajectory::{EnergyBudget, Trajectory};
use crate::error::{Error, Result};
use crate::operators::{bilinear_b, nonlinear_c};
use crate::spectral::{BasisSet, SpectralField};

/// States beyond this H-norm are treated as blown up.
const BLOWUP_NORM: f64 = 1e100;

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    /// Fast substep size is at most `c_sub * delta`.
    pub c_sub: f64,
    pub record_every: usize,
    pub stop_radius: Option<f64>,
    pub track_energy: bool,
    pub record_fast: bool,
    pub path_index: u64,
}

impl SimOptions {
    /// `dt = min(1e-3, 0.1 / lambda_N)`.
    pub fn for_basis(basis: &BasisSet) -> Self {
        Self {
            dt: default_dt(basis),
            c_sub: 0.1,
            record_every: 1,
            stop_radius: None,
            track_energy: false,
            record_fast: false,
            path_index: 0,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_path(mut self, path_index: u64) -> Self {
        self.path_index = path_index;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be > 0"));
        }
        if !(self.c_sub > 0.0) {
            return Err(Error::invalid("c_sub must be > 0"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be >= 1"));
        }
        if let Some(r) = self.stop_radius {
            if !(r > 0.0) {
                return Err(Error::invalid("stop radius must be > 0"));
            }
        }
        Ok(())
    }
}

pub fn default_dt(basis: &BasisSet) -> f64 {
    1e-3f64.min(0.1 / basis.lambda_max())
}

/// Uniform grid on `[0, horizon]` with step at most `dt`.
pub fn step_grid(horizon: f64, dt: f64) -> (usize, f64) {
    let n = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    (n, horizon / n as f64)
}

/// Per-coordinate exponential factors for one step size.
#[derive(Debug, Clone)]
pub(crate) struct Propagator {
    e: Vec<f64>,
    eh: Vec<f64>,
    phi: Vec<f64>,
}

impl Propagator {
    pub(crate) fn new(rates: &[f64], h: f64) -> Self {
        let e = rates.iter().map(|a| (-a * h).exp()).collect();
        let eh = rates.iter().map(|a| (-0.5 * a * h).exp()).collect();
        let phi = rates
            .iter()
            .map(|a| {
                let z = a * h;
                if z.abs() < 1e-10 {
                    h * (1.0 - 0.5 * z)
                } else {
                    -(-z).exp_m1() / a
                }
            })
            .collect();
        Self { e, eh, phi }
    }

    #[inline]
    fn apply(&self, j: usize, x: f64, drift: f64, noise: f64) -> f64 {
        self.e[j] * x + self.phi[j] * drift + self.eh[j] * noise
    }
}

fn field(basis: &Arc<BasisSet>, c: &[f64]) -> SpectralField {
    SpectralField::from_coords(basis, c).expect("basis-shaped coordinates")
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn radial(v: &[f64], cap: f64, variant: CouplingVariant) -> Vec<f64> {
    match variant {
        CouplingVariant::Linear => v.to_vec(),
        CouplingVariant::Saturated => {
            let n = norm_sq(v).sqrt();
            let f = if n == 0.0 { 1.0 } else { cap * (n / cap).tanh() / n };
            v.iter().map(|a| a * f).collect()
        }
    }
}

/// `-B(x) - beta C(x)` in coordinates.
pub(crate) fn cbf_nonlinear(params: &ModelParams, basis: &Arc<BasisSet>, x: &[f64]) -> Result<Vec<f64>> {
    let u = field(basis, x);
    let mut out = bilinear_b(&u, &u)?.coords();
    for v in out.iter_mut() {
        *v = -*v;
    }
    if params.beta != 0.0 {
        let c = nonlinear_c(&u, params.r)?.coords();
        for (o, ci) in out.iter_mut().zip(c) {
            *o -= params.beta * ci;
        }
    }
    Ok(out)
}

/// Integrals for the energy equality.
struct EnergyTracker {
    budget: EnergyBudget,
    prev: Option<[f64; 4]>,
    mu_beta_r: (f64, f64),
}

impl EnergyTracker {
    fn new(params: &ModelParams, x0: &[f64]) -> Self {
        Self {
            budget: EnergyBudget {
                initial_h_sq: norm_sq(x0),
                ..EnergyBudget::default()
            },
            prev: None,
            mu_beta_r: (params.beta, params.r),
        }
    }

    fn sample(&mut self, basis: &Arc<BasisSet>, x: &[f64], forcing: &[f64], h: f64) {
        let u = field(basis, x);
        let v_sq = u.norm_v_sq();
        let (beta, r) = self.mu_beta_r;
        let lr = if beta != 0.0 { u.lp_norm(r + 1.0).powf(r + 1.0) } else { 0.0 };
        let g = [v_sq, norm_sq(x), lr, dot(forcing, x)];
        self.budget.sup_v_sq = self.budget.sup_v_sq.max(v_sq);
        if let Some(p) = self.prev {
            self.budget.int_v_sq += 0.5 * h * (p[0] + g[0]);
            self.budget.int_h_sq += 0.5 * h * (p[1] + g[1]);
            self.budget.int_lr1_pow += 0.5 * h * (p[2] + g[2]);
            self.budget.int_forcing += 0.5 * h * (p[3] + g[3]);
        }
        self.prev = Some(g);
        self.budget.final_h_sq = g[1];
    }
}

/// Fast-equation machinery shared by the coupled, frozen and auxiliary runs.
///
/// The fast drift on a clock slowed by `time_scale` is
/// `-(1/ts)[mu A y + alpha y + beta C(y) - G(x, y)] + control`, with the
/// linear contraction of `G` folded into the rates for the linear variant.
pub(crate) struct FastCtx {
    basis: Arc<BasisSet>,
    prop: Propagator,
    time_scale: f64,
    variant: CouplingVariant,
    l_g: f64,
    c_g: f64,
    s_cap: f64,
    beta: f64,
    r: f64,
    q2: Vec<f64>,
    sigma2_gain: f64,
}

/// Per-slow-step inputs to the fast equation (slow state frozen).
pub(crate) struct FastDrive {
    g_x: Vec<f64>,
    noise: Vec<f64>,
    ctrl: Option<Vec<f64>>,
}

impl FastCtx {
    pub(crate) fn new(params: &ModelParams, basis: &Arc<BasisSet>, time_scale: f64, h: f64) -> Self {
        let rates: Vec<f64> = params
            .fast_rates(basis)
            .iter()
            .map(|a| a / time_scale)
            .collect();
        Self {
            basis: basis.clone(),
            prop: Propagator::new(&rates, h),
            time_scale,
            variant: params.coupling.variant,
            l_g: params.coupling.l_g,
            c_g: params.coupling.c_g,
            s_cap: params.coupling.s_cap,
            beta: params.beta,
            r: params.r,
            q2: params.noise.q2(basis),
            sigma2_gain: params.coupling.sigma2_gain,
        }
    }

    /// `ctrl_scale` multiplies `sigma2 Q2^(1/2) h` (it is `1/sqrt(delta eps)`
    /// for the controlled system).
    pub(crate) fn drive(
        &self,
        params: &ModelParams,
        x: &[f64],
        control: Option<(&[f64], f64)>,
    ) -> FastDrive {
        let sx = radial(x, self.s_cap, self.variant);
        let g_x = sx.iter().map(|a| self.c_g * a).collect();
        let factor = params.coupling.diffusion_factor(norm_sq(x).sqrt());
        let s2: Vec<f64> = self.q2.iter().map(|q| self.sigma2_gain * q * factor).collect();
        let ts_sqrt = self.time_scale.sqrt();
        let noise = s2.iter().map(|s| s / ts_sqrt).collect();
        let ctrl = control.and_then(|(h, scale)| {
            if h.iter().all(|v| *v == 0.0) {
                None
            } else {
                Some(s2.iter().zip(h).map(|(s, hj)| s * hj * scale).collect())
            }
        });
        FastDrive { g_x, noise, ctrl }
    }

    /// One fast substep with Wiener increment `dw` (variance `h`).
    pub(crate) fn substep(&self, drive: &FastDrive, y: &mut [f64], dw: &[f64]) -> Result<()> {
        let mut forcing = drive.g_x.clone();
        if self.variant == CouplingVariant::Saturated && self.l_g != 0.0 {
            let sy = radial(y, self.s_cap, self.variant);
            for (f, s) in forcing.iter_mut().zip(sy) {
                *f -= self.l_g * s;
            }
        }
        if self.beta != 0.0 {
            let c = nonlinear_c(&field(&self.basis, y), self.r)?.coords();
            for (f, ci) in forcing.iter_mut().zip(c) {
                *f -= self.beta * ci;
            }
        }
        let inv_ts = 1.0 / self.time_scale;
        for j in 0..y.len() {
            let mut drift = forcing[j] * inv_ts;
            if let Some(c) = &drive.ctrl {
                drift += c[j];
            }
            y[j] = self.prop.apply(j, y[j], drift, drive.noise[j] * dw[j]);
        }
        Ok(())
    }
}

/// Stateful stepper for the coupled (optionally controlled) system.
pub struct SlowFastRunner<'a> {
    params: &'a ModelParams,
    basis: Arc<BasisSet>,
    control: Option<&'a Control>,
    slow: Propagator,
    fold: Vec<f64>,
    fast: FastCtx,
    bridge: Bridge,
    advance_fast: bool,
    q1: Vec<f64>,
    active: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    dt: f64,
    n_steps: usize,
    step: usize,
    rng_slow: ChaCha8Rng,
    rng_bridge: ChaCha8Rng,
    dw: Vec<f64>,
    last_forcing: Vec<f64>,
}

impl<'a> SlowFastRunner<'a> {
    pub fn new(
        params: &'a ModelParams,
        x0: &SpectralField,
        y0: &SpectralField,
        control: Option<&'a Control>,
        opts: &SimOptions,
    ) -> Result<Self> {
        params.validate()?;
        opts.validate()?;
        x0.check_compatible(y0)?;
        let basis = x0.basis().clone();
        if let Some(h) = control {
            if h.dim() != basis.dim() {
                return Err(Error::invalid(format!(
                    "control dimension {} does not match basis dimension {}",
                    h.dim(),
                    basis.dim()
                )));
            }
            if (h.horizon() - params.horizon).abs() > 1e-12 * params.horizon {
                return Err(Error::invalid("control horizon differs from the model horizon"));
            }
        }
        let (n_steps, dt) = step_grid(params.horizon, opts.dt);
        let n_sub = ((dt / (opts.c_sub * params.delta)) - 1e-9).ceil().max(1.0) as usize;
        let bridge = Bridge::new(dt, n_sub);
        let slow_rates = params.slow_rates(&basis);
        let plain = coord_rates(&basis, |lam| params.mu * lam + params.alpha);
        let fold = plain.iter().zip(&slow_rates).map(|(p, s)| p - s).collect();
        let fast = FastCtx::new(params, &basis, params.delta, bridge.sub_dt());
        let advance_fast = opts.record_fast || params.coupling.c_f != 0.0;
        let active = params.noise.active_dim(&basis);
        Ok(Self {
            params,
            control,
            slow: Propagator::new(&slow_rates, dt),
            fold,
            fast,
            bridge,
            advance_fast,
            q1: params.noise.q1(&basis),
            active,
            x: x0.coords(),
            y: y0.coords(),
            dt,
            n_steps,
            step: 0,
            rng_slow: stream(params.noise.seed, opts.path_index, Lane::Slow),
            rng_bridge: stream(params.noise.seed, opts.path_index, Lane::Bridge),
            dw: vec![0.0; basis.dim()],
            last_forcing: vec![0.0; basis.dim()],
            basis,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_substeps(&self) -> usize {
        self.bridge.substeps()
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn finished(&self) -> bool {
        self.step >= self.n_steps
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        &self.basis
    }

    /// Forcing `F(x, y) + sigma1(x) Q1^(1/2) h` used by the last step.
    fn forcing_used(&self) -> &[f64] {
        &self.last_forcing
    }

    fn sigma1(&self, x: &[f64]) -> Vec<f64> {
        let c = &self.params.coupling;
        let factor = c.diffusion_factor(norm_sq(x).sqrt());
        self.q1.iter().map(|q| c.sigma1_gain * q * factor).collect()
    }

    /// `F(x, y)` without the part folded into the rates.
    fn coupling_explicit(&self, x: &[f64], fy: &[f64]) -> Vec<f64> {
        let c = &self.params.coupling;
        let mut out = fy.to_vec();
        if c.variant == CouplingVariant::Saturated {
            let sx = radial(x, c.s_cap, c.variant);
            for (o, s) in out.iter_mut().zip(sx) {
                *o += c.c_fx() * s;
            }
        }
        out
    }

    /// `y`-dependent part of `F`, i.e. `c_f S(y)`.
    fn f_of_y(&self, y: &[f64]) -> Vec<f64> {
        let c = &self.params.coupling;
        radial(y, c.s_cap, c.variant)
            .into_iter()
            .map(|v| c.c_f * v)
            .collect()
    }

    /// Total forcing at the current state, for energy bookkeeping.
    fn forcing_now(&self) -> Vec<f64> {
        let fy = self.f_of_y(&self.y);
        let mut f = self.coupling_explicit(&self.x, &fy);
        for (j, fj) in f.iter_mut().enumerate() {
            *fj += self.fold[j] * self.x[j];
        }
        if let Some(h) = self.control {
            let s1 = self.sigma1(&self.x);
            for (j, (fj, hj)) in f.iter_mut().zip(h.at(self.time())).enumerate() {
                *fj += s1[j] * hj;
            }
        }
        f
    }

    /// Advances one slow step.
    pub fn step(&mut self) -> Result<()> {
        let t = self.time();
        let d = self.basis.dim();
        let dt = self.dt;
        fill_increments(&mut self.rng_slow, dt, &mut self.dw[..self.active]);
        let s1 = self.sigma1(&self.x);
        let h_now: Option<Vec<f64>> = self.control.map(|h| h.at(t).to_vec());

        let fy_mean = if self.advance_fast {
            let ctrl_scale = 1.0 / (self.params.delta * self.params.eps).sqrt();
            let drive = self.fast.drive(
                self.params,
                &self.x,
                h_now.as_deref().map(|h| (h, ctrl_scale)),
            );
            let n = self.bridge.substeps();
            let mut rem = self.dw.clone();
            let mut sub = vec![0.0; d];
            let mut acc = vec![0.0; d];
            for k in 0..n {
                for (a, v) in acc.iter_mut().zip(self.f_of_y(&self.y)) {
                    *a += v;
                }
                self.bridge
                    .draw(&mut self.rng_bridge, k, &mut rem[..self.active], &mut sub[..self.active]);
                self.fast.substep(&drive, &mut self.y, &sub)?;
            }
            acc.iter_mut().for_each(|a| *a /= n as f64);
            acc
        } else {
            self.f_of_y(&self.y)
        };

        let mut drift = cbf_nonlinear(self.params, &self.basis, &self.x)?;
        let coupling = self.coupling_explicit(&self.x, &fy_mean);
        for j in 0..d {
            let mut f = coupling[j];
            if let Some(h) = &h_now {
                f += s1[j] * h[j];
            }
            self.last_forcing[j] = f + self.fold[j] * self.x[j];
            drift[j] += f;
        }
        let sqrt_eps = self.params.eps.sqrt();
        for j in 0..d {
            self.x[j] = self.slow.apply(j, self.x[j], drift[j], sqrt_eps * s1[j] * self.dw[j]);
        }
        self.step += 1;
        let nx = norm_sq(&self.x);
        if !nx.is_finite() || nx > BLOWUP_NORM * BLOWUP_NORM || !self.y.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalBlowup {
                step: self.step,
                time: self.time(),
            });
        }
        Ok(())
    }
}

fn push_snapshot(
    traj: &mut Trajectory,
    basis: &Arc<BasisSet>,
    r: f64,
    t: f64,
    x: Option<&[f64]>,
    y: Option<&[f64]>,
) {
    traj.times.push(t);
    match x {
        Some(x) => {
            let f = field(basis, x);
            traj.norms.push(f.norms(r));
            traj.slow.push(f);
            if let Some(y) = y {
                let g = field(basis, y);
                traj.fast_norm_h.push(g.norm_h());
                traj.fast.push(g);
            }
        }
        None => {
            let g = field(basis, y.expect("fast state"));
            traj.norms.push(g.norms(r));
            traj.fast_norm_h.push(g.norm_h());
            traj.fast.push(g);
        }
    }
}

/// One step of the coupled system from `(x, y)` at time zero. Used for
/// diagnostics; full runs go through [`SlowFastRunner`].
pub fn step_slow_fast(
    params: &ModelParams,
    x: &SpectralField,
    y: &SpectralField,
    opts: &SimOptions,
) -> Result<(SpectralField, SpectralField)> {
    let p = ModelParams {
        horizon: opts.dt,
        ..params.clone()
    };
    let o = SimOptions {
        record_fast: true,
        ..opts.clone()
    };
    let mut run = SlowFastRunner::new(&p, x, y, None, &o)?;
    run.step()?;
    Ok((field(x.basis(), run.x()), field(x.basis(), run.y())))
}

pub fn simulate_slow_fast(
    params: &ModelParams,
    x0: &SpectralField,
    y0: &SpectralField,
    opts: &SimOptions,
) -> Result<Trajectory> {
    simulate_controlled(params, x0, y0, None, opts)
}

/// The coupled system with the slow drift gaining `sigma1(X) Q1^(1/2) h`
/// and the fast drift gaining `sigma2 Q2^(1/2) h / sqrt(delta eps)`.
pub fn simulate_controlled(
    params: &ModelParams,
    x0: &SpectralField,
    y0: &SpectralField,
    control: Option<&Control>,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let mut run = SlowFastRunner::new(params, x0, y0, control, opts)?;
    let basis = run.basis().clone();
    let mut traj = Trajectory::new(opts.path_index);
    let rec_y = opts.record_fast;
    push_snapshot(&mut traj, &basis, params.r, 0.0, Some(run.x()), rec_y.then(|| run.y()));
    let mut energy = opts.track_energy.then(|| EnergyTracker::new(params, run.x()));
    while !run.finished() {
        let x_before = energy.as_ref().map(|_| run.x().to_vec());
        run.step()?;
        if let (Some(e), Some(xb)) = (energy.as_mut(), x_before) {
            // forcing of the step just taken, evaluated at its left end
            e.sample(&basis, &xb, run.forcing_used(), run.dt());
        }
        let t = run.time();
        if let Some(rad) = opts.stop_radius {
            if norm_sq(run.x()).sqrt() > rad {
                traj.stopped_at = Some(t);
                break;
            }
        }
        if run.step_index() % opts.record_every == 0 || run.finished() {
            push_snapshot(&mut traj, &basis, params.r, t, Some(run.x()), rec_y.then(|| run.y()));
        }
    }
    if let Some(mut e) = energy {
        let f = run.forcing_now();
        let xn = run.x().to_vec();
        e.sample(&basis, &xn, &f, run.dt());
        traj.energy = Some(e.budget);
    }
    Ok(traj)
}

/// Deterministic slow-only runner: averaged and skeleton equations.
pub(crate) struct DeterministicRunner<'a, D>
where
    D: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    params: &'a ModelParams,
    basis: Arc<BasisSet>,
    prop: Propagator,
    fold: Vec<f64>,
    q1: Vec<f64>,
    drift: D,
    control: Option<&'a Control>,
    pub(crate) x: Vec<f64>,
    pub(crate) dt: f64,
    pub(crate) n_steps: usize,
    pub(crate) step: usize,
}

impl<'a, D> DeterministicRunner<'a, D>
where
    D: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    /// `rates` are the linear decay rates; `drift` returns the explicit
    /// part of the averaged coupling.
    pub(crate) fn new(
        params: &'a ModelParams,
        x0: &SpectralField,
        rates: Vec<f64>,
        drift: D,
        control: Option<&'a Control>,
        dt: f64,
    ) -> Result<Self> {
        params.validate()?;
        let basis = x0.basis().clone();
        if let Some(h) = control {
            if h.dim() != basis.dim() {
                return Err(Error::invalid("control dimension does not match basis"));
            }
        }
        if !(dt > 0.0) {
            return Err(Error::invalid("dt must be > 0"));
        }
        let (n_steps, dt) = step_grid(params.horizon, dt);
        let plain = coord_rates(&basis, |lam| params.mu * lam + params.alpha);
        let fold = plain.iter().zip(&rates).map(|(p, s)| p - s).collect();
        Ok(Self {
            params,
            prop: Propagator::new(&rates, dt),
            fold,
            q1: params.noise.q1(&basis),
            drift,
            control,
            x: x0.coords(),
            dt,
            n_steps,
            step: 0,
            basis,
        })
    }

    fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// Explicit coupling and total forcing at the current state.
    fn forcing(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = self.time();
        let mut explicit = (self.drift)(&self.x)?;
        if let Some(h) = self.control {
            let c = &self.params.coupling;
            let factor = c.diffusion_factor(norm_sq(&self.x).sqrt());
            for (j, (e, hj)) in explicit.iter_mut().zip(h.at(t)).enumerate() {
                *e += c.sigma1_gain * self.q1[j] * factor * hj;
            }
        }
        let total = explicit
            .iter()
            .enumerate()
            .map(|(j, e)| e + self.fold[j] * self.x[j])
            .collect();
        Ok((explicit, total))
    }

    fn step(&mut self) -> Result<Vec<f64>> {
        let (explicit, total) = self.forcing()?;
        let mut nl = cbf_nonlinear(self.params, &self.basis, &self.x)?;
        for (j, n) in nl.iter_mut().enumerate() {
            *n += explicit[j];
            self.x[j] = self.prop.apply(j, self.x[j], *n, 0.0);
        }
        self.step += 1;
        let nx = norm_sq(&self.x);
        if !nx.is_finite() || nx > BLOWUP_NORM * BLOWUP_NORM {
            return Err(Error::NumericalBlowup {
                step: self.step,
                time: self.time(),
            });
        }
        Ok(total)
    }

    pub(crate) fn run(mut self, record_every: usize, track_energy: bool) -> Result<Trajectory> {
        let basis = self.basis.clone();
        let r = self.params.r;
        let mut traj = Trajectory::new(0);
        push_snapshot(&mut traj, &basis, r, 0.0, Some(&self.x), None);
        let mut energy = track_energy.then(|| EnergyTracker::new(self.params, &self.x));
        while self.step < self.n_steps {
            let xb = self.x.clone();
            let total = self.step()?;
            if let Some(e) = energy.as_mut() {
                e.sample(&basis, &xb, &total, self.dt);
            }
            if self.step % record_every.max(1) == 0 || self.step == self.n_steps {
                let t = self.time();
                push_snapshot(&mut traj, &basis, r, t, Some(&self.x), None);
            }
        }
        if let Some(mut e) = energy {
            let (_, total) = self.forcing()?;
            let xn = self.x.clone();
            e.sample(&basis, &xn, &total, self.dt);
            traj.energy = Some(e.budget);
        }
        Ok(traj)
    }
}

/// Fast-only runner on the natural clock with an independent noise lane.
pub(crate) struct FrozenRunner<'a> {
    ctx: FastCtx,
    drive: FastDrive,
    active: usize,
    rng: ChaCha8Rng,
    dw: Vec<f64>,
    pub(crate) y: Vec<f64>,
    pub(crate) dt: f64,
    _params: &'a ModelParams,
}

impl<'a> FrozenRunner<'a> {
    pub(crate) fn new(
        params: &'a ModelParams,
        x: &SpectralField,
        y0: &SpectralField,
        dt: f64,
        path_index: u64,
    ) -> Result<Self> {
        params.validate()?;
        x.check_compatible(y0)?;
        if !(dt > 0.0) {
            return Err(Error::invalid("dt must be > 0"));
        }
        let basis = x.basis().clone();
        let ctx = FastCtx::new(params, &basis, 1.0, dt);
        let xc = x.coords();
        let drive = ctx.drive(params, &xc, None);
        Ok(Self {
            ctx,
            drive,
            active: params.noise.active_dim(&basis),
            rng: stream(params.noise.seed, path_index, Lane::Frozen),
            dw: vec![0.0; basis.dim()],
            y: y0.coords(),
            dt,
            _params: params,
        })
    }

    pub(crate) fn step(&mut self) -> Result<()> {
        let a = self.active;
        fill_increments(&mut self.rng, self.dt, &mut self.dw[..a]);
        self.ctx.substep(&self.drive, &mut self.y, &self.dw)?;
        if !self.y.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalBlowup { step: 0, time: 0.0 });
        }
        Ok(())
    }
}

/// The frozen equation `dY = -[mu A Y + alpha Y + beta C(Y) - G(x, Y)] dt
/// \+ sigma2(x) Q2^(1/2) dW'` with `x` held fixed and `W'` independent of the
/// slow noise.
pub fn simulate_frozen(
    params: &ModelParams,
    x_frozen: &SpectralField,
    y0: &SpectralField,
    horizon: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    opts.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::invalid("horizon must be > 0"));
    }
    let (n, dt) = step_grid(horizon, opts.dt);
    let mut run = FrozenRunner::new(params, x_frozen, y0, dt, opts.path_index)?;
    let basis = x_frozen.basis().clone();
    let mut traj = Trajectory::new(opts.path_index);
    push_snapshot(&mut traj, &basis, params.r, 0.0, None, Some(&run.y));
    for k in 1..=n {
        run.step().map_err(|_| Error::NumericalBlowup {
            step: k,
            time: k as f64 * dt,
        })?;
        if k % opts.record_every == 0 || k == n {
            push_snapshot(&mut traj, &basis, params.r, k as f64 * dt, None, Some(&run.y));
        }
    }
    Ok(traj)
}

/// Khasminskii auxiliary process: the fast equation driven by the slow
/// state frozen at `t(Delta) = floor(t / Delta) Delta`, sharing the Wiener
/// increments of the coupled run with the same seed and path index.
///
/// `x_traj` must hold the slow component at every step of the grid given by
/// `opts.dt` and the model horizon.
pub fn simulate_auxiliary(
    params: &ModelParams,
    x_traj: &Trajectory,
    y0: &SpectralField,
    block: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    opts.validate()?;
    if !(block > 0.0) {
        return Err(Error::invalid("block length Delta must be > 0"));
    }
    params.validate()?;
    let (n_steps, dt) = step_grid(params.horizon, opts.dt);
    if x_traj.slow.len() != n_steps + 1 {
        return Err(Error::invalid(format!(
            "slow trajectory must be recorded at every step ({} snapshots expected, got {})",
            n_steps + 1,
            x_traj.slow.len()
        )));
    }
    let basis = y0.basis().clone();
    x_traj.slow[0].check_compatible(y0)?;
    let n_sub = ((dt / (opts.c_sub * params.delta)) - 1e-9).ceil().max(1.0) as usize;
    let bridge = Bridge::new(dt, n_sub);
    let fast = FastCtx::new(params, &basis, params.delta, bridge.sub_dt());
    let active = params.noise.active_dim(&basis);
    let d = basis.dim();
    let mut rng_slow = stream(params.noise.seed, opts.path_index, Lane::Slow);
    let mut rng_bridge = stream(params.noise.seed, opts.path_index, Lane::Bridge);
    let mut y = y0.coords();
    let mut dw = vec![0.0; d];
    let mut sub = vec![0.0; d];
    let mut traj = Trajectory::new(opts.path_index);
    push_snapshot(&mut traj, &basis, params.r, 0.0, None, Some(&y));
    let mut frozen_idx = usize::MAX;
    let mut drive = None;
    for n in 0..n_steps {
        let t = n as f64 * dt;
        let blk = ((t / block) + 1e-9).floor();
        let idx = (((blk * block) / dt) + 1e-9).floor() as usize;
        if idx != frozen_idx {
            frozen_idx = idx;
            drive = Some(fast.drive(params, &x_traj.slow[idx].coords(), None));
        }
        let drv = drive.as_ref().expect("drive set");
        fill_increments(&mut rng_slow, dt, &mut dw[..active]);
        let mut rem = dw.clone();
        for k in 0..n_sub {
            bridge.draw(&mut rng_bridge, k, &mut rem[..active], &mut sub[..active]);
            fast.substep(drv, &mut y, &sub)?;
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalBlowup {
                step: n + 1,
                time: (n + 1) as f64 * dt,
            });
        }
        let k = n + 1;
        if k % opts.record_every == 0 || k == n_steps {
            push_snapshot(&mut traj, &basis, params.r, k as f64 * dt, None, Some(&y));
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::params::{CouplingSpec, NoiseModel};
    use rand::SeedableRng;

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

    #[test]
    fn zero_state_stays_zero() {
        let b = BasisSet::new(3, 1.5).unwrap();
        let z = SpectralField::zeros(&b);
        let opts = SimOptions::for_basis(&b).with_dt(0.01);
        let tr = simulate_slow_fast(&quiet(), &z, &z, &opts).unwrap();
        assert!(tr.slow.iter().all(|f| f.norm_h() == 0.0));
    }

    #[test]
    fn single_mode_decays_exponentially() {
        let b = BasisSet::new(2, 1.5).unwrap();
        let mut c = vec![0.0; b.dim()];
        c[0] = 0.7;
        let x0 = SpectralField::from_coords(&b, &c).unwrap();
        let p = ModelParams { alpha: 0.3, ..quiet() };
        let opts = SimOptions::for_basis(&b).with_dt(1e-4);
        let tr = simulate_slow_fast(&p, &x0, &SpectralField::zeros(&b), &opts).unwrap();
        let xt = tr.slow.last().unwrap().coords();
        let exact = 0.7 * (-(1.0 + 0.3f64)).exp();
        assert!(((xt[0] - exact) / exact).abs() < 1e-8);
    }

    #[test]
    fn propagator_small_rate_limit() {
        let p = Propagator::new(&[0.0, 1e-14, 2.0], 0.1);
        assert!((p.phi[0] - 0.1).abs() < 1e-15);
        assert!((p.phi[1] - 0.1).abs() < 1e-15);
        assert!((p.phi[2] - (1.0 - (-0.2f64).exp()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn seeds_reproduce_and_differ() {
        let b = BasisSet::new(2, 1.5).unwrap();
        let x0 = SpectralField::random(&b, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3), 0.5, 1.0);
        let p = ModelParams {
            delta: 0.05,
            ..ModelParams::default()
        };
        let opts = SimOptions::for_basis(&b).with_dt(0.01);
        let a = simulate_slow_fast(&p, &x0, &x0, &opts).unwrap();
        let c = simulate_slow_fast(&p, &x0, &x0, &opts).unwrap();
        let d = simulate_slow_fast(&p, &x0, &x0, &opts.clone().with_path(1)).unwrap();
        let na: Vec<f64> = a.norms.iter().map(|n| n.h).collect();
        let nc: Vec<f64> = c.norms.iter().map(|n| n.h).collect();
        let nd: Vec<f64> = d.norms.iter().map(|n| n.h).collect();
        assert_eq!(na, nc);
        assert_ne!(na, nd);
    }
}
