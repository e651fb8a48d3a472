//! Frozen-equation invariant measures, mixing, the averaged drift and the
//! averaged slow equation.

use std::collections::HashMap;
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::{
    coord_rates, simulate_slow_fast, step_grid, Control, DeterministicRunner, FrozenRunner, ModelParams,
    SimOptions, Trajectory,
};
use crate::spectral::SpectralField;
use crate::util::{linear_fit, mean, std_error};

/// Monte Carlo settings for sampling the frozen invariant measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvariantOptions {
    /// Defaults to `5 / zeta`.
    #[serde(default)]
    pub burn_in: Option<f64>,
    pub horizon: f64,
    pub n_paths: usize,
    /// Thinning in steps; defaults to `1 / (10 dt)`.
    #[serde(default)]
    pub stride: Option<usize>,
    pub dt: f64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default)]
    pub keep_samples: bool,
}

fn default_batches() -> usize {
    20
}

impl Default for InvariantOptions {
    fn default() -> Self {
        Self {
            burn_in: None,
            horizon: 50.0,
            n_paths: 8,
            stride: None,
            dt: 0.01,
            batches: 20,
            keep_samples: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InvariantMeasureEstimate {
    pub x_frozen: SpectralField,
    /// Fast states after burn-in (only when `keep_samples` is set).
    pub samples: Vec<SpectralField>,
    pub mean_f: SpectralField,
    /// Batch-means standard error of `mean_f` in the H norm.
    pub stderr: f64,
    pub n_samples: usize,
    /// Per-coordinate mean and variance of the fast state.
    pub y_mean: Vec<f64>,
    pub y_var: Vec<f64>,
    /// Batch means of `|Y|_H^2`.
    pub second_moment_batches: Vec<f64>,
    pub burn_in: f64,
    pub stride: usize,
}

struct PathSamples {
    f: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

/// Ergodic time-and-path average of `F(x, .)` under the frozen dynamics.
pub fn estimate_invariant_measure(
    params: &ModelParams,
    x: &SpectralField,
    y0: Option<&SpectralField>,
    opts: &InvariantOptions,
) -> Result<InvariantMeasureEstimate> {
    let basis = x.basis().clone();
    params.validate()?;
    params.check_fast_dissipation(basis.lambda_1())?;
    if opts.n_paths == 0 {
        return Err(Error::invalid("n_paths must be >= 1"));
    }
    if opts.batches < 20 {
        return Err(Error::invalid("batch means need at least 20 batches"));
    }
    let zeta = params.predicted_zeta(basis.lambda_1());
    let burn_in = opts.burn_in.unwrap_or(5.0 / zeta);
    if !(burn_in >= 0.0) || !(opts.horizon > 0.0) || !(opts.dt > 0.0) {
        return Err(Error::invalid("burn_in, horizon and dt must be positive"));
    }
    let stride = opts
        .stride
        .unwrap_or(((0.1 / opts.dt).round() as usize).max(1))
        .max(1);
    let (n_burn, _) = step_grid(burn_in.max(opts.dt), opts.dt);
    let n_burn = if burn_in == 0.0 { 0 } else { n_burn };
    let n_run = ((opts.horizon / opts.dt) - 1e-9).ceil().max(1.0) as usize;
    let zero = SpectralField::zeros(&basis);
    let y_start = y0.unwrap_or(&zero);
    let xc = x.coords();

    let per_path: Vec<Result<PathSamples>> = (0..opts.n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut run = FrozenRunner::new(params, x, y_start, opts.dt, p)?;
            for _ in 0..n_burn {
                run.step()?;
            }
            let mut out = PathSamples {
                f: Vec::new(),
                y: Vec::new(),
            };
            for k in 1..=n_run {
                run.step()?;
                if k % stride == 0 {
                    out.f.push(params.coupling.eval_f(&xc, &run.y));
                    out.y.push(run.y.clone());
                }
            }
            Ok(out)
        })
        .collect();

    let mut f_all = Vec::new();
    let mut y_all = Vec::new();
    for r in per_path {
        let s = r?;
        f_all.extend(s.f);
        y_all.extend(s.y);
    }
    let n = f_all.len();
    if n < opts.batches {
        return Err(Error::invalid(format!(
            "only {n} samples collected, fewer than {} batches",
            opts.batches
        )));
    }
    let d = basis.dim();
    let mut mean_f = vec![0.0; d];
    let mut y_mean = vec![0.0; d];
    let mut y_sq = vec![0.0; d];
    for (f, y) in f_all.iter().zip(&y_all) {
        for j in 0..d {
            mean_f[j] += f[j];
            y_mean[j] += y[j];
            y_sq[j] += y[j] * y[j];
        }
    }
    let nf = n as f64;
    mean_f.iter_mut().for_each(|v| *v /= nf);
    y_mean.iter_mut().for_each(|v| *v /= nf);
    let y_var: Vec<f64> = y_sq
        .iter()
        .zip(&y_mean)
        .map(|(s, m)| s / nf - m * m)
        .collect();

    // batch means over the path-major sample sequence
    let b = opts.batches;
    let per = n / b;
    let mut batch_f = vec![vec![0.0; d]; b];
    let mut second = vec![0.0; b];
    for (i, bf) in batch_f.iter_mut().enumerate() {
        let range = i * per..(i + 1) * per;
        for k in range {
            for j in 0..d {
                bf[j] += f_all[k][j];
            }
            second[i] += y_all[k].iter().map(|v| v * v).sum::<f64>();
        }
        bf.iter_mut().for_each(|v| *v /= per as f64);
        second[i] /= per as f64;
    }
    let mut var_sum = 0.0;
    for j in 0..d {
        let col: Vec<f64> = batch_f.iter().map(|bf| bf[j]).collect();
        let se = std_error(&col);
        var_sum += se * se;
    }
    let samples = if opts.keep_samples {
        y_all
            .iter()
            .map(|y| SpectralField::from_coords(&basis, y))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(InvariantMeasureEstimate {
        x_frozen: x.clone(),
        samples,
        mean_f: SpectralField::from_coords(&basis, &mean_f)?,
        stderr: var_sum.sqrt(),
        n_samples: n,
        y_mean,
        y_var,
        second_moment_batches: second,
        burn_in,
        stride,
    })
}

/// Closed-form frozen mean of `F(x, .)` for the linear variant with
/// `beta = 0`: the fast state has mean `c_g x_k / (mu lambda_k + alpha + l_g)`.
pub fn closed_form_drift(params: &ModelParams, x: &SpectralField) -> Result<SpectralField> {
    let basis = x.basis();
    let avg = params.averaged_rates(basis)?;
    let plain = coord_rates(basis, |lam| params.mu * lam + params.alpha);
    let c = x.coords();
    let out: Vec<f64> = (0..c.len()).map(|j| (plain[j] - avg[j]) * c[j]).collect();
    SpectralField::from_coords(basis, &out)
}

/// Lattice key to (drift, standard error).
type CellMap = HashMap<Vec<i64>, (Vec<f64>, f64)>;

/// Read-mostly cache of Monte Carlo drift estimates keyed by a quantized
/// slow state. Estimates are taken at the lattice point itself, so a
/// cached value depends only on its key.
pub struct DriftCache {
    step: f64,
    map: RwLock<CellMap>,
}

impl DriftCache {
    /// `resolution` is relative to `scale` (typically `max(1, |x0|_H)`).
    pub fn new(resolution: f64, scale: f64) -> Result<Self> {
        if !(resolution > 0.0 && scale > 0.0) {
            return Err(Error::invalid("cache resolution and scale must be > 0"));
        }
        Ok(Self {
            step: resolution * scale,
            map: RwLock::new(HashMap::new()),
        })
    }

    pub fn len(&self) -> usize {
        self.map.read().map(|m| m.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(&self, x: &[f64]) -> Vec<i64> {
        x.iter().map(|v| (v / self.step).round() as i64).collect()
    }

    fn center(&self, key: &[i64]) -> Vec<f64> {
        key.iter().map(|k| *k as f64 * self.step).collect()
    }
}

/// `F_bar(x)` with its standard error, by Monte Carlo or from the cache.
pub fn averaged_drift(
    params: &ModelParams,
    x: &SpectralField,
    opts: &InvariantOptions,
    cache: Option<&DriftCache>,
) -> Result<(SpectralField, f64)> {
    let Some(cache) = cache else {
        let est = estimate_invariant_measure(params, x, None, opts)?;
        return Ok((est.mean_f, est.stderr));
    };
    let key = cache.key(&x.coords());
    if let Some((v, se)) = cache.map.read().ok().and_then(|m| m.get(&key).cloned()) {
        return Ok((SpectralField::from_coords(x.basis(), &v)?, se));
    }
    let xq = SpectralField::from_coords(x.basis(), &cache.center(&key))?;
    let est = estimate_invariant_measure(params, &xq, None, opts)?;
    let v = est.mean_f.coords();
    if let Ok(mut m) = cache.map.write() {
        m.insert(key, (v, est.stderr));
    }
    Ok((est.mean_f, est.stderr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DriftMode {
    #[default]
    ClosedForm,
    MonteCarlo {
        #[serde(default)]
        invariant: InvariantOptions,
        #[serde(default = "default_resolution")]
        cache_resolution: f64,
    },
}

fn default_resolution() -> f64 {
    1e-2
}

/// Diagnostics of a Monte Carlo averaged solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DriftStats {
    pub max_stderr: f64,
    pub cache_entries: usize,
}

/// Averaged slow equation, optionally with the control term
/// `sigma1(X) Q1^(1/2) h`.
pub(crate) fn solve_averaged_controlled(
    params: &ModelParams,
    x0: &SpectralField,
    control: Option<&Control>,
    dt: f64,
    mode: &DriftMode,
    record_every: usize,
    track_energy: bool,
) -> Result<(Trajectory, DriftStats)> {
    let basis = x0.basis().clone();
    match mode {
        DriftMode::ClosedForm => {
            let rates = params.averaged_rates(&basis)?;
            let d = basis.dim();
            let run = DeterministicRunner::new(
                params,
                x0,
                rates,
                |_x: &[f64]| Ok(vec![0.0; d]),
                control,
                dt,
            )?;
            Ok((run.run(record_every, track_energy)?, DriftStats::default()))
        }
        DriftMode::MonteCarlo {
            invariant,
            cache_resolution,
        } => {
            params.check_fast_dissipation(basis.lambda_1())?;
            let cache = DriftCache::new(*cache_resolution, x0.norm_h().max(1.0))?;
            let rates = coord_rates(&basis, |lam| params.mu * lam + params.alpha);
            let mut max_se = 0.0f64;
            let b2 = basis.clone();
            let run = DeterministicRunner::new(
                params,
                x0,
                rates,
                |x: &[f64]| {
                    let xf = SpectralField::from_coords(&b2, x)?;
                    let (f, se) = averaged_drift(params, &xf, invariant, Some(&cache))?;
                    max_se = max_se.max(se);
                    Ok(f.coords())
                },
                control,
                dt,
            )?;
            let traj = run.run(record_every, track_energy)?;
            Ok((
                traj,
                DriftStats {
                    max_stderr: max_se,
                    cache_entries: cache.len(),
                },
            ))
        }
    }
}

/// Deterministic averaged equation
/// `dX = -[mu A X + B(X) + alpha X + beta C(X)] dt + F_bar(X) dt`.
pub fn solve_averaged(
    params: &ModelParams,
    x0: &SpectralField,
    dt: f64,
    mode: &DriftMode,
) -> Result<Trajectory> {
    Ok(solve_averaged_controlled(params, x0, None, dt, mode, 1, false)?.0)
}

/// As [`solve_averaged`], also returning drift statistics and, when
/// requested, the energy integrals.
pub fn solve_averaged_with_stats(
    params: &ModelParams,
    x0: &SpectralField,
    dt: f64,
    mode: &DriftMode,
    track_energy: bool,
) -> Result<(Trajectory, DriftStats)> {
    solve_averaged_controlled(params, x0, None, dt, mode, 1, track_energy)
}

#[derive(Debug, Clone, Serialize)]
pub struct MixingReport {
    pub times: Vec<f64>,
    pub msd: Vec<f64>,
    /// `None` when the curve has fewer than two informative points.
    pub fitted_rate: Option<f64>,
    pub predicted_zeta: f64,
    /// Decay rate of the linear contraction, `2 (mu lambda_1 + alpha + l_g)`.
    pub linear_rate: f64,
    pub window_end: f64,
}

/// Synchronous coupling of two frozen runs from `y1` and `y2`.
pub fn mixing_experiment(
    params: &ModelParams,
    x: &SpectralField,
    y1: &SpectralField,
    y2: &SpectralField,
    horizon: f64,
    n_paths: usize,
    dt: f64,
) -> Result<MixingReport> {
    let basis = x.basis().clone();
    params.validate()?;
    params.check_fast_dissipation(basis.lambda_1())?;
    if n_paths == 0 {
        return Err(Error::invalid("n_paths must be >= 1"));
    }
    let (n, dt) = step_grid(horizon, dt);
    let curves: Vec<Result<Vec<f64>>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut a = FrozenRunner::new(params, x, y1, dt, p)?;
            let mut b = FrozenRunner::new(params, x, y2, dt, p)?;
            let mut out = Vec::with_capacity(n + 1);
            let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            out.push(diff(&a.y, &b.y));
            for _ in 0..n {
                a.step()?;
                b.step()?;
                out.push(diff(&a.y, &b.y));
            }
            Ok(out)
        })
        .collect();
    let mut msd = vec![0.0; n + 1];
    for c in curves {
        for (m, v) in msd.iter_mut().zip(c?) {
            *m += v;
        }
    }
    msd.iter_mut().for_each(|m| *m /= n_paths as f64);
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
    let floor = 1e-8 * msd[0];
    let mut tx = Vec::new();
    let mut ly = Vec::new();
    for (t, m) in times.iter().zip(&msd) {
        if *m > 0.0 && *m >= floor {
            tx.push(*t);
            ly.push(m.ln());
        } else {
            break;
        }
    }
    let fitted_rate = linear_fit(&tx, &ly).map(|(_, s)| -s);
    let lam1 = basis.lambda_1();
    Ok(MixingReport {
        window_end: tx.last().copied().unwrap_or(0.0),
        times,
        msd,
        fitted_rate,
        predicted_zeta: params.predicted_zeta(lam1),
        linear_rate: 2.0 * (params.mu * lam1 + params.alpha + params.coupling.l_g),
    })
}

/// `sup_t E |Y^{x1, y}_t - Y^{x2, y}_t|^2 / |x1 - x2|^2` under common noise.
pub fn frozen_sensitivity(
    params: &ModelParams,
    x1: &SpectralField,
    x2: &SpectralField,
    y: &SpectralField,
    horizon: f64,
    n_paths: usize,
    dt: f64,
) -> Result<f64> {
    let dx = (x1 - x2).norm_h_sq();
    if dx == 0.0 {
        return Err(Error::invalid("x1 and x2 must differ"));
    }
    let (n, dt) = step_grid(horizon, dt);
    let curves: Vec<Result<Vec<f64>>> = (0..n_paths.max(1) as u64)
        .into_par_iter()
        .map(|p| {
            let mut a = FrozenRunner::new(params, x1, y, dt, p)?;
            let mut b = FrozenRunner::new(params, x2, y, dt, p)?;
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                a.step()?;
                b.step()?;
                out.push(a.y.iter().zip(&b.y).map(|(u, v)| (u - v) * (u - v)).sum());
            }
            Ok(out)
        })
        .collect();
    let mut acc = vec![0.0; n];
    for c in curves {
        for (m, v) in acc.iter_mut().zip(c?) {
            *m += v;
        }
    }
    let sup = acc.iter().fold(0.0f64, |a, v| a.max(*v)) / n_paths.max(1) as f64;
    Ok(sup / dx)
}

/// `delta = factor * eps^power`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaRule {
    pub power: f64,
    #[serde(default = "unit")]
    pub factor: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for DeltaRule {
    fn default() -> Self {
        Self {
            power: 2.0,
            factor: 1.0,
        }
    }
}

impl DeltaRule {
    pub fn delta(&self, eps: f64) -> f64 {
        self.factor * eps.powf(self.power)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AveragingRow {
    pub eps: f64,
    pub delta: f64,
    /// `E sup_t |X - X_bar|^2`.
    pub err: f64,
    pub stderr: f64,
    /// `E sup_t |X - X_bar|^4`.
    pub err_p2: f64,
    pub stderr_p2: f64,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AveragingTable {
    pub rows: Vec<AveragingRow>,
    pub strictly_decreasing: bool,
    /// Decreasing up to `2 stderr` slack between neighbours.
    pub decreasing_within_slack: bool,
    pub decreasing_p2: bool,
    /// `err(first) / err(last)`.
    pub total_reduction: f64,
}

fn trend(vals: &[(f64, f64)]) -> (bool, bool) {
    let strict = vals.windows(2).all(|w| w[1].0 < w[0].0);
    let slack = vals
        .windows(2)
        .all(|w| w[1].0 <= w[0].0 + 2.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt());
    (strict, slack)
}

/// Monte Carlo sweep of `E sup_t |X^{eps, delta}_t - X_bar_t|^{2p}` over
/// `eps_grid` with `delta = rule(eps)`. Paths that blow up are excluded and
/// counted.
#[allow(clippy::too_many_arguments)]
pub fn averaging_error_experiment(
    params: &ModelParams,
    x0: &SpectralField,
    y0: &SpectralField,
    eps_grid: &[f64],
    rule: &DeltaRule,
    n_paths: usize,
    opts: &SimOptions,
    mode: &DriftMode,
) -> Result<AveragingTable> {
    if eps_grid.is_empty() || n_paths == 0 {
        return Err(Error::invalid("need a non-empty eps grid and n_paths >= 1"));
    }
    let reference = solve_averaged(params, x0, opts.dt, mode)?;
    let opts = SimOptions {
        record_every: 1,
        record_fast: false,
        ..opts.clone()
    };
    let mut rows = Vec::new();
    for &eps in eps_grid {
        let delta = rule.delta(eps);
        let p = params.with_scales(eps, delta);
        p.validate()?;
        let res: Vec<Result<Option<f64>>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|k| {
                let o = opts.clone().with_path(k);
                match simulate_slow_fast(&p, x0, y0, &o) {
                    Ok(tr) => Ok(Some(tr.sup_distance(&reference)?.powi(2))),
                    Err(Error::NumericalBlowup { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect();
        let mut sq = Vec::new();
        let mut excluded = 0;
        for r in res {
            match r? {
                Some(v) => sq.push(v),
                None => excluded += 1,
            }
        }
        let quart: Vec<f64> = sq.iter().map(|v| v * v).collect();
        rows.push(AveragingRow {
            eps,
            delta,
            err: mean(&sq),
            stderr: std_error(&sq),
            err_p2: mean(&quart),
            stderr_p2: std_error(&quart),
            n_excluded: excluded,
        });
    }
    let (strict, slack) = trend(&rows.iter().map(|r| (r.err, r.stderr)).collect::<Vec<_>>());
    let (strict2, _) = trend(&rows.iter().map(|r| (r.err_p2, r.stderr_p2)).collect::<Vec<_>>());
    let total_reduction = rows[0].err / rows[rows.len() - 1].err;
    Ok(AveragingTable {
        rows,
        strictly_decreasing: strict,
        decreasing_within_slack: slack,
        decreasing_p2: strict2,
        total_reduction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{CouplingSpec, NoiseModel};
    use crate::spectral::BasisSet;

    fn ou_params(c_g: f64) -> ModelParams {
        ModelParams {
            coupling: CouplingSpec {
                c_f: 1.0,
                c_fx: Some(0.0),
                c_g,
                l_g: 0.25,
                noise_state_gain: 0.0,
                ..CouplingSpec::default()
            },
            noise: NoiseModel {
                q2_amp: 0.5,
                ..NoiseModel::default()
            },
            ..ModelParams::default()
        }
    }

    #[test]
    fn ou_mean_matches_stationary_oracle() {
        let b = BasisSet::new(1, 1.5).unwrap();
        let x = SpectralField::from_coords(&b, &[1.0, -0.5, 0.3, 0.0]).unwrap();
        let p = ou_params(0.8);
        let est = estimate_invariant_measure(
            &p,
            &x,
            None,
            &InvariantOptions {
                horizon: 200.0,
                n_paths: 4,
                dt: 0.01,
                ..InvariantOptions::default()
            },
        )
        .unwrap();
        // stationary mean of dY = -(1 + 0.25) Y + 0.8 x + noise
        let oracle: Vec<f64> = x.coords().iter().map(|v| 0.8 * v / 1.25).collect();
        let diff = (&est.mean_f - &SpectralField::from_coords(&b, &oracle).unwrap()).norm_h();
        assert!(diff <= 3.0 * est.stderr, "{diff} vs {}", est.stderr);
        let cf = closed_form_drift(&p, &x).unwrap();
        assert!(cf.max_rel_diff(&SpectralField::from_coords(&b, &oracle).unwrap()) < 1e-14);
    }

    #[test]
    fn deterministic_fixed_point_without_noise() {
        let b = BasisSet::new(1, 1.5).unwrap();
        let x = SpectralField::from_coords(&b, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let mut p = ou_params(1.0);
        p.noise.q2_amp = 0.0;
        let est = estimate_invariant_measure(
            &p,
            &x,
            None,
            &InvariantOptions {
                burn_in: Some(40.0),
                horizon: 5.0,
                n_paths: 1,
                dt: 0.01,
                keep_samples: true,
                ..InvariantOptions::default()
            },
        )
        .unwrap();
        for s in &est.samples {
            assert!((s.coords()[0] - 0.8).abs() < 1e-10);
        }
        assert!(est.stderr < 1e-12);
    }

    #[test]
    fn mixing_identical_starts_give_zero() {
        let b = BasisSet::new(1, 1.5).unwrap();
        let z = SpectralField::zeros(&b);
        let y = SpectralField::from_coords(&b, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let rep = mixing_experiment(&ou_params(0.0), &z, &y, &y, 1.0, 2, 0.01).unwrap();
        assert!(rep.msd.iter().all(|m| *m == 0.0));
        assert!(rep.fitted_rate.is_none());
    }

    #[test]
    fn assumption_gate_rejects_weak_dissipation() {
        let b = BasisSet::new(1, 1.5).unwrap();
        let z = SpectralField::zeros(&b);
        let mut p = ou_params(0.0);
        p.coupling.l_g = 1.0;
        assert!(matches!(
            estimate_invariant_measure(&p, &z, None, &InvariantOptions::default()),
            Err(Error::AssumptionViolation(_))
        ));
    }

    #[test]
    fn cache_reuses_lattice_point() {
        let b = BasisSet::new(1, 1.5).unwrap();
        let p = ou_params(0.5);
        let cache = DriftCache::new(1e-2, 1.0).unwrap();
        let opts = InvariantOptions {
            horizon: 2.0,
            n_paths: 1,
            ..InvariantOptions::default()
        };
        let x1 = SpectralField::from_coords(&b, &[0.5, 0.0, 0.0, 0.0]).unwrap();
        let x2 = SpectralField::from_coords(&b, &[0.501, 0.0, 0.0, 0.0]).unwrap();
        let (a, _) = averaged_drift(&p, &x1, &opts, Some(&cache)).unwrap();
        let (c, _) = averaged_drift(&p, &x2, &opts, Some(&cache)).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(a.psi(), c.psi());
    }
}
