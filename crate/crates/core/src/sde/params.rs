//! Model constants, coupling maps and noise covariance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::OperatorParams;
use crate::spectral::BasisSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CouplingVariant {
    #[default]
    Linear,
    Saturated,
}

/// Concrete Lipschitz coupling maps.
///
/// Linear variant:
/// `F(x, y) = c_f y + c_fx x`, `G(x, y) = c_g x - l_g y`.
/// Saturated variant: the same with `x` and `y` passed through the radial
/// map `v -> s_cap tanh(|v| / s_cap) v / |v|`, which is 1-Lipschitz.
///
/// Diffusions act diagonally on orthonormal coordinates:
/// `sigma1(x) Q1^(1/2) w` has coordinate `sigma1_gain q1_k (1 + kappa sat(|x|)) w_k`
/// and `sigma2` the same with `q2`, independent of `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSpec {
    #[serde(default)]
    pub variant: CouplingVariant,
    /// Gain of `y` in `F`.
    pub c_f: f64,
    /// Gain of `x` in `F`. Defaults to `c_f`.
    #[serde(default)]
    pub c_fx: Option<f64>,
    pub c_g: f64,
    /// Contraction of `y` in `G`, which is also its Lipschitz constant.
    pub l_g: f64,
    #[serde(default = "one")]
    pub sigma1_gain: f64,
    #[serde(default = "one")]
    pub sigma2_gain: f64,
    /// Weight of the state-dependent factor `sat(|x|)` in both diffusions.
    #[serde(default = "one")]
    pub noise_state_gain: f64,
    #[serde(default = "default_cap")]
    pub s_cap: f64,
}

fn one() -> f64 {
    1.0
}

fn default_cap() -> f64 {
    10.0
}

impl Default for CouplingSpec {
    fn default() -> Self {
        Self {
            variant: CouplingVariant::Linear,
            c_f: 0.5,
            c_fx: None,
            c_g: 0.5,
            l_g: 0.0,
            sigma1_gain: 1.0,
            sigma2_gain: 1.0,
            noise_state_gain: 1.0,
            s_cap: 10.0,
        }
    }
}

impl CouplingSpec {
    pub fn c_fx(&self) -> f64 {
        self.c_fx.unwrap_or(self.c_f)
    }

    /// Lipschitz constant of `G` in `y`.
    pub fn lip_g(&self) -> f64 {
        self.l_g.abs()
    }

    /// Lipschitz constant of `sigma2` in `y`; zero by construction.
    pub fn lip_sigma2(&self) -> f64 {
        0.0
    }

    /// Lipschitz constant of `F` in `(x, y)`.
    pub fn lip_f(&self) -> f64 {
        self.c_f.abs() + self.c_fx().abs()
    }

    pub fn sat(&self, s: f64) -> f64 {
        s / (1.0 + s / self.s_cap)
    }

    /// Common diffusion factor `1 + kappa sat(|x|_H)`.
    pub fn diffusion_factor(&self, x_norm: f64) -> f64 {
        1.0 + self.noise_state_gain * self.sat(x_norm)
    }

    /// Radial saturation applied in the saturated variant.
    fn squash_factor(&self, norm: f64) -> f64 {
        if norm == 0.0 {
            1.0
        } else {
            self.s_cap * (norm / self.s_cap).tanh() / norm
        }
    }

    fn shaped(&self, v: &[f64]) -> (Vec<f64>, f64) {
        match self.variant {
            CouplingVariant::Linear => (v.to_vec(), 1.0),
            CouplingVariant::Saturated => {
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                let f = self.squash_factor(n);
                (v.iter().map(|a| a * f).collect(), f)
            }
        }
    }

    /// `F(x, y)` in orthonormal coordinates.
    pub fn eval_f(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let (sx, _) = self.shaped(x);
        let (sy, _) = self.shaped(y);
        let cfx = self.c_fx();
        sx.iter().zip(&sy).map(|(a, b)| self.c_f * b + cfx * a).collect()
    }

    /// `G(x, y)` in orthonormal coordinates.
    pub fn eval_g(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let (sx, _) = self.shaped(x);
        let (sy, _) = self.shaped(y);
        sx.iter().zip(&sy).map(|(a, b)| self.c_g * a - self.l_g * b).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.c_f,
            self.c_fx(),
            self.c_g,
            self.l_g,
            self.sigma1_gain,
            self.sigma2_gain,
            self.noise_state_gain,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coupling constants must be finite"));
        }
        if self.noise_state_gain < 0.0 {
            return Err(Error::invalid("noise_state_gain must be >= 0"));
        }
        if !(self.s_cap > 0.0) {
            return Err(Error::invalid("s_cap must be > 0"));
        }
        Ok(())
    }
}

/// Trace-class covariances `q_k = q0 |k|^-s` for the two noise channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub q1_amp: f64,
    pub q1_slope: f64,
    pub q2_amp: f64,
    pub q2_slope: f64,
    /// Restrict both channels to the lowest `K` modes.
    #[serde(default)]
    pub active_modes: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            q1_amp: 0.5,
            q1_slope: 2.5,
            q2_amp: 0.5,
            q2_slope: 2.5,
            active_modes: None,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("q1_slope", self.q1_slope), ("q2_slope", self.q2_slope)] {
            if !(s > 2.0) {
                return Err(Error::invalid(format!(
                    "{name} must be > 2 for trace-class noise in 2D, got {s}"
                )));
            }
        }
        if !(self.q1_amp >= 0.0 && self.q2_amp >= 0.0) {
            return Err(Error::invalid("noise amplitudes must be >= 0"));
        }
        if self.active_modes == Some(0) {
            return Err(Error::invalid("active_modes must be >= 1"));
        }
        Ok(())
    }

    fn eigen(&self, basis: &BasisSet, amp: f64, slope: f64) -> Vec<f64> {
        let k_active = self.active_modes.unwrap_or(usize::MAX);
        let mut out = Vec::with_capacity(basis.dim());
        for (i, lam) in basis.eigenvalues().iter().enumerate() {
            let q = if i < k_active { amp * lam.powf(-slope / 2.0) } else { 0.0 };
            out.push(q);
            out.push(q);
        }
        out
    }

    /// `q1` per orthonormal coordinate.
    pub fn q1(&self, basis: &BasisSet) -> Vec<f64> {
        self.eigen(basis, self.q1_amp, self.q1_slope)
    }

    /// `q2` per orthonormal coordinate.
    pub fn q2(&self, basis: &BasisSet) -> Vec<f64> {
        self.eigen(basis, self.q2_amp, self.q2_slope)
    }

    /// Number of coordinates carrying noise in either channel.
    pub fn active_dim(&self, basis: &BasisSet) -> usize {
        match self.active_modes {
            Some(k) => 2 * k.min(basis.len()),
            None => basis.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub mu: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_r")]
    pub r: f64,
    pub eps: f64,
    pub delta: f64,
    pub horizon: f64,
    #[serde(default)]
    pub coupling: CouplingSpec,
    #[serde(default)]
    pub noise: NoiseModel,
}

fn default_r() -> f64 {
    3.0
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            mu: 1.0,
            alpha: 0.0,
            beta: 0.0,
            r: 3.0,
            eps: 0.1,
            delta: 0.01,
            horizon: 1.0,
            coupling: CouplingSpec::default(),
            noise: NoiseModel::default(),
        }
    }
}

impl ModelParams {
    pub fn operator(&self) -> OperatorParams {
        OperatorParams {
            mu: self.mu,
            beta: self.beta,
            r: self.r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        OperatorParams::new(self.mu, self.beta, self.r)?;
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid("alpha must be >= 0"));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::invalid(format!("eps must lie in (0, 1], got {}", self.eps)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::invalid(format!(
                "delta must lie in (0, 1], got {}",
                self.delta
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon must be > 0"));
        }
        self.coupling.validate()?;
        self.noise.validate()
    }

    /// `mu lambda_1 + 2 alpha - 2 L_G - 2 L_sigma2^2`, required positive
    /// before the fast equation is used.
    pub fn fast_dissipation_margin(&self, lambda_1: f64) -> f64 {
        let c = &self.coupling;
        self.mu * lambda_1 + 2.0 * self.alpha - 2.0 * c.lip_g() - 2.0 * c.lip_sigma2().powi(2)
    }

    pub fn check_fast_dissipation(&self, lambda_1: f64) -> Result<()> {
        let m = self.fast_dissipation_margin(lambda_1);
        if m > 0.0 {
            Ok(())
        } else {
            Err(Error::AssumptionViolation(format!(
                "mu lambda_1 + 2 alpha - 2 L_G - 2 L_sigma2^2 = {m} must be > 0"
            )))
        }
    }

    /// Predicted mixing exponent `2 mu lambda_1 + 2 alpha - 2 L_G - L_sigma2^2`.
    pub fn predicted_zeta(&self, lambda_1: f64) -> f64 {
        let c = &self.coupling;
        2.0 * self.mu * lambda_1 + 2.0 * self.alpha - 2.0 * c.lip_g() - c.lip_sigma2().powi(2)
    }

    /// Time-scale separation gate: `delta / eps <= cap`.
    pub fn check_scale_separation(&self, cap: f64) -> Result<()> {
        let ratio = self.delta / self.eps;
        if ratio <= cap {
            Ok(())
        } else {
            Err(Error::AssumptionViolation(format!(
                "delta / eps = {ratio} exceeds the configured cap {cap}"
            )))
        }
    }

    /// Same model with a different `(eps, delta)` pair.
    pub fn with_scales(&self, eps: f64, delta: f64) -> Self {
        Self {
            eps,
            delta,
            ..self.clone()
        }
    }

    /// Whether the linear part of the coupling can be folded into the
    /// exponential propagators.
    pub fn is_linear(&self) -> bool {
        self.coupling.variant == CouplingVariant::Linear
    }

    /// Per-coordinate decay rate of the slow linear part.
    pub fn slow_rates(&self, basis: &BasisSet) -> Vec<f64> {
        let shift = if self.is_linear() { self.coupling.c_fx() } else { 0.0 };
        coord_rates(basis, |lam| self.mu * lam + self.alpha - shift)
    }

    /// Per-coordinate decay rate of the fast linear part on the natural clock.
    pub fn fast_rates(&self, basis: &BasisSet) -> Vec<f64> {
        let shift = if self.is_linear() { self.coupling.l_g } else { 0.0 };
        coord_rates(basis, |lam| self.mu * lam + self.alpha + shift)
    }

    /// Decay rates of the averaged slow equation when `beta = 0` and the
    /// coupling is linear, so that the frozen mean is `c_g x / (fast rate)`.
    pub fn averaged_rates(&self, basis: &BasisSet) -> Result<Vec<f64>> {
        if !self.is_linear() {
            return Err(Error::UnsupportedRegime(
                "closed-form averaged drift needs the linear coupling".into(),
            ));
        }
        if self.beta != 0.0 {
            return Err(Error::UnsupportedRegime(
                "closed-form averaged drift needs beta = 0".into(),
            ));
        }
        let c = &self.coupling;
        Ok(coord_rates(basis, |lam| {
            let fast = self.mu * lam + self.alpha + c.l_g;
            self.mu * lam + self.alpha - c.c_fx() - c.c_f * c.c_g / fast
        }))
    }
}

pub(crate) fn coord_rates(basis: &BasisSet, f: impl Fn(f64) -> f64) -> Vec<f64> {
    basis
        .eigenvalues()
        .iter()
        .flat_map(|&lam| {
            let a = f(lam);
            [a, a]
        })
        .collect()
}
