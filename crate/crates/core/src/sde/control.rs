//! Piecewise-constant controls `h in L^2(0, T; H)` with an energy budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A control that is constant on each of `n` uniform knot intervals of
/// `[0, T]`. Values are orthonormal H-coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    horizon: f64,
    values: Vec<Vec<f64>>,
    budget: f64,
}

impl Control {
    pub fn new(horizon: f64, values: Vec<Vec<f64>>, budget: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::invalid("control horizon must be > 0"));
        }
        if values.is_empty() {
            return Err(Error::invalid("control needs at least one knot interval"));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid("control values must share one dimension"));
        }
        if !(budget >= 0.0) {
            return Err(Error::invalid("control budget must be >= 0"));
        }
        let c = Self {
            horizon,
            values,
            budget,
        };
        let e = c.l2_sq();
        if !e.is_finite() || e > budget + 1e-12 * budget.max(1.0) {
            return Err(Error::invalid(format!(
                "control has integral |h|^2 = {e}, above budget {budget}"
            )));
        }
        Ok(c)
    }

    pub fn zero(horizon: f64, n_knots: usize, dim: usize) -> Self {
        Self {
            horizon,
            values: vec![vec![0.0; dim]; n_knots.max(1)],
            budget: 0.0,
        }
    }

    /// Constant control with the budget set to its own energy.
    pub fn constant(horizon: f64, n_knots: usize, value: Vec<f64>) -> Self {
        let values = vec![value; n_knots.max(1)];
        let mut c = Self {
            horizon,
            values,
            budget: 0.0,
        };
        c.budget = c.l2_sq();
        c
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_knots(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn knot_spacing(&self) -> f64 {
        self.horizon / self.values.len() as f64
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// `integral_0^T |h_t|^2 dt`.
    pub fn l2_sq(&self) -> f64 {
        let dt = self.knot_spacing();
        self.values
            .iter()
            .map(|v| v.iter().map(|a| a * a).sum::<f64>())
            .sum::<f64>()
            * dt
    }

    /// `1/2 integral |h|^2`, the control energy.
    pub fn energy(&self) -> f64 {
        0.5 * self.l2_sq()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|a| *a == 0.0))
    }

    /// Value on the knot interval containing `t` (right-continuous).
    pub fn at(&self, t: f64) -> &[f64] {
        let n = self.values.len();
        let i = ((t / self.knot_spacing()) + 1e-9).floor();
        let i = if i < 0.0 { 0 } else { (i as usize).min(n - 1) };
        &self.values[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_boundary() {
        // |h| = 1 on [0, 2] gives integral 2.
        let v = vec![vec![1.0, 0.0]; 4];
        assert!(Control::new(2.0, v.clone(), 2.0).is_ok());
        assert!(Control::new(2.0, v.clone(), 2.0 - 1e-6).is_err());
        let over = vec![vec![(1.0f64 + 1e-6 / 2.0).sqrt(), 0.0]; 4];
        assert!(Control::new(2.0, over, 2.0).is_err());
    }

    #[test]
    fn lookup_and_energy() {
        let c = Control::new(1.0, vec![vec![1.0], vec![2.0]], 10.0).unwrap();
        assert_eq!(c.at(0.0), &[1.0]);
        assert_eq!(c.at(0.49), &[1.0]);
        assert_eq!(c.at(0.5), &[2.0]);
        assert_eq!(c.at(1.0), &[2.0]);
        assert!((c.energy() - 0.5 * 2.5).abs() < 1e-15);
    }
}
