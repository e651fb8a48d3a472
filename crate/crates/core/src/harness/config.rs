//! Experiment configuration: TOML schema, dotted overrides, load-time
//! assumption gates and the config hash.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::averaging::{DeltaRule, DriftMode, InvariantOptions};
use crate::error::{Error, Result};
use crate::ldp::RateOptions;
use crate::sde::{default_dt, Control, ModelParams, SimOptions};
use crate::spectral::{BasisSet, SpectralField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub n: usize,
    pub dealias: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { n: 4, dealias: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    /// Slow step; `min(1e-3, 0.1 / lambda_N)` when unset.
    pub dt: Option<f64>,
    pub c_sub: f64,
    pub record_every: usize,
    /// Paths whose slow norm exceeds this radius are stopped.
    pub stop_radius: Option<f64>,
    pub track_energy: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            dt: None,
            c_sub: 0.1,
            record_every: 1,
            stop_radius: None,
            track_energy: false,
        }
    }
}

/// Initial data: explicit H-coordinates, or random fields with spectral
/// decay `|k|^-slope`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub slow_amplitude: f64,
    pub fast_amplitude: f64,
    pub slope: f64,
    pub seed: u64,
    pub slow_coords: Option<Vec<f64>>,
    pub fast_coords: Option<Vec<f64>>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            slow_amplitude: 1.0,
            fast_amplitude: 0.0,
            slope: 2.0,
            seed: 1,
            slow_coords: None,
            fast_coords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n_paths: usize,
    /// Master noise seed; replaces `model.noise.seed`.
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            n_paths: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub eps: Vec<f64>,
    pub delta_rule: DeltaRule,
    /// Khasminskii block lengths.
    pub blocks: Vec<f64>,
    /// Largest admitted `delta / eps`.
    pub max_ratio: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.1, 0.01, 0.001],
            delta_rule: DeltaRule::default(),
            blocks: Vec::new(),
            max_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrozenConfig {
    pub invariant: InvariantOptions,
    pub mixing_horizon: f64,
    pub mixing_paths: usize,
}

impl Default for FrozenConfig {
    fn default() -> Self {
        Self {
            invariant: InvariantOptions::default(),
            mixing_horizon: 2.0,
            mixing_paths: 200,
        }
    }
}

/// Piecewise-constant control with `amplitude` on the first
/// `coords` H-coordinates at every knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub n_knots: usize,
    pub amplitude: f64,
    pub coords: usize,
    /// Budget `M`; the control's own energy when unset.
    pub budget: Option<f64>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            n_knots: 16,
            amplitude: 0.0,
            coords: 2,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EventKindConfig {
    #[default]
    TerminalBall,
    SupExceedance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventConfig {
    pub kind: EventKindConfig,
    pub radius: f64,
    /// Ball center in H-coordinates, zero-padded to the basis dimension.
    pub center: Vec<f64>,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            kind: EventKindConfig::TerminalBall,
            radius: 0.1,
            center: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub n: usize,
    pub r_values: Vec<f64>,
    pub pairs: usize,
    pub mu: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n: 6,
            r_values: vec![1.0, 2.0, 3.0, 5.0],
            pairs: 200,
            mu: 1.0,
            beta: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            svg: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    pub basis: BasisConfig,
    pub scheme: SchemeConfig,
    pub initial: InitialConfig,
    pub monte_carlo: MonteCarloConfig,
    pub sweep: SweepConfig,
    pub frozen: FrozenConfig,
    pub drift: DriftMode,
    pub control: ControlConfig,
    pub event: EventConfig,
    pub rate: RateOptions,
    pub verify: VerifyConfig,
    pub output: OutputConfig,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Applies `key.path=value` to a TOML table, creating missing tables.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("bad override key `{key}`")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Self::with_overrides(s, &[])
    }

    /// Parses `s`, applies dotted overrides, and validates.
    pub fn with_overrides(s: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = s.parse().map_err(config_err)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::with_overrides(&s, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML, with the
    /// output directory left out.
    pub fn hash16(&self) -> Result<String> {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml_string()?.as_bytes());
        Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if let Some(dt) = self.scheme.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(config_err("scheme.dt must be > 0"));
            }
        }
        if self.scheme.record_every == 0 {
            return Err(config_err("scheme.record_every must be >= 1"));
        }
        if self.monte_carlo.n_paths == 0 {
            return Err(config_err("monte_carlo.n_paths must be >= 1"));
        }
        if self.sweep.eps.iter().any(|e| !(*e > 0.0)) {
            return Err(config_err("sweep.eps entries must be > 0"));
        }
        if !(self.event.radius >= 0.0) {
            return Err(config_err("event.radius must be >= 0"));
        }
        Ok(())
    }

    /// (A3) fast dissipation and (A4) scale separation on the model and on
    /// every sweep point.
    pub fn check_assumptions(&self) -> Result<()> {
        let basis = self.basis()?;
        self.model.check_fast_dissipation(basis.lambda_1())?;
        self.model.check_scale_separation(self.sweep.max_ratio)?;
        for &eps in &self.sweep.eps {
            self.model
                .with_scales(eps, self.sweep.delta_rule.delta(eps))
                .check_scale_separation(self.sweep.max_ratio)?;
        }
        if self.sweep.eps.len() > 1 && self.sweep.delta_rule.power <= 1.0 {
            return Err(Error::AssumptionViolation(
                "delta rule must satisfy delta / eps -> 0 (power > 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn basis(&self) -> Result<Arc<BasisSet>> {
        BasisSet::new(self.basis.n, self.basis.dealias)
    }

    /// Model with the master seed applied.
    pub fn model(&self) -> ModelParams {
        let mut m = self.model.clone();
        m.noise.seed = self.monte_carlo.seed;
        m
    }

    pub fn sim_options(&self, basis: &BasisSet) -> SimOptions {
        SimOptions {
            dt: self.scheme.dt.unwrap_or_else(|| default_dt(basis)),
            c_sub: self.scheme.c_sub,
            record_every: self.scheme.record_every,
            stop_radius: self.scheme.stop_radius,
            track_energy: self.scheme.track_energy,
            record_fast: false,
            path_index: 0,
        }
    }

    fn field(
        basis: &Arc<BasisSet>,
        coords: &Option<Vec<f64>>,
        rng: &mut ChaCha8Rng,
        amp: f64,
        slope: f64,
    ) -> Result<SpectralField> {
        match coords {
            Some(c) => padded(basis, c),
            None => Ok(SpectralField::random(basis, rng, amp, slope)),
        }
    }

    /// `(x0, y0)`.
    pub fn initial_state(&self, basis: &Arc<BasisSet>) -> Result<(SpectralField, SpectralField)> {
        let i = &self.initial;
        let mut rng = ChaCha8Rng::seed_from_u64(i.seed);
        let x = Self::field(basis, &i.slow_coords, &mut rng, i.slow_amplitude, i.slope)?;
        let y = Self::field(basis, &i.fast_coords, &mut rng, i.fast_amplitude, i.slope)?;
        Ok((x, y))
    }

    pub fn control(&self, basis: &BasisSet) -> Result<Control> {
        let c = &self.control;
        if c.n_knots == 0 {
            return Err(config_err("control.n_knots must be >= 1"));
        }
        let mut v = vec![0.0; basis.dim()];
        for x in v.iter_mut().take(c.coords) {
            *x = c.amplitude;
        }
        let h = Control::constant(self.model.horizon, c.n_knots, v);
        match c.budget {
            Some(b) => Control::new(h.horizon(), h.values().to_vec(), b),
            None => Ok(h),
        }
    }
}

/// Field from leading H-coordinates, zero-padded.
pub fn padded(basis: &Arc<BasisSet>, coords: &[f64]) -> Result<SpectralField> {
    if coords.len() > basis.dim() {
        return Err(config_err(format!(
            "{} coordinates given for a basis of dimension {}",
            coords.len(),
            basis.dim()
        )));
    }
    let mut c = vec![0.0; basis.dim()];
    c[..coords.len()].copy_from_slice(coords);
    SpectralField::from_coords(basis, &c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_fail_closed() {
        assert!(ExperimentConfig::from_toml_str("[model]\nmu = 1.0\nmuu = 2.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[nonsense]\n").is_err());
    }

    #[test]
    fn overrides_reach_nested_tables() {
        let c = ExperimentConfig::with_overrides(
            "",
            &[
                "model.coupling.l_g=0.25".into(),
                "sweep.eps=[0.5, 0.25]".into(),
                "drift.mode=monte_carlo".into(),
                "output.dir=somewhere".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.model.coupling.l_g, 0.25);
        assert_eq!(c.sweep.eps, vec![0.5, 0.25]);
        assert!(matches!(c.drift, DriftMode::MonteCarlo { .. }));
        assert_eq!(c.output.dir, PathBuf::from("somewhere"));
        assert!(ExperimentConfig::with_overrides("", &["model.mu".into()]).is_err());
    }

    #[test]
    fn hash_depends_on_content_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig::from_toml_str(&a.to_toml_string().unwrap()).unwrap();
        assert_eq!(a.hash16().unwrap(), b.hash16().unwrap());
        assert_eq!(a.hash16().unwrap().len(), 16);
        let c = ExperimentConfig::with_overrides("", &["monte_carlo.seed=3".into()]).unwrap();
        assert_ne!(a.hash16().unwrap(), c.hash16().unwrap());
        let d = ExperimentConfig::with_overrides("", &["output.dir=elsewhere".into()]).unwrap();
        assert_eq!(a.hash16().unwrap(), d.hash16().unwrap());
    }

    #[test]
    fn assumption_gate() {
        let ok = ExperimentConfig::default();
        ok.check_assumptions().unwrap();
        let bad = ExperimentConfig::with_overrides("", &["model.coupling.l_g=5.0".into()]).unwrap();
        assert!(matches!(bad.check_assumptions(), Err(Error::AssumptionViolation(_))));
        let ratio = ExperimentConfig::with_overrides("", &["model.delta=0.2".into()]).unwrap();
        assert!(matches!(ratio.check_assumptions(), Err(Error::AssumptionViolation(_))));
    }
}
