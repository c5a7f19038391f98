//! Run configuration: one TOML file, parsed strictly.

use std::fmt;

use serde::Deserialize;

use ricker_core::lab::{QsdMethod, RetentionOptions, SweepOptions, MATRIX_STATE_LIMIT};
use ricker_core::qsd::{McOptions, PowerOptions, DEFAULT_OVERFLOW_BUDGET};
use ricker_core::{Error as CoreError, ModelParams, OffspringLaw};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn invalid(path: &str, reason: impl fmt::Display) -> ConfigError {
    ConfigError(format!("invalid config: `{path}` {reason}"))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: ModelSection,
    #[serde(default)]
    pub offspring: OffspringLaw,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub qsd: QsdSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub cycles: CyclesSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub r: f64,
    pub r_tilde: f64,
    #[serde(rename = "K")]
    pub k: f64,
    /// Defaults to `K`.
    #[serde(rename = "K_tilde")]
    pub k_tilde: Option<f64>,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub initial_m: u64,
    pub initial_n: u64,
    pub max_steps: u64,
    pub n_trajectories: usize,
    /// How many of the runs get a full path CSV.
    pub save_paths: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            initial_m: 10,
            initial_n: 10,
            max_steps: 10_000,
            n_trajectories: 100,
            save_paths: 10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QsdSection {
    pub method: QsdMethod,
    /// Fixed cap; grown adaptively from the default when absent.
    pub cap: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub overflow_budget: f64,
    pub max_states: usize,
    pub n_particles: usize,
    pub t_max: usize,
    pub burn_in: usize,
}

impl Default for QsdSection {
    fn default() -> Self {
        let power = PowerOptions::default();
        let mc = McOptions::default();
        Self {
            method: QsdMethod::Auto,
            cap: None,
            tol: power.tol,
            max_iter: power.max_iter,
            overflow_budget: DEFAULT_OVERFLOW_BUDGET,
            max_states: MATRIX_STATE_LIMIT,
            n_particles: mc.n_particles,
            t_max: mc.t_max,
            burn_in: mc.burn_in,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Scaling,
    Tightness,
    Retention,
    Ar,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    #[serde(rename = "K_list")]
    pub k_list: Vec<f64>,
    pub experiments: Vec<Experiment>,
    /// Overrides `qsd.method` for the sweep.
    pub method: Option<QsdMethod>,
    pub strip_width: f64,
    pub box_half_width: f64,
    /// Retention steps; defaults to the verified iterate of the box.
    pub retention_steps: Option<usize>,
    pub retention_samples: usize,
    pub retention_grid: usize,
    pub retention_margin: f64,
    pub confidence: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let ret = RetentionOptions::default();
        let sw = SweepOptions::default();
        Self {
            k_list: vec![0.3, 0.2, 0.15, 0.1],
            experiments: vec![Experiment::Scaling, Experiment::Tightness],
            method: None,
            strip_width: sw.strip_width,
            box_half_width: sw.box_half_width,
            retention_steps: None,
            retention_samples: ret.n_samples,
            retention_grid: ret.grid_per_axis,
            retention_margin: ret.margin_fraction,
            confidence: ret.confidence,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CyclesSection {
    pub burn_in: usize,
    pub max_period: usize,
    pub tol: f64,
    pub x0: f64,
    pub y0: f64,
    #[serde(rename = "K_list")]
    pub k_list: Vec<f64>,
    pub radius: f64,
    pub method: Option<QsdMethod>,
}

impl Default for CyclesSection {
    fn default() -> Self {
        Self {
            burn_in: 10_000,
            max_period: 64,
            tol: 1e-8,
            x0: 0.5,
            y0: 0.4,
            k_list: vec![0.3, 0.2, 0.15],
            radius: 0.1,
            method: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn params(&self) -> Result<ModelParams, ConfigError> {
        let m = &self.model;
        let p = ModelParams {
            r: m.r,
            r_tilde: m.r_tilde,
            k: m.k,
            k_tilde: m.k_tilde.unwrap_or(m.k),
            a: m.a,
            b: m.b,
            offspring: self.offspring.clone(),
        };
        p.validate().map_err(|e| match e {
            CoreError::InvalidParameter { field, reason } => invalid(&format!("model.{field}"), reason),
            other => ConfigError(format!("invalid config: {other}")),
        })?;
        ricker_core::branching::BranchingModel::new(p.clone())
            .map_err(|e| invalid("offspring", e))?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.params()?;
        let s = &self.simulate;
        if s.max_steps == 0 {
            return Err(invalid("simulate.max_steps", "must be >= 1"));
        }
        if s.n_trajectories == 0 {
            return Err(invalid("simulate.n_trajectories", "must be >= 1"));
        }
        let q = &self.qsd;
        if q.cap == Some(0) {
            return Err(invalid("qsd.cap", "must be >= 1"));
        }
        if !(q.tol > 0.0) {
            return Err(invalid("qsd.tol", "must be > 0"));
        }
        if q.max_iter == 0 {
            return Err(invalid("qsd.max_iter", "must be >= 1"));
        }
        if !(q.overflow_budget > 0.0 && q.overflow_budget <= 1.0) {
            return Err(invalid("qsd.overflow_budget", "must lie in (0, 1]"));
        }
        if q.max_states == 0 {
            return Err(invalid("qsd.max_states", "must be >= 1"));
        }
        if q.n_particles < 100 {
            return Err(invalid("qsd.n_particles", "must be >= 100"));
        }
        if q.t_max <= q.burn_in {
            return Err(invalid("qsd.t_max", "must exceed qsd.burn_in"));
        }
        let w = &self.sweep;
        check_k_list("sweep.K_list", &w.k_list)?;
        if !(w.strip_width > 0.0) {
            return Err(invalid("sweep.strip_width", "must be > 0"));
        }
        if !(w.box_half_width > 0.0) {
            return Err(invalid("sweep.box_half_width", "must be > 0"));
        }
        if w.retention_steps == Some(0) {
            return Err(invalid("sweep.retention_steps", "must be >= 1"));
        }
        if w.retention_samples == 0 {
            return Err(invalid("sweep.retention_samples", "must be >= 1"));
        }
        if w.retention_grid == 0 {
            return Err(invalid("sweep.retention_grid", "must be >= 1"));
        }
        if !(w.retention_margin >= 0.0) {
            return Err(invalid("sweep.retention_margin", "must be >= 0"));
        }
        if !(w.confidence > 0.0 && w.confidence < 1.0) {
            return Err(invalid("sweep.confidence", "must lie in (0, 1)"));
        }
        let c = &self.cycles;
        check_k_list("cycles.K_list", &c.k_list)?;
        if c.max_period == 0 {
            return Err(invalid("cycles.max_period", "must be >= 1"));
        }
        if !(c.tol > 0.0) {
            return Err(invalid("cycles.tol", "must be > 0"));
        }
        if !(c.x0 >= 0.0 && c.x0.is_finite()) {
            return Err(invalid("cycles.x0", "must be finite and >= 0"));
        }
        if !(c.y0 >= 0.0 && c.y0.is_finite()) {
            return Err(invalid("cycles.y0", "must be finite and >= 0"));
        }
        if !(c.radius > 0.0) {
            return Err(invalid("cycles.radius", "must be > 0"));
        }
        Ok(())
    }

    pub fn power_options(&self) -> PowerOptions {
        PowerOptions {
            tol: self.qsd.tol,
            max_iter: self.qsd.max_iter,
            initial: None,
        }
    }

    pub fn mc_options(&self) -> McOptions {
        McOptions {
            n_particles: self.qsd.n_particles,
            t_max: self.qsd.t_max,
            burn_in: self.qsd.burn_in,
            initial: None,
        }
    }

    pub fn sweep_options(&self, method: Option<QsdMethod>) -> SweepOptions {
        SweepOptions {
            method: method.unwrap_or(self.qsd.method),
            max_states: self.qsd.max_states,
            overflow_budget: self.qsd.overflow_budget,
            power: self.power_options(),
            monte_carlo: self.mc_options(),
            box_half_width: self.sweep.box_half_width,
            strip_width: self.sweep.strip_width,
        }
    }
}

fn check_k_list(path: &str, ks: &[f64]) -> Result<(), ConfigError> {
    if ks.is_empty() {
        return Err(invalid(path, "must not be empty"));
    }
    if ks.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
        return Err(invalid(path, "entries must be finite and > 0"));
    }
    if ks.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid(path, "must be strictly decreasing"));
    }
    Ok(())
}
