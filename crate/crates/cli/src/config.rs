//! Schema-versioned TOML configuration.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use phobs_core::embedding::OperatingDomain;
use phobs_core::lmi::{GainStructure, LmiSettings};
use phobs_core::model::{DeaParams, StateVec};
use phobs_core::simulate::{GainUpdate, InputSignal, Scenario};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub system: DeaParams,
    pub domain: DomainConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub designs: Vec<DesignConfig>,
    #[serde(default)]
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSource {
    /// Use the box given in the config.
    Frozen,
    /// Simulate `[domain.derive]` and use the resulting box.
    Derive,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub source: DomainSource,
    pub q_min_m: Option<Vec<f64>>,
    pub q_max_m: Option<Vec<f64>>,
    pub p_min_kg_m_per_s: Option<Vec<f64>>,
    pub p_max_kg_m_per_s: Option<Vec<f64>>,
    pub u_min_v2: Option<Vec<f64>>,
    pub u_max_v2: Option<Vec<f64>>,
    pub derive: Option<DeriveConfig>,
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DeriveConfig {
    pub x0_q_m: Vec<f64>,
    pub x0_p_kg_m_per_s: Vec<f64>,
    pub xhat0_q_m: Vec<f64>,
    pub xhat0_p_kg_m_per_s: Vec<f64>,
    pub input: InputConfig,
    pub horizon_s: f64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default)]
    pub margin_fraction: f64,
}

/// Bisection on the step amplitude `U` (volts, `u = U²`) for the largest
/// bounded open-loop response.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub u_lo_v: f64,
    pub u_hi_v: f64,
    pub rel_tol: f64,
    pub step_at_s: f64,
    pub horizon_s: f64,
    #[serde(default = "default_sweep_dt")]
    pub dt_s: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    Zero,
    Step {
        at_s: f64,
        amplitude_v2: Vec<f64>,
    },
    Piecewise {
        times_s: Vec<f64>,
        values_v2: Vec<Vec<f64>>,
    },
}

impl InputConfig {
    pub fn signal(&self) -> InputSignal {
        match self {
            InputConfig::Zero => InputSignal::Zero,
            InputConfig::Step { at_s, amplitude_v2 } => InputSignal::Step {
                at_s: *at_s,
                amplitude: amplitude_v2.clone(),
            },
            InputConfig::Piecewise { times_s, values_v2 } => InputSignal::Piecewise {
                breakpoints: times_s.iter().copied().zip(values_v2.iter().cloned()).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    #[serde(default = "default_tol")]
    pub tolerance_per_s: f64,
    #[serde(default = "default_margin_scale")]
    pub margin_scale: f64,
    #[serde(default = "default_floor_scale")]
    pub floor_scale: f64,
    #[serde(default = "default_gain_bound")]
    pub gain_bound: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        let s = LmiSettings::default();
        Self {
            tolerance_per_s: default_tol(),
            margin_scale: s.margin_scale,
            floor_scale: s.floor_scale,
            gain_bound: s.gain_bound,
        }
    }
}

impl SynthesisConfig {
    pub fn lmi_settings(&self) -> LmiSettings {
        LmiSettings {
            margin_scale: self.margin_scale,
            floor_scale: self.floor_scale,
            gain_bound: self.gain_bound,
            ..LmiSettings::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    Const,
    Sched,
}

impl ModeConfig {
    pub fn structure(self) -> GainStructure {
        match self {
            ModeConfig::Const => GainStructure::Constant,
            ModeConfig::Sched => GainStructure::Scheduled,
        }
    }
}

/// A decay rate in 1/s, or `"max"` for the largest certifiable one.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum DecayRate {
    Value(f64),
    Keyword(String),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub name: String,
    pub mode: ModeConfig,
    pub decay_rate_per_s: DecayRate,
}

impl DesignConfig {
    /// `None` means search for the maximum.
    pub fn fixed_rate(&self) -> Option<f64> {
        match self.decay_rate_per_s {
            DecayRate::Value(v) => Some(v),
            DecayRate::Keyword(_) => None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Designs simulated in this scenario; empty for a plant-only run.
    #[serde(default)]
    pub designs: Vec<String>,
    /// Reference design for the improvement percentages.
    pub baseline: Option<String>,
    pub x0_q_m: Vec<f64>,
    pub x0_p_kg_m_per_s: Vec<f64>,
    pub xhat0_q_m: Vec<f64>,
    pub xhat0_p_kg_m_per_s: Vec<f64>,
    pub input: InputConfig,
    #[serde(default = "default_horizon")]
    pub horizon_s: f64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    #[serde(default)]
    pub gain_update: GainUpdate,
}

impl ScenarioConfig {
    pub fn scenario(&self) -> Scenario {
        Scenario {
            name: self.name.clone(),
            x0: state(&self.x0_q_m, &self.x0_p_kg_m_per_s),
            xhat0: state(&self.xhat0_q_m, &self.xhat0_p_kg_m_per_s),
            input: self.input.signal(),
            horizon_s: self.horizon_s,
            dt_s: self.dt_s,
            sample_every: self.sample_every,
            gain_update: self.gain_update,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

fn default_dt() -> f64 {
    1e-5
}
fn default_sweep_dt() -> f64 {
    1e-4
}
fn default_horizon() -> f64 {
    2.0
}
fn default_sample_every() -> usize {
    10
}
fn default_tol() -> f64 {
    1e-3
}
fn default_margin_scale() -> f64 {
    LmiSettings::default().margin_scale
}
fn default_floor_scale() -> f64 {
    LmiSettings::default().floor_scale
}
fn default_gain_bound() -> f64 {
    LmiSettings::default().gain_bound
}
fn default_samples() -> usize {
    1000
}
fn default_seed() -> u64 {
    20240607
}
fn default_dir() -> String {
    "phobs-out".into()
}

fn state(q: &[f64], p: &[f64]) -> StateVec {
    StateVec::new(
        nalgebra::DVector::from_column_slice(q),
        nalgebra::DVector::from_column_slice(p),
    )
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn frozen_domain(&self) -> Option<OperatingDomain> {
        let d = &self.domain;
        Some(OperatingDomain {
            q_min: d.q_min_m.clone()?,
            q_max: d.q_max_m.clone()?,
            p_min: d.p_min_kg_m_per_s.clone()?,
            p_max: d.p_max_kg_m_per_s.clone()?,
            u_min: d.u_min_v2.clone()?,
            u_max: d.u_max_v2.clone()?,
        })
    }

    pub fn design(&self, name: &str) -> Option<&DesignConfig> {
        self.designs.iter().find(|d| d.name == name)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        self.system.validate().map_err(|e| invalid(format!("system: {e}")))?;
        let (n, m) = (1, 1);

        match self.domain.source {
            DomainSource::Frozen => {
                let dom = self
                    .frozen_domain()
                    .ok_or_else(|| invalid("domain: frozen source needs all six bound vectors"))?;
                dom.validate(n, m).map_err(|e| invalid(format!("domain: {e}")))?;
            }
            DomainSource::Derive => {
                let d = self
                    .domain
                    .derive
                    .as_ref()
                    .ok_or_else(|| invalid("domain: derive source needs a [domain.derive] table"))?;
                check_state("domain.derive", &d.x0_q_m, &d.x0_p_kg_m_per_s, n)?;
                check_state("domain.derive", &d.xhat0_q_m, &d.xhat0_p_kg_m_per_s, n)?;
                check_input("domain.derive", &d.input, m)?;
                check_grid("domain.derive", d.horizon_s, d.dt_s)?;
                if !(d.margin_fraction >= 0.0 && d.margin_fraction.is_finite()) {
                    return Err(invalid("domain.derive: margin_fraction must be non-negative"));
                }
            }
        }
        if let Some(s) = &self.domain.sweep {
            if !(s.u_lo_v >= 0.0 && s.u_hi_v > s.u_lo_v && s.rel_tol > 0.0 && s.rel_tol < 1.0) {
                return Err(invalid("domain.sweep: need 0 <= u_lo_v < u_hi_v and 0 < rel_tol < 1"));
            }
            check_grid("domain.sweep", s.horizon_s, s.dt_s)?;
        }

        let syn = &self.synthesis;
        for (key, v) in [
            ("tolerance_per_s", syn.tolerance_per_s),
            ("margin_scale", syn.margin_scale),
            ("floor_scale", syn.floor_scale),
            ("gain_bound", syn.gain_bound),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("synthesis.{key} must be positive")));
            }
        }

        let mut names = BTreeSet::new();
        for d in &self.designs {
            check_name("design", &d.name)?;
            if !names.insert(d.name.as_str()) {
                return Err(invalid(format!("duplicate design name '{}'", d.name)));
            }
            match &d.decay_rate_per_s {
                DecayRate::Value(v) if !(*v >= 0.0 && v.is_finite()) => {
                    return Err(invalid(format!("design '{}': decay rate must be non-negative", d.name)));
                }
                DecayRate::Keyword(k) if k != "max" => {
                    return Err(invalid(format!(
                        "design '{}': decay_rate_per_s must be a number or \"max\", got \"{k}\"",
                        d.name
                    )));
                }
                _ => {}
            }
        }

        let mut scenario_names = BTreeSet::new();
        for s in &self.scenarios {
            check_name("scenario", &s.name)?;
            if !scenario_names.insert(s.name.as_str()) {
                return Err(invalid(format!("duplicate scenario name '{}'", s.name)));
            }
            for d in s.designs.iter().chain(s.baseline.iter()) {
                if !names.contains(d.as_str()) {
                    return Err(invalid(format!(
                        "scenario '{}' references unknown design '{d}'",
                        s.name
                    )));
                }
            }
            if let Some(b) = &s.baseline {
                if !s.designs.contains(b) {
                    return Err(invalid(format!(
                        "scenario '{}': baseline '{b}' is not simulated",
                        s.name
                    )));
                }
            }
            let ctx = format!("scenario '{}'", s.name);
            check_state(&ctx, &s.x0_q_m, &s.x0_p_kg_m_per_s, n)?;
            check_state(&ctx, &s.xhat0_q_m, &s.xhat0_p_kg_m_per_s, n)?;
            check_input(&ctx, &s.input, m)?;
            check_grid(&ctx, s.horizon_s, s.dt_s)?;
            if s.sample_every == 0 {
                return Err(invalid(format!("{ctx}: sample_every must be at least 1")));
            }
        }
        if self.verify.samples == 0 {
            return Err(invalid("verify.samples must be at least 1"));
        }
        Ok(())
    }
}

fn check_name(kind: &str, name: &str) -> Result<(), ConfigError> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(invalid(format!("{kind} name '{name}' must be non-empty [A-Za-z0-9_-]")))
    }
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn check_state(ctx: &str, q: &[f64], p: &[f64], n: usize) -> Result<(), ConfigError> {
    if q.len() != n || p.len() != n || !finite(q) || !finite(p) {
        return Err(invalid(format!("{ctx}: initial states need {n} finite entries each")));
    }
    Ok(())
}

fn check_input(ctx: &str, input: &InputConfig, m: usize) -> Result<(), ConfigError> {
    let ok = match input {
        InputConfig::Zero => true,
        InputConfig::Step { at_s, amplitude_v2 } => at_s.is_finite() && amplitude_v2.len() == m && finite(amplitude_v2),
        InputConfig::Piecewise { times_s, values_v2 } => {
            times_s.len() == values_v2.len()
                && times_s.windows(2).all(|w| w[0] < w[1])
                && finite(times_s)
                && values_v2.iter().all(|v| v.len() == m && finite(v))
        }
    };
    if ok {
        Ok(())
    } else {
        Err(invalid(format!("{ctx}: malformed input signal")))
    }
}

fn check_grid(ctx: &str, horizon: f64, dt: f64) -> Result<(), ConfigError> {
    if dt > 0.0 && horizon >= dt && horizon.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{ctx}: need dt_s > 0 and horizon_s >= dt_s")))
    }
}
