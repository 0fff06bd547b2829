//! Experiment harness behind the `aoi-sched` binary: scenario files, sweeps,
//! parameter reports, and the validation suite.
//!
//! Scenario files are TOML:
//!
//! ```toml
//! scenario = "fig5a"
//! policies = ["dpp", "ofrp", "forp"]
//! replicas = 4
//! step = 0.01
//!
//! [system]
//! num_users = 2
//! success_prob = 0.8      # scalar or one value per user
//! sample_cost = 1.0
//! transmit_cost = 5.0
//! aoi_cap = 10
//! aoi_limit = 5.0         # scalar or one value per user
//! horizon = 1000000
//! seed = 1
//! v_weight = 800.0
//! single_transmitter_mode = true
//!
//! [sweep]
//! axis = "p"              # p | aoi_limit | sample_cost | v
//! values = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
//! ```

pub mod output;
pub mod run;
pub mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{ProbabilityGrid, DEFAULT_STEP};
use crate::model::{ModelError, SystemConfig, DEFAULT_HORIZON, DEFAULT_V_WEIGHT};

/// Invalid scenario, reported with the offending field path.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{path}: {message}")]
pub struct SpecError {
    pub path: String,
    pub message: String,
}

impl SpecError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

fn from_model(prefix: &str, e: ModelError) -> SpecError {
    match e {
        ModelError::InvalidConfig { field, reason } => SpecError::new(format!("{prefix}.{field}"), reason),
        other => SpecError::new(prefix, other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Dpp,
    Ofrp,
    Forp,
    OfrpAnalytic,
    ForpAnalytic,
}

impl PolicyKind {
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Dpp => "dpp",
            PolicyKind::Ofrp => "ofrp",
            PolicyKind::Forp => "forp",
            PolicyKind::OfrpAnalytic => "ofrp-analytic",
            PolicyKind::ForpAnalytic => "forp-analytic",
        }
    }

    pub fn is_simulated(self) -> bool {
        matches!(self, PolicyKind::Dpp | PolicyKind::Ofrp | PolicyKind::Forp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    P,
    AoiLimit,
    SampleCost,
    V,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::P => "p",
            SweepAxis::AoiLimit => "aoi_limit",
            SweepAxis::SampleCost => "sample_cost",
            SweepAxis::V => "v",
        }
    }

    /// Applies one sweep value to every user.
    pub fn apply(self, cfg: &SystemConfig, value: f64) -> SystemConfig {
        let mut cfg = cfg.clone();
        match self {
            SweepAxis::P => cfg.success_prob = vec![value; cfg.num_users],
            SweepAxis::AoiLimit => cfg.aoi_limit = vec![value; cfg.num_users],
            SweepAxis::SampleCost => cfg.sample_cost = value,
            SweepAxis::V => cfg.v_weight = value,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn resolve(&self, path: &str, n: usize) -> Result<Vec<f64>, SpecError> {
        match self {
            ScalarOrList::Scalar(v) => Ok(vec![*v; n]),
            ScalarOrList::List(v) if v.len() == n => Ok(v.clone()),
            ScalarOrList::List(v) => Err(SpecError::new(
                path,
                format!("{} values given for {n} users", v.len()),
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(default = "default_users")]
    num_users: usize,
    #[serde(default = "default_p")]
    success_prob: ScalarOrList,
    #[serde(default = "default_sample_cost")]
    sample_cost: f64,
    #[serde(default = "default_transmit_cost")]
    transmit_cost: f64,
    #[serde(default = "default_cap")]
    aoi_cap: u32,
    #[serde(default = "default_limit")]
    aoi_limit: ScalarOrList,
    #[serde(default = "default_horizon")]
    horizon: u64,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_v")]
    v_weight: f64,
    #[serde(default = "default_true")]
    single_transmitter_mode: bool,
}

fn default_users() -> usize {
    2
}
fn default_p() -> ScalarOrList {
    ScalarOrList::Scalar(0.8)
}
fn default_sample_cost() -> f64 {
    1.0
}
fn default_transmit_cost() -> f64 {
    5.0
}
fn default_cap() -> u32 {
    10
}
fn default_limit() -> ScalarOrList {
    ScalarOrList::Scalar(5.0)
}
fn default_horizon() -> u64 {
    DEFAULT_HORIZON
}
fn default_seed() -> u64 {
    1
}
fn default_v() -> f64 {
    DEFAULT_V_WEIGHT
}
fn default_true() -> bool {
    true
}
fn default_replicas() -> usize {
    4
}
fn default_step() -> f64 {
    DEFAULT_STEP
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    scenario: String,
    policies: Vec<PolicyKind>,
    #[serde(default = "default_replicas")]
    replicas: usize,
    #[serde(default = "default_step")]
    step: f64,
    system: RawSystem,
    sweep: Option<Sweep>,
}

/// Fully resolved scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub scenario: String,
    pub system: SystemConfig,
    pub policies: Vec<PolicyKind>,
    pub sweep: Option<Sweep>,
    pub replicas: usize,
    pub step: f64,
}

/// One point of a sweep. `axis_value` is `None` without a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub axis_value: Option<f64>,
    pub system: SystemConfig,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        let raw: RawSpec = toml::from_str(text).map_err(|e| SpecError::new("config", e.to_string().trim_end()))?;
        let k = raw.system.num_users;
        if k == 0 {
            return Err(SpecError::new("system.num_users", "must be at least 1"));
        }
        let system = SystemConfig {
            num_users: k,
            success_prob: raw.system.success_prob.resolve("system.success_prob", k)?,
            sample_cost: raw.system.sample_cost,
            transmit_cost: raw.system.transmit_cost,
            aoi_cap: raw.system.aoi_cap,
            aoi_limit: raw.system.aoi_limit.resolve("system.aoi_limit", k)?,
            horizon: raw.system.horizon,
            seed: raw.system.seed,
            v_weight: raw.system.v_weight,
            single_transmitter_mode: raw.system.single_transmitter_mode,
        };
        let spec = Self {
            scenario: raw.scenario,
            system,
            policies: raw.policies,
            sweep: raw.sweep,
            replicas: raw.replicas,
            step: raw.step,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_preset(name: &str) -> Result<Self, SpecError> {
        let text = preset(name).ok_or_else(|| {
            SpecError::new(
                "preset",
                format!("unknown preset {name:?}, expected one of {}", PRESETS.map(|p| p.0).join(", ")),
            )
        })?;
        Self::from_toml(text)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let id_ok = !self.scenario.is_empty()
            && self
                .scenario
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !id_ok {
            return Err(SpecError::new("scenario", "must be a non-empty [A-Za-z0-9_-] identifier"));
        }
        if self.policies.is_empty() {
            return Err(SpecError::new("policies", "at least one policy required"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if self.policies[..i].contains(p) {
                return Err(SpecError::new(format!("policies[{i}]"), format!("{} listed twice", p.label())));
            }
        }
        if self.replicas == 0 {
            return Err(SpecError::new("replicas", "must be at least 1"));
        }
        ProbabilityGrid::new(self.step).map_err(|e| SpecError::new("step", e.to_string()))?;
        check_system(&self.system).map_err(|e| from_model("system", e))?;
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(SpecError::new("sweep.values", "empty sweep list"));
            }
            for (i, &v) in sweep.values.iter().enumerate() {
                let path = format!("sweep.values[{i}]");
                if !v.is_finite() {
                    return Err(SpecError::new(path, "must be finite"));
                }
                check_system(&sweep.axis.apply(&self.system, v)).map_err(|e| SpecError::new(path, e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        match &self.sweep {
            None => vec![SweepPoint {
                axis_value: None,
                system: self.system.clone(),
            }],
            Some(s) => s
                .values
                .iter()
                .map(|&v| SweepPoint {
                    axis_value: Some(v),
                    system: s.axis.apply(&self.system, v),
                })
                .collect(),
        }
    }

    pub fn axis_label(&self) -> &'static str {
        self.sweep.as_ref().map_or("none", |s| s.axis.label())
    }

    /// Overrides from the command line.
    pub fn with_overrides(mut self, replicas: Option<usize>, horizon: Option<u64>) -> Result<Self, SpecError> {
        if let Some(r) = replicas {
            self.replicas = r;
        }
        if let Some(h) = horizon {
            self.system.horizon = h;
        }
        self.validate()?;
        Ok(self)
    }
}

/// Structural checks plus positive limits. Limits below 1 are accepted here
/// and surface as infeasible rows at run time.
fn check_system(cfg: &SystemConfig) -> Result<(), ModelError> {
    cfg.validate_structure()?;
    for (k, &a) in cfg.aoi_limit.iter().enumerate() {
        if !(a > 0.0) {
            return Err(ModelError::InvalidConfig {
                field: format!("aoi_limit[{k}]"),
                reason: format!("{a} must be positive"),
            });
        }
    }
    Ok(())
}

/// Scenario files shipped with the binary.
pub const PRESETS: [(&str, &str); 6] = [
    ("fig5a", include_str!("../../scenarios/fig5a.toml")),
    ("fig5b", include_str!("../../scenarios/fig5b.toml")),
    ("fig6", include_str!("../../scenarios/fig6.toml")),
    ("fig7", include_str!("../../scenarios/fig7.toml")),
    ("fig8", include_str!("../../scenarios/fig8.toml")),
    ("fig9", include_str!("../../scenarios/fig9.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
scenario = "t"
policies = ["dpp"]
[system]
success_prob = [0.5, 0.9]
"#;

    #[test]
    fn defaults_fill_in() {
        let s = ExperimentSpec::from_toml(MINIMAL).unwrap();
        assert_eq!(s.system.success_prob, vec![0.5, 0.9]);
        assert_eq!(s.system.aoi_limit, vec![5.0, 5.0]);
        assert_eq!(s.system.v_weight, 800.0);
        assert_eq!(s.replicas, 4);
        assert_eq!(s.points().len(), 1);
    }

    #[test]
    fn errors_carry_field_paths() {
        let bad_len = MINIMAL.replace("[0.5, 0.9]", "[0.5]");
        assert_eq!(ExperimentSpec::from_toml(&bad_len).unwrap_err().path, "system.success_prob");
        let bad_p = MINIMAL.replace("[0.5, 0.9]", "[0.5, 1.5]");
        assert_eq!(ExperimentSpec::from_toml(&bad_p).unwrap_err().path, "system.success_prob[1]");
        let empty = format!("{MINIMAL}[sweep]\naxis = \"v\"\nvalues = []\n");
        assert_eq!(ExperimentSpec::from_toml(&empty).unwrap_err().path, "sweep.values");
        let neg = format!("{MINIMAL}[sweep]\naxis = \"aoi_limit\"\nvalues = [3.0, -1.0]\n");
        assert_eq!(ExperimentSpec::from_toml(&neg).unwrap_err().path, "sweep.values[1]");
        let unknown = MINIMAL.replace("policies = [\"dpp\"]", "policies = [\"greedy\"]");
        assert_eq!(ExperimentSpec::from_toml(&unknown).unwrap_err().path, "config");
        let id = MINIMAL.replace("\"t\"", "\"a/b\"");
        assert_eq!(ExperimentSpec::from_toml(&id).unwrap_err().path, "scenario");
    }

    #[test]
    fn presets_parse() {
        for (name, _) in PRESETS {
            let s = ExperimentSpec::from_preset(name).unwrap();
            assert_eq!(s.scenario, name);
            assert!(s.sweep.is_some());
        }
        assert!(ExperimentSpec::from_preset("fig42").is_err());
    }

    #[test]
    fn sweep_points_apply_axis() {
        let s = ExperimentSpec::from_preset("fig7").unwrap();
        let pts = s.points();
        assert_eq!(pts[0].system.sample_cost, s.sweep.as_ref().unwrap().values[0]);
        assert_eq!(pts[0].axis_value, Some(pts[0].system.sample_cost));
    }
}
