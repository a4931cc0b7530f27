//! Experiment configs, the batch runner, and result exports.
//!
//! A run is fully determined by one TOML config plus a seed: world,
//! student, schedule, grid, solver, guidance, and sample count. Unknown
//! keys are rejected so a config hash pins the experiment exactly.

mod export;
mod runner;

pub use export::{
    export_plotdata, read_table_csv, write_metrics_json, write_samples_csv, write_status,
    write_table_csv, write_timings_csv, write_trajectories_csv, PlotKind,
};
pub use runner::{
    compare_steps, convergence_grid, convergence_schedule, generate_analytic_samples,
    generate_samples, reference_samples, run_ablation_renoise, run_convergence_study,
    run_experiment, sample_trajectories, sweep_lambda, ExperimentOutputs, RunError, VariantCounts,
    VariantOutcome, VariantSpec, REFERENCE_STEPS,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;
use thiserror::Error;

use crate::guidance::{GuidanceConfig, GuidanceError};
use crate::schedule::{
    build_schedule, make_grid, NoiseSchedule, ScheduleError, ScheduleKind, SpacingKind, TimeGrid,
};
use crate::solvers::{SolverKind, SolverOptions};
use crate::world::{CfgParams, Component, MixtureWorld, StudentSpec, WorldError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub dim: usize,
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub n_train: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { kind: ScheduleKind::Linear, n_train: 1000, beta_min: 1e-4, beta_max: 2e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub m_steps: usize,
    pub spacing: SpacingKind,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { m_steps: 4, spacing: SpacingKind::Uniform }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    #[serde(flatten)]
    pub options: SolverOptions,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { kind: SolverKind::Ddim, options: SolverOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfgConfig {
    pub w: f64,
    /// Sampling condition label; absent means unconditional.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
}

impl Default for CfgConfig {
    fn default() -> Self {
        Self { w: 7.5, condition: None }
    }
}

/// One experiment, fully determined and hashable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_samples")]
    pub n_samples: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub world: WorldConfig,
    pub student: StudentSpec,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub cfg: CfgConfig,
}

fn default_n_samples() -> i64 {
    1000
}

/// Parse and validate a config from its TOML text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = toml::from_str(text)?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    /// Check every module-level invariant reachable from the config.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_samples < 1 {
            return Err(ConfigError::Invalid {
                field: "n_samples",
                reason: format!("must be at least 1, got {}", self.n_samples),
            });
        }
        let world = self.build_world()?;
        let schedule = self.build_schedule()?;
        let grid = self.build_grid(&schedule)?;
        if self.guidance.k > grid.num_steps() {
            return Err(ConfigError::Invalid {
                field: "guidance.k",
                reason: format!("k = {} exceeds grid steps {}", self.guidance.k, grid.num_steps()),
            });
        }
        self.guidance.validate()?;
        CfgParams::new(self.cfg.w)?;
        if let Some(condition) = &self.cfg.condition {
            if !world.condition_labels().contains(&condition.as_str()) {
                return Err(ConfigError::Invalid {
                    field: "cfg.condition",
                    reason: format!("label `{condition}` not present in the world"),
                });
            }
        }
        if !(self.solver.options.eta >= 0.0) {
            return Err(ConfigError::Invalid {
                field: "solver.eta",
                reason: format!("must be non-negative, got {}", self.solver.options.eta),
            });
        }
        if !(self.solver.options.r > 0.0 && self.solver.options.r <= 1.0) {
            return Err(ConfigError::Invalid {
                field: "solver.r",
                reason: format!("must lie in (0, 1], got {}", self.solver.options.r),
            });
        }
        // Student validity beyond what construction checks.
        crate::world::make_student(&self.student, &Arc::new(world), &schedule)?;
        Ok(())
    }

    pub fn build_world(&self) -> Result<MixtureWorld, WorldError> {
        MixtureWorld::new(self.world.dim, self.world.components.clone())
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule, ScheduleError> {
        build_schedule(
            self.schedule.kind,
            self.schedule.n_train,
            self.schedule.beta_min,
            self.schedule.beta_max,
        )
    }

    pub fn build_grid(&self, schedule: &NoiseSchedule) -> Result<TimeGrid, ScheduleError> {
        make_grid(schedule, self.grid.m_steps, self.grid.spacing)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Stable 16-hex-digit hash of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = self.to_toml().expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// One row of a result table. Wall time is tracked separately so the main
/// artifacts stay byte-stable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub config_hash: String,
    pub variant: String,
    pub metric: String,
    pub value: f64,
    pub teacher_calls: u64,
    pub student_calls: u64,
}

/// Rows of `(variant, metric)` results plus per-variant wall times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<TableRow>,
    pub wall_times_ms: Vec<(String, u128)>,
}

impl ResultTable {
    pub fn push(&mut self, row: TableRow) {
        self.rows.push(row);
    }

    pub fn value(&self, variant: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn variants(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.variant.as_str()) {
                out.push(&r.variant);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[world]
dim = 1

[[world.components]]
weight = 1.0
mean = [0.0]
var = [1.0]

[student]
kind = "biased-mean"
delta = [0.25]
"#;

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let config = parse_config(MINIMAL).unwrap();
        assert_eq!(config.guidance.lambda, 0.02);
        assert_eq!(config.guidance.k, 1);
        assert_eq!(config.cfg.w, 7.5);
        assert_eq!(config.guidance.renoise, crate::guidance::RenoiseSchedule::Decreasing);
        assert_eq!(config.schedule.n_train, 1000);
        assert_eq!(config.grid.m_steps, 4);
    }

    #[test]
    fn negative_n_samples_is_a_validation_error() {
        let text = format!("n_samples = -5\n{MINIMAL}");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "n_samples", .. }), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("mystery_knob = 3\n{MINIMAL}");
        assert!(matches!(parse_config(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn round_trip_reparses_equal() {
        let config = parse_config(MINIMAL).unwrap();
        let text = config.to_toml().unwrap();
        let reparsed = parse_config(&text).unwrap();
        assert_eq!(config, reparsed);
        assert_eq!(config.hash(), reparsed.hash());
    }

    #[test]
    fn hash_distinguishes_configs() {
        let a = parse_config(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_condition_label_is_rejected() {
        let text = format!("{MINIMAL}\n[cfg]\ncondition = \"nope\"\n");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "cfg.condition", .. }));
    }

    #[test]
    fn oversized_k_is_rejected() {
        let text = format!("{MINIMAL}\n[guidance]\nk = 9\n");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "guidance.k", .. }));
    }
}
