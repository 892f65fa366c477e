//! Global configuration: one JSON document covering the simulator, the
//! pipeline, the learner, and the experiment harness, overridable from the
//! environment with `IOVTWIN_<SECTION>_<FIELD>` variables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use iovtwin_core::learner::DdpgConfig;
use iovtwin_core::pipeline::{PipelineConfig, Thresholds};
use iovtwin_core::sim::SimConfig;

use crate::ExperimentError;

/// Which service layer commits events to twins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Streaming pipeline: window-driven commits, density-gated feedback.
    DtNative,
    /// Manual data-flow trigger: the platform polls and drains in bursts.
    Traditional,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::DtNative => "dt-native",
            Mode::Traditional => "traditional",
        })
    }
}

/// Harness knobs that are not owned by any library module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentKnobs {
    /// Simulated run length in seconds.
    pub duration_s: f64,
    /// Traditional mode's manual trigger interval in simulated seconds.
    /// Deliberately coarser than the pipeline window: polling cadence is
    /// the chief driver of the baseline's processing time.
    pub poll_interval_s: f64,
    /// Modeled ingest/commit service rate in events per second; the k-th
    /// event of a burst completes k/rate later than the first.
    pub service_rate: f64,
    /// Extra commit delay applied to a window whose close produced a
    /// feedback decision (the drain waits for the decision to complete).
    pub decision_delay_s: f64,
    /// Paired runs per mode for `compare`.
    pub runs: usize,
    /// Sensor counts exercised by `compare`.
    pub sensor_counts: Vec<usize>,
    /// Optional broker fault drill, in simulated seconds (DT-native only).
    pub fault_at_s: Option<f64>,
    /// Output directory for CSVs, summaries, and twin XML.
    pub out_dir: String,
}

impl Default for ExperimentKnobs {
    fn default() -> Self {
        Self {
            duration_s: 600.0,
            poll_interval_s: 16.0,
            service_rate: 200.0,
            decision_delay_s: 0.5,
            runs: 10,
            sensor_counts: vec![5, 20, 90],
            fault_at_s: None,
            out_dir: "out".into(),
        }
    }
}

/// Knobs for the learning-rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepKnobs {
    /// (actor, critic) learning-rate combinations.
    pub combos: Vec<(f64, f64)>,
    pub episodes: usize,
    pub seeds: usize,
    /// Control windows per episode during sweep training.
    pub steps_per_episode: usize,
    /// Minibatch size during sweep training.
    pub batch: usize,
    /// Episodes averaged for the per-curve final loss.
    pub final_window: usize,
    /// Reward weights of the sweep's training environment. The sweep
    /// profile widens the value scale so the fixed episode budget
    /// separates the learning rates by convergence progress rather than by
    /// optimizer noise floors.
    pub reward: iovtwin_core::learner::RewardWeights,
}

impl Default for SweepKnobs {
    fn default() -> Self {
        Self {
            combos: vec![(0.001, 0.002), (0.01, 0.02), (0.1, 0.2)],
            episodes: 135,
            seeds: 5,
            steps_per_episode: 20,
            batch: 64,
            final_window: 20,
        }
    }
}

/// The whole config tree, as read from `--config <file>.json`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalConfig {
    pub sim: SimConfig,
    pub pipeline: PipelineConfig,
    pub learner: DdpgConfig,
    pub experiment: ExperimentKnobs,
    pub sweep: SweepKnobs,
}

impl GlobalConfig {
    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Io { path: path.display().to_string(), source: e })?;
        let cfg: GlobalConfig = serde_json::from_str(&text).map_err(|e| {
            ExperimentError::InvalidConfig(format!("{}: {e}", path.display()))
        })?;
        Ok(cfg)
    }

    /// Applies `IOVTWIN_<SECTION>_<FIELD>` environment overrides on top of
    /// this config. Sections: SIM, PIPELINE, LEARNER, EXPERIMENT, SWEEP;
    /// the field is the lower-cased remainder (e.g. `IOVTWIN_SIM_SEED=7`,
    /// `IOVTWIN_EXPERIMENT_POLL_INTERVAL_S=12`). Values are parsed as JSON
    /// scalars, falling back to strings.
    pub fn with_env_overrides(self) -> Result<Self, ExperimentError> {
        self.with_overrides(std::env::vars())
    }

    pub fn with_overrides(
        self,
        vars: impl Iterator<Item = (String, String)>,
    ) -> Result<Self, ExperimentError> {
        let mut tree = serde_json::to_value(&self).expect("config serializes");
        for (key, raw) in vars {
            let Some(rest) = key.strip_prefix("IOVTWIN_") else { continue };
            let Some((section, field)) = rest.split_once('_') else {
                return Err(ExperimentError::InvalidConfig(format!(
                    "{key}: expected IOVTWIN_<SECTION>_<FIELD>"
                )));
            };
            let section = section.to_ascii_lowercase();
            let field = field.to_ascii_lowercase();
            let Some(obj) = tree.get_mut(&section).and_then(|v| v.as_object_mut()) else {
                return Err(ExperimentError::InvalidConfig(format!(
                    "{key}: unknown section {section}"
                )));
            };
            if !obj.contains_key(&field) {
                return Err(ExperimentError::InvalidConfig(format!(
                    "{key}: unknown field {section}.{field}"
                )));
            }
            let value = serde_json::from_str(&raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
            obj.insert(field, value);
        }
        serde_json::from_value(tree)
            .map_err(|e| ExperimentError::InvalidConfig(format!("environment override: {e}")))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.sim.validate().map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        self.pipeline.validate().map_err(ExperimentError::InvalidConfig)?;
        self.learner.validate().map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        let k = &self.experiment;
        for (name, v) in [
            ("experiment.duration_s", k.duration_s),
            ("experiment.poll_interval_s", k.poll_interval_s),
            ("experiment.service_rate", k.service_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ExperimentError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(k.decision_delay_s.is_finite() && k.decision_delay_s >= 0.0) {
            return Err(ExperimentError::InvalidConfig(format!(
                "experiment.decision_delay_s must be >= 0, got {}",
                k.decision_delay_s
            )));
        }
        if k.runs == 0 {
            return Err(ExperimentError::InvalidConfig("experiment.runs must be >= 1".into()));
        }
        if let Some(t) = k.fault_at_s {
            if !(t.is_finite() && t > 0.0 && t < k.duration_s) {
                return Err(ExperimentError::InvalidConfig(format!(
                    "experiment.fault_at_s must lie inside (0, duration), got {t}"
                )));
            }
        }
        let s = &self.sweep;
        if s.episodes == 0 || s.seeds == 0 || s.steps_per_episode == 0 || s.batch == 0 {
            return Err(ExperimentError::InvalidConfig(
                "sweep.episodes, sweep.seeds, sweep.steps_per_episode, sweep.batch must be >= 1"
                    .into(),
            ));
        }
        for &(a, c) in &s.combos {
            crate::sweep::check_lr("sweep.combos lr_actor", a)?;
            crate::sweep::check_lr("sweep.combos lr_critic", c)?;
        }
        Ok(())
    }
}

/// One concrete experiment: a mode, a sensor count, a seed, and every knob
/// the driver needs, resolved from the global config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sensors: usize,
    pub mode: Mode,
    pub duration_s: f64,
    pub seed: u64,
    pub thresholds: Thresholds,
    pub window_s: f64,
    pub recovery_period_s: f64,
    pub poll_interval_s: f64,
    pub service_rate: f64,
    pub decision_delay_s: f64,
    pub fault_at_s: Option<f64>,
    pub out_dir: String,
    pub sim: SimConfig,
    pub pipeline: PipelineConfig,
}

impl ExperimentConfig {
    /// Resolves a runnable experiment from the global tree.
    pub fn resolve(global: &GlobalConfig, sensors: usize, mode: Mode, seed: u64) -> Self {
        let sim = SimConfig { sensors, seed, ..global.sim.clone() };
        Self {
            sensors,
            mode,
            duration_s: global.experiment.duration_s,
            seed,
            thresholds: global.pipeline.thresholds.clone(),
            window_s: global.pipeline.window_s,
            recovery_period_s: global.pipeline.recovery_period_s,
            poll_interval_s: global.experiment.poll_interval_s,
            service_rate: global.experiment.service_rate,
            decision_delay_s: global.experiment.decision_delay_s,
            fault_at_s: global.experiment.fault_at_s,
            out_dir: global.experiment.out_dir.clone(),
            pipeline: global.pipeline.clone(),
            sim,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(ExperimentError::InvalidConfig(format!(
                "duration must be > 0, got {}",
                self.duration_s
            )));
        }
        if !(self.poll_interval_s.is_finite() && self.poll_interval_s > 0.0) {
            return Err(ExperimentError::InvalidConfig(format!(
                "poll_interval must be > 0, got {}",
                self.poll_interval_s
            )));
        }
        if !(self.service_rate.is_finite() && self.service_rate > 0.0) {
            return Err(ExperimentError::InvalidConfig(format!(
                "service_rate must be > 0, got {}",
                self.service_rate
            )));
        }
        if !(self.window_s.is_finite() && self.window_s > 0.0) {
            return Err(ExperimentError::InvalidConfig(format!(
                "window must be > 0, got {}",
                self.window_s
            )));
        }
        if !(self.recovery_period_s.is_finite() && self.recovery_period_s >= 0.0) {
            return Err(ExperimentError::InvalidConfig(format!(
                "recovery_period must be >= 0, got {}",
                self.recovery_period_s
            )));
        }
        if let Some(t) = self.fault_at_s {
            if self.mode != Mode::DtNative {
                return Err(ExperimentError::InvalidConfig(
                    "fault_at_s drills the broker recovery path, which only exists in dt-native \
                     mode"
                        .into(),
                ));
            }
            if !(t.is_finite() && t > 0.0 && t < self.duration_s) {
                return Err(ExperimentError::InvalidConfig(format!(
                    "fault_at_s must lie inside (0, duration), got {t}"
                )));
            }
        }
        if self.sim.sensors != self.sensors || self.sim.seed != self.seed {
            return Err(ExperimentError::InvalidConfig(format!(
                "sensors/seed must match the embedded scenario: {}/{} vs sim {}/{}",
                self.sensors, self.seed, self.sim.sensors, self.sim.seed
            )));
        }
        self.sim.validate().map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        self.pipeline.validate().map_err(ExperimentError::InvalidConfig)?;
        self.thresholds.validate().map_err(ExperimentError::InvalidConfig)?;
        Ok(())
    }

    /// Directory-friendly identifier for this run's artifacts.
    pub fn run_id(&self) -> String {
        format!("{}-s{}-seed{}", self.mode, self.sensors, self.seed)
    }
}
