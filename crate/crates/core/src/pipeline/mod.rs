//! The digital-side event flow: the Event Publisher relays streamed
//! events while the STREAM flag is set, the Event Broker queues them by
//! type and turns per-window queue densities into flow decisions, and the
//! Event Reactor wraps approved feedback commands for the wire.
//!
//! The three stages are plain structs driven by the caller. They own their
//! state exclusively and communicate only through returned values, so the
//! orchestrator can run them lockstep (deterministic tests) or move them
//! onto separate tasks without changing any semantics; the broker is the
//! single consumer of all queues.

mod broker;
mod publisher;
mod reactor;

pub use broker::{BrokerState, DensityReport, EventQueue, FaultState, FlowDecision};
pub use publisher::PublisherState;
pub use reactor::reactor_apply;

use serde::{Deserialize, Serialize};

use crate::events::EventType;

/// Per-type density thresholds. A window whose density strictly exceeds
/// the threshold triggers feedback for that type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub theta: [f64; 3],
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { theta: [0.8; 3] }
    }
}

impl Thresholds {
    pub fn uniform(theta: f64) -> Self {
        Self { theta: [theta; 3] }
    }

    pub fn theta(&self, ty: EventType) -> f64 {
        self.theta[ty.index()]
    }

    pub fn validate(&self) -> Result<(), String> {
        for (ty, theta) in EventType::ALL.iter().zip(self.theta) {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(format!("threshold for {ty} must lie in (0, 1], got {theta}"));
            }
        }
        Ok(())
    }
}

/// Knobs of the digital-side flow, loaded from the global JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Density evaluation window, seconds of sim time.
    pub window_s: f64,
    /// Capacity of each per-type queue (the density denominator).
    pub queue_capacity: usize,
    pub thresholds: Thresholds,
    /// How long the broker stays down after a fault, seconds.
    pub recovery_period_s: f64,
    /// Speed-limit multiplier applied when E1 density trips.
    pub speed_factor: f64,
    /// Green-duration multiplier applied when E3 density trips.
    pub green_factor: f64,
    /// Sampling-period multiplier applied when E2 density trips.
    pub sampling_factor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_s: 10.0,
            queue_capacity: 64,
            thresholds: Thresholds::default(),
            recovery_period_s: 5.0,
            speed_factor: 0.8,
            green_factor: 1.25,
            sampling_factor: 2.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return Err(format!("window_s must be positive, got {}", self.window_s));
        }
        if self.queue_capacity == 0 {
            return Err("queue_capacity must be at least 1".into());
        }
        if !(self.recovery_period_s >= 0.0 && self.recovery_period_s.is_finite()) {
            return Err(format!(
                "recovery_period_s must be non-negative, got {}",
                self.recovery_period_s
            ));
        }
        for (name, value) in [
            ("speed_factor", self.speed_factor),
            ("green_factor", self.green_factor),
            ("sampling_factor", self.sampling_factor),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(format!("{name} must be positive, got {value}"));
            }
        }
        self.thresholds.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pipeline_config_is_valid() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn thresholds_outside_unit_interval_rejected() {
        assert!(Thresholds::uniform(0.0).validate().is_err());
        assert!(Thresholds::uniform(1.1).validate().is_err());
        assert!(Thresholds::uniform(1.0).validate().is_ok());
    }
}
