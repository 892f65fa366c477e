//! Microscopic road-traffic simulation: a one-way grid network, car
//! following with signalized junctions, roadside sensors, and seeded
//! Poisson arrivals.
//!
//! The world is stepped in fixed `dt` ticks and is fully deterministic for
//! a given `(config, seed, command sequence)`. Event collection
//! ([`World::emit_events`]) is a pure read over the current state, so the
//! pipeline layer decides when and how often to harvest.

mod network;
mod vehicle;
mod world;

pub use network::{Junction, Lane, LightPhase, RoadNetwork};
pub use vehicle::{update_vehicle, Leader, LightAhead, Vehicle};
pub use world::{build_network, IoTSensor, TrafficLight, World};

use serde::{Deserialize, Serialize};

/// Scenario parameters. Everything that shapes the physics or the event
/// cadence lives here so experiments can vary them without recompiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Junctions per side of the square grid.
    pub grid: usize,
    /// Lane length in metres.
    pub lane_length: f64,
    /// Initial speed limit on every lane, m/s.
    pub speed_limit: f64,
    /// Maximum acceleration, m/s².
    pub accel: f64,
    /// Minimum bumper-to-bumper spacing, metres.
    pub min_gap: f64,
    /// Step length in seconds.
    pub dt: f64,
    /// Number of roadside sensors to deploy.
    pub sensors: usize,
    /// Initial sensor sampling period, seconds.
    pub sensor_period: f64,
    /// Period between position reports of a single vehicle, seconds.
    pub vehicle_report_period: f64,
    /// Initial green phase duration, seconds.
    pub green_duration: f64,
    /// Initial red phase duration, seconds.
    pub red_duration: f64,
    /// Mean arrivals per second on each entry lane.
    pub spawn_rate: f64,
    /// RNG seed for arrivals and route choices.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grid: 3,
            lane_length: 100.0,
            speed_limit: 13.89,
            accel: 2.0,
            min_gap: 2.0,
            dt: 0.5,
            sensors: 5,
            sensor_period: 15.0,
            vehicle_report_period: 10.0,
            green_duration: 30.0,
            red_duration: 30.0,
            spawn_rate: 0.08,
            seed: 42,
        }
    }
}

impl SimConfig {
    /// Rejects configurations the world cannot honour.
    pub fn validate(&self) -> Result<(), SimError> {
        fn positive(field: &'static str, value: f64) -> Result<(), SimError> {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(SimError::InvalidConfig {
                    field,
                    detail: format!("must be positive and finite, got {value}"),
                })
            }
        }
        if self.grid < 2 {
            return Err(SimError::InvalidConfig {
                field: "grid",
                detail: format!("needs at least 2 junctions per side, got {}", self.grid),
            });
        }
        if self.sensors == 0 {
            return Err(SimError::InvalidConfig {
                field: "sensors",
                detail: "the scenario needs at least one roadside sensor".into(),
            });
        }
        positive("lane_length", self.lane_length)?;
        positive("speed_limit", self.speed_limit)?;
        positive("accel", self.accel)?;
        positive("dt", self.dt)?;
        positive("sensor_period", self.sensor_period)?;
        positive("vehicle_report_period", self.vehicle_report_period)?;
        positive("green_duration", self.green_duration)?;
        positive("red_duration", self.red_duration)?;
        if !(self.min_gap >= 0.0 && self.min_gap.is_finite()) {
            return Err(SimError::InvalidConfig {
                field: "min_gap",
                detail: format!("must be non-negative and finite, got {}", self.min_gap),
            });
        }
        if !(self.spawn_rate >= 0.0 && self.spawn_rate.is_finite()) {
            return Err(SimError::InvalidConfig {
                field: "spawn_rate",
                detail: format!("must be non-negative and finite, got {}", self.spawn_rate),
            });
        }
        if self.min_gap >= self.lane_length {
            return Err(SimError::InvalidConfig {
                field: "min_gap",
                detail: "minimum gap must be smaller than a lane".into(),
            });
        }
        Ok(())
    }
}

/// Errors from configuration or feedback application.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("invalid config: {field}: {detail}")]
    InvalidConfig { field: &'static str, detail: String },
    #[error("unknown {kind} {id:?}")]
    UnknownEntity { kind: &'static str, id: String },
}

/// The entities a flow decision should act on, with their current
/// settings. Produced by [`World::flow_targets`], consumed by the broker
/// when it turns queue densities into feedback commands.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTargets {
    pub lane: String,
    pub lane_limit: f64,
    pub light: String,
    pub green_s: f64,
    pub red_s: f64,
    pub sensor: String,
    pub sensor_period: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_configs_name_the_field() {
        let bad = SimConfig { dt: 0.0, ..SimConfig::default() };
        match bad.validate().unwrap_err() {
            SimError::InvalidConfig { field, .. } => assert_eq!(field, "dt"),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(SimConfig { grid: 1, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { spawn_rate: -1.0, ..SimConfig::default() }.validate().is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = SimConfig { sensors: 20, seed: 9, ..SimConfig::default() };
        let json = serde_json::to_string(&cfg).unwrap();
        let back: SimConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
        // Partial configs fall back to defaults field by field.
        let sparse: SimConfig = serde_json::from_str(r#"{"sensors": 90}"#).unwrap();
        assert_eq!(sparse.sensors, 90);
        assert_eq!(sparse.grid, 3);
    }
}
