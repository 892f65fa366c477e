//! Event and feedback-command records exchanged between the physical and
//! digital sides of the pipeline.
//!
//! Three event classes cover the transport-network entities: `E1` vehicle
//! reports, `E2` roadside IoT sensor readings, and `E3` traffic-light phase
//! reports. Each class carries exactly its own attribute set; the payloads
//! are serialized as canonical JSON (sorted keys, no insignificant
//! whitespace) when they cross the wire.

use serde::{Deserialize, Serialize};

/// Discriminates the three event classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventType {
    E1,
    E2,
    E3,
}

impl EventType {
    pub const ALL: [EventType; 3] = [EventType::E1, EventType::E2, EventType::E3];

    /// Zero-based queue index used by the broker.
    pub fn index(self) -> usize {
        match self {
            EventType::E1 => 0,
            EventType::E2 => 1,
            EventType::E3 => 2,
        }
    }
}

impl std::fmt::Display for EventType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EventType::E1 => write!(f, "E1"),
            EventType::E2 => write!(f, "E2"),
            EventType::E3 => write!(f, "E3"),
        }
    }
}

/// Closed time span `(t_start, t_end)` in simulation seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval {
    pub start: f64,
    pub end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Self {
        debug_assert!(start <= end, "interval start must not exceed end");
        Self { start, end }
    }
}

/// One observation flowing through the pipeline.
///
/// The variant fixes which attributes are present:
/// - `Vehicle` (E1): id, location, speed in m/s, reporting interval.
/// - `Sensor` (E2): id, location, lane, sampling interval.
/// - `TrafficLight` (E3): id, location, lane, green/(green+red) duration
///   rate, phase interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Event {
    #[serde(rename = "E1")]
    Vehicle {
        entity_id: String,
        x: f64,
        y: f64,
        speed_mps: f64,
        interval: TimeInterval,
    },
    #[serde(rename = "E2")]
    Sensor {
        entity_id: String,
        x: f64,
        y: f64,
        lane: String,
        interval: TimeInterval,
    },
    #[serde(rename = "E3")]
    TrafficLight {
        entity_id: String,
        x: f64,
        y: f64,
        lane: String,
        duration_rate: f64,
        interval: TimeInterval,
    },
}

impl Event {
    pub fn event_type(&self) -> EventType {
        match self {
            Event::Vehicle { .. } => EventType::E1,
            Event::Sensor { .. } => EventType::E2,
            Event::TrafficLight { .. } => EventType::E3,
        }
    }

    pub fn entity_id(&self) -> &str {
        match self {
            Event::Vehicle { entity_id, .. }
            | Event::Sensor { entity_id, .. }
            | Event::TrafficLight { entity_id, .. } => entity_id,
        }
    }

    pub fn interval(&self) -> TimeInterval {
        match self {
            Event::Vehicle { interval, .. }
            | Event::Sensor { interval, .. }
            | Event::TrafficLight { interval, .. } => *interval,
        }
    }

    /// Report instant: the end of the event's own interval.
    pub fn timestamp(&self) -> f64 {
        self.interval().end
    }

    pub fn location(&self) -> (f64, f64) {
        match self {
            Event::Vehicle { x, y, .. }
            | Event::Sensor { x, y, .. }
            | Event::TrafficLight { x, y, .. } => (*x, *y),
        }
    }
}

/// Bounds for the continuous action dimensions, shared by feedback
/// validation and the learner's action space.
pub mod bounds {
    /// Lane speed limit in m/s.
    pub const SPEED_LIMIT: (f64, f64) = (5.0, 13.89);
    /// Green fraction of a signal cycle.
    pub const GREEN_RATIO: (f64, f64) = (0.2, 0.8);
    /// Sensor sampling period in seconds.
    pub const SAMPLING_PERIOD: (f64, f64) = (1.0, 30.0);
}

/// Configuration change pushed back to the physical layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FeedbackCommand {
    SetSpeedLimit { lane: String, limit_mps: f64 },
    SetSignalTiming { light: String, green_s: f64, red_s: f64 },
    SetSensorSampling { sensor: String, period_s: f64 },
}

impl FeedbackCommand {
    /// Checks every magnitude against the declared action bounds.
    pub fn validate(&self) -> Result<(), InvalidCommand> {
        fn check(name: &'static str, v: f64, (lo, hi): (f64, f64)) -> Result<(), InvalidCommand> {
            if v.is_finite() && v >= lo && v <= hi {
                Ok(())
            } else {
                Err(InvalidCommand { field: name, value: v, lo, hi })
            }
        }
        match self {
            FeedbackCommand::SetSpeedLimit { limit_mps, .. } => {
                check("limit_mps", *limit_mps, bounds::SPEED_LIMIT)
            }
            FeedbackCommand::SetSignalTiming { green_s, red_s, .. } => {
                if !(green_s.is_finite() && red_s.is_finite()) || *green_s <= 0.0 || *red_s <= 0.0 {
                    return Err(InvalidCommand {
                        field: "signal_durations",
                        value: green_s.min(*red_s),
                        lo: 0.0,
                        hi: f64::INFINITY,
                    });
                }
                let ratio = green_s / (green_s + red_s);
                check("green_ratio", ratio, bounds::GREEN_RATIO)
            }
            FeedbackCommand::SetSensorSampling { period_s, .. } => {
                check("period_s", *period_s, bounds::SAMPLING_PERIOD)
            }
        }
    }
}

/// A command magnitude fell outside its action-space bounds.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{field} = {value} outside [{lo}, {hi}]")]
pub struct InvalidCommand {
    pub field: &'static str,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Canonical JSON encoding: object keys sorted, no insignificant whitespace.
///
/// Used for every record that crosses the wire so frames are
/// byte-reproducible.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    // Round-tripping through Value sorts the keys (the map is a BTreeMap).
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_vec(&v)?)
}
