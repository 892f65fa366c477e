//! Digital Twin Layer: one XML-serializable twin per physical entity,
//! updated from brokered events, queryable by the learner and the CLI.
//!
//! Attribute values are quantized on ingest (coordinates, speeds and
//! periods to 2 decimals, duration rates to 4, timestamps to 3) so that
//! the XML files are stable, diff-friendly, and parse back bit-identical.

mod xml;

pub use xml::{parse_twin, serialize_twin};

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::events::{Event, EventType};

/// Default number of history entries kept per twin.
pub const DEFAULT_HISTORY_BOUND: usize = 1024;

/// Per-type attribute set of one twin state (speeds stored in km/h).
#[derive(Debug, Clone, PartialEq)]
pub enum TwinState {
    Vehicle { x: f64, y: f64, speed_kmh: f64 },
    Sensor { x: f64, y: f64, lane: String, period_s: f64 },
    TrafficLight { x: f64, y: f64, lane: String, duration_rate: f64 },
}

/// One timestamped history entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinEntry {
    pub ts: f64,
    pub state: TwinState,
}

/// Digital replica of one physical entity. History is append-only with
/// strictly increasing timestamps, bounded by evicting the oldest entry;
/// the current attributes are always the last entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinInstance {
    pub entity_id: String,
    pub entity_type: EventType,
    pub history: VecDeque<TwinEntry>,
}

impl TwinInstance {
    /// Latest state; twins never exist without at least one entry.
    pub fn attributes(&self) -> &TwinEntry {
        self.history.back().expect("twins are created with one entry")
    }

    pub fn last_ts(&self) -> f64 {
        self.attributes().ts
    }
}

/// Errors of the twin layer.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TwinError {
    #[error("stale event for {entity_id}: ts {ts} is not after {last}")]
    StaleEvent { entity_id: String, ts: f64, last: f64 },
    #[error("twin {entity_id} has an empty history and cannot be serialized")]
    EmptyHistory { entity_id: String },
    #[error("schema violation at line {line} in <{element}>: {detail}")]
    SchemaViolation { line: usize, element: String, detail: String },
}

/// Query filter; every provided component must match.
#[derive(Debug, Clone, Default)]
pub struct TwinFilter {
    pub entity_type: Option<EventType>,
    pub entity_id: Option<String>,
    /// Matches twins with at least one history entry in `[start, end]`.
    pub time_range: Option<(f64, f64)>,
}

/// All twins of one run, plus where their XML lives.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinRepository {
    twins: BTreeMap<String, TwinInstance>,
    root_dir: PathBuf,
    history_bound: usize,
    stale_dropped: u64,
}

fn q2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn q3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn q4(v: f64) -> f64 {
    (v * 10_000.0).round() / 10_000.0
}

impl TwinRepository {
    pub fn new(root_dir: impl Into<PathBuf>, history_bound: usize) -> Self {
        assert!(history_bound >= 1, "a twin must be able to hold its current state");
        Self {
            twins: BTreeMap::new(),
            root_dir: root_dir.into(),
            history_bound,
            stale_dropped: 0,
        }
    }

    pub fn twins(&self) -> &BTreeMap<String, TwinInstance> {
        &self.twins
    }

    pub fn root_dir(&self) -> &Path {
        &self.root_dir
    }

    pub fn stale_dropped(&self) -> u64 {
        self.stale_dropped
    }

    pub fn get(&self, entity_id: &str) -> Option<&TwinInstance> {
        self.twins.get(entity_id)
    }

    /// Creates or updates the twin for the event's entity. Timestamps must
    /// advance strictly; a stale event leaves the repository unchanged and
    /// is counted.
    pub fn upsert(&mut self, event: &Event) -> Result<(), TwinError> {
        let ts = q3(event.timestamp());
        let state = match event {
            Event::Vehicle { x, y, speed_mps, .. } => TwinState::Vehicle {
                x: q2(*x),
                y: q2(*y),
                speed_kmh: q2(speed_mps * 3.6),
            },
            Event::Sensor { x, y, lane, interval, .. } => TwinState::Sensor {
                x: q2(*x),
                y: q2(*y),
                lane: lane.clone(),
                period_s: q2(interval.end - interval.start),
            },
            Event::TrafficLight { x, y, lane, duration_rate, .. } => TwinState::TrafficLight {
                x: q2(*x),
                y: q2(*y),
                lane: lane.clone(),
                duration_rate: q4(*duration_rate),
            },
        };
        match self.twins.get_mut(event.entity_id()) {
            None => {
                let mut history = VecDeque::with_capacity(8);
                history.push_back(TwinEntry { ts, state });
                self.twins.insert(
                    event.entity_id().to_string(),
                    TwinInstance {
                        entity_id: event.entity_id().to_string(),
                        entity_type: event.event_type(),
                        history,
                    },
                );
                Ok(())
            }
            Some(twin) => {
                debug_assert_eq!(twin.entity_type, event.event_type(), "ids are type-namespaced");
                let last = twin.last_ts();
                if ts <= last {
                    self.stale_dropped += 1;
                    return Err(TwinError::StaleEvent {
                        entity_id: twin.entity_id.clone(),
                        ts,
                        last,
                    });
                }
                twin.history.push_back(TwinEntry { ts, state });
                if twin.history.len() > self.history_bound {
                    twin.history.pop_front();
                }
                Ok(())
            }
        }
    }

    /// All twins matching every provided filter component, id-sorted.
    pub fn query(&self, filter: &TwinFilter) -> Vec<&TwinInstance> {
        self.twins
            .values()
            .filter(|t| filter.entity_type.is_none_or(|ty| t.entity_type == ty))
            .filter(|t| filter.entity_id.as_deref().is_none_or(|id| t.entity_id == id))
            .filter(|t| {
                filter.time_range.is_none_or(|(start, end)| {
                    t.history.iter().any(|e| e.ts >= start && e.ts <= end)
                })
            })
            .collect()
    }

    /// Writes every twin to `<root_dir>/<type>_<id>.xml`. After a flush
    /// the files parse back to exactly the in-memory instances.
    pub fn flush(&self) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.root_dir)?;
        for twin in self.twins.values() {
            let xml = serialize_twin(twin).map_err(std::io::Error::other)?;
            let path = self.root_dir.join(format!("{}_{}.xml", twin.entity_type, twin.entity_id));
            let mut file = std::fs::File::create(path)?;
            file.write_all(xml.as_bytes())?;
        }
        Ok(())
    }
}
