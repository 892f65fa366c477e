//! Grid road network: one-way lanes, junctions, and geometry.

use std::collections::BTreeMap;

/// Signal phase of a traffic light.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LightPhase {
    Red,
    Green,
}

impl LightPhase {
    pub fn flipped(self) -> Self {
        match self {
            LightPhase::Red => LightPhase::Green,
            LightPhase::Green => LightPhase::Red,
        }
    }
}

/// One-way lane between two junctions.
#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    pub length: f64,
    pub speed_limit: f64,
    /// Grid coordinates (row, col) of the junction the lane leaves.
    pub from: (usize, usize),
    /// Grid coordinates of the junction the lane enters.
    pub to: (usize, usize),
    /// World coordinates of the lane start.
    pub start: (f64, f64),
    /// World coordinates of the lane end.
    pub end: (f64, f64),
    /// Lanes a vehicle may continue onto after the `to` junction.
    pub successors: Vec<String>,
}

impl Lane {
    /// World coordinates of a position along the lane.
    pub fn xy_at(&self, position: f64) -> (f64, f64) {
        let f = (position / self.length).clamp(0.0, 1.0);
        (
            self.start.0 + (self.end.0 - self.start.0) * f,
            self.start.1 + (self.end.1 - self.start.1) * f,
        )
    }
}

/// Grid intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub id: String,
    pub row: usize,
    pub col: usize,
    pub incoming: Vec<String>,
    /// Traffic light id, present whenever the junction has incoming lanes.
    pub light: Option<String>,
}

/// The static road topology. Rows grow southward, columns eastward; all
/// lanes run one-way east or south, so every route drains toward the
/// south-east corner, which keeps routing loop-free.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    pub lanes: BTreeMap<String, Lane>,
    pub junctions: BTreeMap<String, Junction>,
    /// Lanes on which new vehicles may arrive (west and north edges),
    /// id-sorted.
    pub entry_lanes: Vec<String>,
    /// Junctions per side.
    pub grid: usize,
}

pub fn lane_id_east(row: usize, col: usize) -> String {
    format!("e-{row}-{col}")
}

pub fn lane_id_south(row: usize, col: usize) -> String {
    format!("s-{row}-{col}")
}

pub fn junction_id(row: usize, col: usize) -> String {
    format!("j-{row}-{col}")
}

pub fn light_id(row: usize, col: usize) -> String {
    format!("tl-{row}-{col}")
}

impl RoadNetwork {
    /// Builds a `grid`×`grid` junction lattice with east- and south-bound
    /// lanes of the given length and speed limit.
    pub fn grid(grid: usize, lane_length: f64, speed_limit: f64) -> Self {
        let coord = |row: usize, col: usize| (col as f64 * lane_length, row as f64 * lane_length);
        let mut lanes = BTreeMap::new();
        let mut junctions = BTreeMap::new();

        for row in 0..grid {
            for col in 0..grid {
                junctions.insert(
                    junction_id(row, col),
                    Junction {
                        id: junction_id(row, col),
                        row,
                        col,
                        incoming: Vec::new(),
                        light: None,
                    },
                );
            }
        }

        let outgoing = |row: usize, col: usize| -> Vec<String> {
            let mut out = Vec::new();
            if col + 1 < grid {
                out.push(lane_id_east(row, col));
            }
            if row + 1 < grid {
                out.push(lane_id_south(row, col));
            }
            out
        };

        for row in 0..grid {
            for col in 0..grid.saturating_sub(1) {
                let id = lane_id_east(row, col);
                lanes.insert(
                    id.clone(),
                    Lane {
                        id,
                        length: lane_length,
                        speed_limit,
                        from: (row, col),
                        to: (row, col + 1),
                        start: coord(row, col),
                        end: coord(row, col + 1),
                        successors: outgoing(row, col + 1),
                    },
                );
            }
        }
        for row in 0..grid.saturating_sub(1) {
            for col in 0..grid {
                let id = lane_id_south(row, col);
                lanes.insert(
                    id.clone(),
                    Lane {
                        id,
                        length: lane_length,
                        speed_limit,
                        from: (row, col),
                        to: (row + 1, col),
                        start: coord(row, col),
                        end: coord(row + 1, col),
                        successors: outgoing(row + 1, col),
                    },
                );
            }
        }

        for lane in lanes.values() {
            let j = junctions
                .get_mut(&junction_id(lane.to.0, lane.to.1))
                .expect("lane target junction exists");
            j.incoming.push(lane.id.clone());
        }
        for j in junctions.values_mut() {
            j.incoming.sort();
            if !j.incoming.is_empty() {
                j.light = Some(light_id(j.row, j.col));
            }
        }

        let mut entry_lanes: Vec<String> = lanes
            .values()
            .filter(|l| {
                let (row, col) = l.from;
                (col == 0 && l.id.starts_with("e-")) || (row == 0 && l.id.starts_with("s-"))
            })
            .map(|l| l.id.clone())
            .collect();
        entry_lanes.sort();

        Self { lanes, junctions, entry_lanes, grid }
    }

    /// Checks referential integrity and positivity invariants.
    pub fn validate(&self) -> Result<(), String> {
        for lane in self.lanes.values() {
            if lane.length <= 0.0 {
                return Err(format!("lane {} has non-positive length", lane.id));
            }
            if lane.speed_limit <= 0.0 {
                return Err(format!("lane {} has non-positive speed limit", lane.id));
            }
            for s in &lane.successors {
                if !self.lanes.contains_key(s) {
                    return Err(format!("lane {} successor {s} does not exist", lane.id));
                }
            }
            if !self.junctions.contains_key(&junction_id(lane.to.0, lane.to.1)) {
                return Err(format!("lane {} target junction missing", lane.id));
            }
        }
        for j in self.junctions.values() {
            for l in &j.incoming {
                if !self.lanes.contains_key(l) {
                    return Err(format!("junction {} incoming lane {l} missing", j.id));
                }
            }
        }
        Ok(())
    }

    /// The traffic-light id governing the end of a lane, if any.
    pub fn light_at_lane_end(&self, lane: &Lane) -> Option<&str> {
        self.junctions
            .get(&junction_id(lane.to.0, lane.to.1))
            .and_then(|j| j.light.as_deref())
    }
}
