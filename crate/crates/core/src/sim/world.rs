//! The live simulation world: vehicles, sensors, lights, and stepping.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::network::{LightPhase, RoadNetwork};
use super::vehicle::{update_vehicle, Leader, LightAhead, Vehicle};
use super::{FlowTargets, SimConfig, SimError};
use crate::events::{Event, TimeInterval};
use crate::exec;

/// Roadside IoT sensor. Reports are due at `anchor + k·sampling_period`
/// for k ≥ 1; the anchor survives period changes, keeping the fleet's
/// report phases spread instead of re-synchronizing on command times.
#[derive(Debug, Clone, PartialEq)]
pub struct IoTSensor {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub lane: String,
    pub sampling_period: f64,
    pub anchor: f64,
}

/// Signalized junction control. One light governs all incoming lanes of
/// its junction; `lane` names the primary (first id-sorted) approach for
/// reporting purposes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficLight {
    pub id: String,
    pub junction: String,
    pub lane: String,
    pub green_duration: f64,
    pub red_duration: f64,
    pub phase: LightPhase,
    /// Sim time at which the current phase began.
    pub phase_started: f64,
    /// Interval of the most recently completed phase.
    pub last_completion: Option<TimeInterval>,
}

impl TrafficLight {
    /// Green share of the full cycle.
    pub fn duration_rate(&self) -> f64 {
        self.green_duration / (self.green_duration + self.red_duration)
    }

    fn active_duration(&self) -> f64 {
        match self.phase {
            LightPhase::Green => self.green_duration,
            LightPhase::Red => self.red_duration,
        }
    }
}

/// Full mutable simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    config: SimConfig,
    network: RoadNetwork,
    vehicles: BTreeMap<String, Vehicle>,
    sensors: BTreeMap<String, IoTSensor>,
    lights: BTreeMap<String, TrafficLight>,
    time: f64,
    rng: ChaCha8Rng,
    veh_seq: u64,
    spawned: u64,
    retired: u64,
    dropped_arrivals: u64,
}

/// Builds a deterministic world from the validated config: the grid
/// network, sensors placed round-robin over id-sorted lanes at their
/// midpoints, lights on every junction with incoming traffic, and an empty
/// road (vehicles arrive over time through the seeded Poisson process).
pub fn build_network(config: &SimConfig) -> Result<World, SimError> {
    config.validate()?;
    let network = RoadNetwork::grid(config.grid, config.lane_length, config.speed_limit);
    network
        .validate()
        .map_err(|detail| SimError::InvalidConfig { field: "network", detail })?;

    let lane_ids: Vec<&String> = network.lanes.keys().collect();
    let mut sensors = BTreeMap::new();
    for j in 0..config.sensors {
        let lane = &network.lanes[lane_ids[j % lane_ids.len()]];
        let (x, y) = lane.xy_at(lane.length / 2.0);
        let id = format!("sen-{j:03}");
        sensors.insert(
            id.clone(),
            IoTSensor {
                id,
                x,
                y,
                lane: lane.id.clone(),
                sampling_period: config.sensor_period,
                // Staggered so reports spread over the period instead of
                // arriving in one burst.
                anchor: j as f64 * config.sensor_period / config.sensors as f64,
            },
        );
    }

    let mut lights = BTreeMap::new();
    let lit: Vec<_> = network.junctions.values().filter(|j| j.light.is_some()).collect();
    let total = lit.len().max(1) as f64;
    for (idx, j) in lit.into_iter().enumerate() {
        let light_id = j.light.as_ref().expect("filtered on light presence");
        // Checkerboard start so neighbouring junctions alternate.
        let phase = if (j.row + j.col) % 2 == 0 { LightPhase::Green } else { LightPhase::Red };
        let active = match phase {
            LightPhase::Green => config.green_duration,
            LightPhase::Red => config.red_duration,
        };
        lights.insert(
            light_id.clone(),
            TrafficLight {
                id: light_id.clone(),
                junction: j.id.clone(),
                lane: j.incoming[0].clone(),
                green_duration: config.green_duration,
                red_duration: config.red_duration,
                phase,
                // Each light is already part-way through its first phase,
                // so completions spread over the cycle instead of the
                // whole grid switching on the same tick.
                phase_started: -(active * idx as f64 / total),
                last_completion: None,
            },
        );
    }

    Ok(World {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        config: config.clone(),
        network,
        vehicles: BTreeMap::new(),
        sensors,
        lights,
        time: 0.0,
        veh_seq: 0,
        spawned: 0,
        retired: 0,
        dropped_arrivals: 0,
    })
}

impl World {
    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.network
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn vehicles(&self) -> &BTreeMap<String, Vehicle> {
        &self.vehicles
    }

    pub fn sensors(&self) -> &BTreeMap<String, IoTSensor> {
        &self.sensors
    }

    pub fn lights(&self) -> &BTreeMap<String, TrafficLight> {
        &self.lights
    }

    pub fn spawned(&self) -> u64 {
        self.spawned
    }

    pub fn retired(&self) -> u64 {
        self.retired
    }

    pub fn dropped_arrivals(&self) -> u64 {
        self.dropped_arrivals
    }

    /// Advances the world by one `config.dt` tick: lights first, then all
    /// vehicle moves planned from a snapshot (in parallel when enabled),
    /// then id-ordered commits with lane-handoff arbitration, then Poisson
    /// arrivals on the entry lanes.
    pub fn step(&mut self) {
        let dt = self.config.dt;
        let t1 = self.time + dt;

        self.advance_lights(t1);

        // Per-lane occupancy from the pre-step snapshot, position-sorted.
        let mut occupancy: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for v in self.vehicles.values() {
            occupancy.entry(v.lane.as_str()).or_default().push((v.position, v.speed));
        }
        for column in occupancy.values_mut() {
            column.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("positions are finite"));
        }

        // Phase A: plan every move against the snapshot. Pure per vehicle,
        // so order of evaluation cannot matter.
        let cfg = &self.config;
        let network = &self.network;
        let lights = &self.lights;
        let snapshot: Vec<&Vehicle> = self.vehicles.values().collect();
        let planned: Vec<Vehicle> = exec::map_ordered(&snapshot, |v| {
            let lane = &network.lanes[&v.lane];
            let leader = occupancy[v.lane.as_str()]
                .iter()
                .find(|(pos, _)| *pos > v.position)
                .map(|(pos, speed)| Leader { gap: pos - v.position, speed: *speed });
            let light_ahead = network.light_at_lane_end(lane).map(|id| LightAhead {
                distance: lane.length - v.position,
                phase: lights[id].phase,
            });
            update_vehicle(v, leader, light_ahead, lane.speed_limit, cfg.accel, cfg.min_gap, dt)
        });

        // Phase B: id-ordered commit. Same-lane moves cannot conflict (the
        // safe-speed rule is conservative against snapshot positions); only
        // lane entries need arbitration, against both snapshot occupants
        // and earlier entrants.
        let mut committed: BTreeMap<String, Vehicle> = BTreeMap::new();
        let mut entrants: BTreeMap<String, f64> = BTreeMap::new();
        for mut plan in planned {
            let lane_len = self.network.lanes[&plan.lane].length;
            if plan.position <= lane_len {
                committed.insert(plan.id.clone(), plan);
                continue;
            }
            let overshoot = plan.position - lane_len;
            match plan.next_lane().map(str::to_owned) {
                None => {
                    // Route complete; the junction light was already
                    // honoured in phase A, so the exit is legal.
                    self.retired += 1;
                }
                Some(next) => {
                    let snapshot_rear =
                        occupancy.get(next.as_str()).and_then(|c| c.first()).map(|(p, _)| *p);
                    let entrant_rear = entrants.get(&next).copied();
                    let rear = match (snapshot_rear, entrant_rear) {
                        (Some(a), Some(b)) => Some(a.min(b)),
                        (a, b) => a.or(b),
                    };
                    let fits = rear.map_or(true, |r| overshoot <= r - self.config.min_gap);
                    if fits {
                        entrants
                            .entry(next.clone())
                            .and_modify(|r| *r = r.min(overshoot))
                            .or_insert(overshoot);
                        plan.position = overshoot;
                        plan.route_idx += 1;
                        // Brake to the new lane's limit on entry so reports
                        // never show a speed above the lane the vehicle is
                        // on.
                        plan.speed = plan.speed.min(self.network.lanes[&next].speed_limit);
                        plan.lane = next;
                        committed.insert(plan.id.clone(), plan);
                    } else {
                        // Blocked entry: hold at the end of the current
                        // lane.
                        plan.position = lane_len;
                        plan.speed = 0.0;
                        committed.insert(plan.id.clone(), plan);
                    }
                }
            }
        }
        self.vehicles = committed;

        self.spawn_arrivals(t1);
        self.time = t1;
    }

    fn advance_lights(&mut self, t1: f64) {
        for light in self.lights.values_mut() {
            loop {
                let active = light.active_duration();
                if t1 - light.phase_started < active {
                    break;
                }
                let end = light.phase_started + active;
                light.last_completion = Some(TimeInterval::new(light.phase_started, end));
                light.phase = light.phase.flipped();
                light.phase_started = end;
            }
        }
    }

    fn spawn_arrivals(&mut self, now: f64) {
        if self.config.spawn_rate <= 0.0 {
            return;
        }
        let poisson = Poisson::new(self.config.spawn_rate * self.config.dt)
            .expect("validated spawn rate");
        let entry_lanes = self.network.entry_lanes.clone();
        for lane_id in entry_lanes {
            let arrivals = poisson.sample(&mut self.rng) as u64;
            for _ in 0..arrivals {
                let rear = self
                    .vehicles
                    .values()
                    .filter(|v| v.lane == lane_id)
                    .map(|v| v.position)
                    .fold(f64::INFINITY, f64::min);
                if rear < self.config.min_gap {
                    self.dropped_arrivals += 1;
                    continue;
                }
                self.veh_seq += 1;
                let id = format!("veh-{:06}", self.veh_seq);
                let route = self.sample_route(&lane_id);
                let speed = self.network.lanes[&lane_id].speed_limit;
                self.vehicles.insert(
                    id.clone(),
                    Vehicle {
                        id,
                        lane: lane_id.clone(),
                        position: 0.0,
                        speed,
                        route,
                        route_idx: 0,
                        spawn_time: now,
                    },
                );
                self.spawned += 1;
            }
        }
    }

    fn sample_route(&mut self, entry: &str) -> Vec<String> {
        let mut route = vec![entry.to_string()];
        loop {
            let successors = &self.network.lanes[route.last().expect("route nonempty")].successors;
            let next = match successors.len() {
                0 => break,
                1 => successors[0].clone(),
                _ => {
                    let pick = usize::from(!self.rng.random_bool(0.5));
                    successors[pick].clone()
                }
            };
            route.push(next);
        }
        route
    }

    /// Collects the events due in `window` (half-open `(start, end]`):
    /// one E1 per vehicle whose report time falls inside, one E2 per sensor
    /// whose sampling period elapsed inside (the latest such report), one
    /// E3 per light whose phase completed inside. Ordered E1 → E2 → E3,
    /// id-sorted within each class. Pure read; the same window always
    /// yields the same events.
    pub fn emit_events(&self, window: TimeInterval) -> Vec<Event> {
        const EPS: f64 = 1e-9;
        let mut out = Vec::new();

        let period = self.config.vehicle_report_period;
        for v in self.vehicles.values() {
            // Reports at spawn_time + k·period, k ≥ 0 (the spawn itself
            // reports), so a window as long as the period contains exactly
            // one report per vehicle.
            let k = ((window.end - v.spawn_time) / period + EPS).floor();
            if k < 0.0 {
                continue;
            }
            let due = v.spawn_time + k * period;
            if due > window.start && due <= window.end + EPS {
                let lane = &self.network.lanes[&v.lane];
                let (x, y) = lane.xy_at(v.position);
                out.push(Event::Vehicle {
                    entity_id: v.id.clone(),
                    x,
                    y,
                    speed_mps: v.speed,
                    interval: TimeInterval::new((due - period).max(v.spawn_time), due),
                });
            }
        }

        for s in self.sensors.values() {
            let k = ((window.end - s.anchor) / s.sampling_period + EPS).floor();
            if k < 1.0 {
                continue;
            }
            let due = s.anchor + k * s.sampling_period;
            if due > window.start && due <= window.end + EPS {
                out.push(Event::Sensor {
                    entity_id: s.id.clone(),
                    x: s.x,
                    y: s.y,
                    lane: s.lane.clone(),
                    interval: TimeInterval::new(due - s.sampling_period, due),
                });
            }
        }

        for light in self.lights.values() {
            let Some(completed) = light.last_completion else { continue };
            if completed.end > window.start && completed.end <= window.end + EPS {
                let lane = &self.network.lanes[&light.lane];
                let (x, y) = lane.end;
                out.push(Event::TrafficLight {
                    entity_id: light.id.clone(),
                    x,
                    y,
                    lane: light.lane.clone(),
                    duration_rate: light.duration_rate(),
                    interval: completed,
                });
            }
        }
        out
    }

    /// Applies one feedback command; the change takes effect from the next
    /// step. Only the named configuration is touched.
    pub fn apply_command(&mut self, cmd: &crate::events::FeedbackCommand) -> Result<(), SimError> {
        use crate::events::FeedbackCommand as Cmd;
        match cmd {
            Cmd::SetSpeedLimit { lane, limit_mps } => {
                let lane = self.network.lanes.get_mut(lane).ok_or_else(|| {
                    SimError::UnknownEntity { kind: "lane", id: lane.clone() }
                })?;
                lane.speed_limit = *limit_mps;
            }
            Cmd::SetSignalTiming { light, green_s, red_s } => {
                let light = self.lights.get_mut(light).ok_or_else(|| {
                    SimError::UnknownEntity { kind: "traffic light", id: light.clone() }
                })?;
                light.green_duration = *green_s;
                light.red_duration = *red_s;
            }
            Cmd::SetSensorSampling { sensor, period_s } => {
                let sensor = self.sensors.get_mut(sensor).ok_or_else(|| {
                    SimError::UnknownEntity { kind: "sensor", id: sensor.clone() }
                })?;
                sensor.sampling_period = *period_s;
            }
        }
        Ok(())
    }

    /// Share of unattained speed, averaged over vehicles: 0 when everyone
    /// drives at their lane limit, 1 when everyone is stopped, 0 for an
    /// empty road.
    pub fn congestion_index(&self) -> f64 {
        if self.vehicles.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .vehicles
            .values()
            .map(|v| {
                let limit = self.network.lanes[&v.lane].speed_limit;
                1.0 - (v.speed / limit).clamp(0.0, 1.0)
            })
            .sum();
        (total / self.vehicles.len() as f64).clamp(0.0, 1.0)
    }

    /// Entities a feedback command should target right now: the most
    /// congested lane (highest summed speed deficit, ties to the smaller
    /// id), the light at that lane's end, and a sensor on that lane —
    /// with their current settings, so the broker can scale them.
    pub fn flow_targets(&self) -> FlowTargets {
        let mut deficits: BTreeMap<&str, f64> = BTreeMap::new();
        for v in self.vehicles.values() {
            let limit = self.network.lanes[&v.lane].speed_limit;
            *deficits.entry(v.lane.as_str()).or_insert(0.0) +=
                1.0 - (v.speed / limit).clamp(0.0, 1.0);
        }
        let lane_id = deficits
            .iter()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite").then(b.0.cmp(a.0)))
            .map(|(id, _)| id.to_string())
            .unwrap_or_else(|| self.network.lanes.keys().next().expect("lanes exist").clone());
        let lane = &self.network.lanes[&lane_id];

        let light_id = self
            .network
            .light_at_lane_end(lane)
            .map(str::to_owned)
            .or_else(|| self.lights.keys().next().cloned())
            .expect("grid ≥ 2 always has lights");
        let light = &self.lights[&light_id];

        let sensor = self
            .sensors
            .values()
            .find(|s| s.lane == lane_id)
            .or_else(|| self.sensors.values().next())
            .expect("config guarantees at least one sensor");

        FlowTargets {
            lane: lane_id.clone(),
            lane_limit: lane.speed_limit,
            light: light_id,
            green_s: light.green_duration,
            red_s: light.red_duration,
            sensor: sensor.id.clone(),
            sensor_period: sensor.sampling_period,
        }
    }

    #[cfg(test)]
    pub(crate) fn inject_vehicle(&mut self, id: &str, lane: &str, position: f64, speed: f64) {
        let route = vec![lane.to_string()];
        self.vehicles.insert(
            id.to_string(),
            Vehicle {
                id: id.to_string(),
                lane: lane.to_string(),
                position,
                speed,
                route,
                route_idx: 0,
                spawn_time: self.time,
            },
        );
        self.spawned += 1;
    }
}
