//! Vehicle state and the car-following update rule.

use super::network::LightPhase;

/// A vehicle progressing along a fixed route of lanes.
#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: String,
    /// Current lane id (`route[route_idx]`).
    pub lane: String,
    /// Meters from the lane start.
    pub position: f64,
    /// Meters per second.
    pub speed: f64,
    /// Ordered lane ids from entry to exit.
    pub route: Vec<String>,
    pub route_idx: usize,
    /// Simulation time at which the vehicle entered the world.
    pub spawn_time: f64,
}

impl Vehicle {
    /// The lane after the current one, if the route continues.
    pub fn next_lane(&self) -> Option<&str> {
        self.route.get(self.route_idx + 1).map(String::as_str)
    }
}

/// Leader observation: bumper gap in meters and the leader's speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub gap: f64,
    pub speed: f64,
}

/// Traffic light observation at the end of the current lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightAhead {
    pub distance: f64,
    pub phase: LightPhase,
}

/// One car-following step (simplified Krauss rule).
///
/// The new speed is the least of: accelerating by `accel·dt`, the lane
/// `limit`, the speed that keeps `min_gap` behind the leader's observed
/// position, and (at a red light) the speed that stops at the signal —
/// clamped to `[0, limit]`. The position advances by `new_speed·dt`; it may
/// overshoot the lane end, which the world resolves as a lane handoff.
pub fn update_vehicle(
    v: &Vehicle,
    leader: Option<Leader>,
    light_ahead: Option<LightAhead>,
    limit: f64,
    accel: f64,
    min_gap: f64,
    dt: f64,
) -> Vehicle {
    debug_assert!(dt > 0.0);
    let mut speed = (v.speed + accel * dt).min(limit);
    if let Some(l) = leader {
        // Conservative: ignores leader motion, so a follower never ends a
        // step closer than `min_gap` to the leader's old position.
        speed = speed.min((l.gap - min_gap) / dt);
    }
    if let Some(light) = light_ahead {
        if light.phase == LightPhase::Red {
            speed = speed.min(light.distance / dt);
        }
    }
    let speed = speed.clamp(0.0, limit);
    Vehicle { position: v.position + speed * dt, speed, ..v.clone() }
}
