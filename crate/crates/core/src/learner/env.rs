//! Training environments. `TwinEnv` closes the loop the learner is built
//! for: actions become validated feedback commands, travel through the
//! reactor and the wire codec into the simulator, and the next state is
//! read back out of broker densities and twin instances — never from
//! simulator internals directly.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::events::{bounds, EventType, FeedbackCommand, TimeInterval};
use crate::pipeline::{reactor_apply, BrokerState, DensityReport, PipelineConfig, Thresholds};
use crate::sim::{build_network, SimConfig, SimError, World};
use crate::twin::{TwinError, TwinFilter, TwinRepository, TwinState, DEFAULT_HISTORY_BOUND};
use crate::wire::{DecodeOutcome, FrameCodec, Message};

use super::{Action, State};

/// Anything the trainer can interact with: deterministic given the episode
/// index and the action sequence.
pub trait Environment {
    /// Starts episode `episode` and returns its initial state.
    fn reset(&mut self, episode: usize) -> State;

    /// Applies one action over one control window; returns the next state
    /// and the reward earned during that window.
    fn step(&mut self, action: &Action) -> (State, f64);
}

/// Weights of the two cost terms in the reward. The reward has no ground
/// truth — it is a modeling choice — so its scale is a free unit; these
/// weights make that unit explicit and configurable. Larger weights widen
/// the critic's value range without touching the state features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    /// Weight on the congestion index of the window.
    pub congestion: f64,
    /// Weight on queue-overflow drops per unit capacity.
    pub overflow: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { congestion: 1.0, overflow: 0.1 }
    }
}

/// Learner-facing wrapper around the simulator, broker, and twin store.
///
/// Each step spans one broker window: the action is split into one speed
/// command, one signal command, and one sampling command for the entities
/// the current flow targets point at, every emitted event is brokered into
/// twins, and the resulting densities plus twin-derived traffic statistics
/// become the next state. Flow thresholds are pinned to 1.0 so the learner
/// is the only controller during training.
#[derive(Debug)]
pub struct TwinEnv {
    sim_config: SimConfig,
    pipeline_config: PipelineConfig,
    world: World,
    broker: BrokerState,
    repo: TwinRepository,
    codec: FrameCodec,
    weights: RewardWeights,
    overflow_seen: u64,
    commands_applied: u64,
}

impl TwinEnv {
    pub fn new(sim_config: SimConfig, pipeline_config: PipelineConfig) -> Result<Self, SimError> {
        sim_config.validate()?;
        let mut pipeline_config = pipeline_config;
        // A rho threshold below 1.0 would let the broker issue its own
        // feedback; during training the policy owns every command.
        pipeline_config.thresholds = Thresholds::uniform(1.0);
        pipeline_config
            .validate()
            .map_err(|detail| SimError::InvalidConfig { field: "pipeline", detail })?;
        let world = build_network(&sim_config)?;
        let broker = BrokerState::new(&pipeline_config);
        Ok(Self {
            repo: TwinRepository::new(PathBuf::from("twins/training"), DEFAULT_HISTORY_BOUND),
            sim_config,
            pipeline_config,
            world,
            broker,
            codec: FrameCodec::default(),
            weights: RewardWeights::default(),
            overflow_seen: 0,
            commands_applied: 0,
        })
    }

    /// Replaces the reward weights (builder style).
    pub fn with_reward_weights(mut self, weights: RewardWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn repository(&self) -> &TwinRepository {
        &self.repo
    }

    /// Total feedback commands applied across all steps of all episodes.
    pub fn commands_applied(&self) -> u64 {
        self.commands_applied
    }

    fn window_steps(&self) -> usize {
        (self.pipeline_config.window_s / self.sim_config.dt).round().max(1.0) as usize
    }

    /// Advances one full window: steps the world, harvests each step's
    /// events into the broker, then closes the window and drains the
    /// queues into the twin repository.
    fn advance_window(&mut self) -> (DensityReport, u64) {
        for _ in 0..self.window_steps() {
            self.world.step();
            let end = self.world.time();
            let span = TimeInterval { start: end - self.sim_config.dt, end };
            for event in self.world.emit_events(span) {
                self.broker.enqueue(event, end);
            }
        }
        let drops = self.broker.overflow_dropped() - self.overflow_seen;
        self.overflow_seen = self.broker.overflow_dropped();
        let report = self.broker.close_window(self.world.time());
        for event in self.broker.drain() {
            // Per-step sampling commands re-grid sensor report times, and
            // two grids can produce reports within the same store-quantized
            // millisecond. The twin keeps the earlier report.
            match self.repo.upsert(&event) {
                Ok(()) | Err(TwinError::StaleEvent { .. }) => {}
                Err(other) => panic!("twin upsert failed: {other}"),
            }
        }
        (report, drops)
    }

    /// State: the three window densities, the congestion index, and the
    /// mean vehicle speed (normalized by the configured limit) read from
    /// the vehicle twins updated inside the window. No vehicles means free
    /// flow: congestion 0, normalized speed 1.
    fn observe(&self, report: &DensityReport) -> State {
        let filter = TwinFilter {
            entity_type: Some(EventType::E1),
            entity_id: None,
            time_range: Some((report.window.start, report.window.end)),
        };
        let twins = self.repo.query(&filter);
        let mut speed_sum = 0.0;
        let mut count = 0u32;
        for twin in &twins {
            if let TwinState::Vehicle { speed_kmh, .. } = &twin.attributes().state {
                speed_sum += *speed_kmh / 3.6;
                count += 1;
            }
        }
        let norm_speed = if count == 0 {
            1.0
        } else {
            (speed_sum / f64::from(count) / self.sim_config.speed_limit).clamp(0.0, 1.0)
        };
        let congestion = if count == 0 { 0.0 } else { self.world.congestion_index() };
        State([
            report.rho(EventType::E1),
            report.rho(EventType::E2),
            report.rho(EventType::E3),
            congestion.clamp(0.0, 1.0),
            norm_speed,
        ])
    }

    fn apply(&mut self, command: FeedbackCommand) {
        let message = reactor_apply(&command).expect("bounded actions validate");
        let bytes = self.codec.encode(&message).expect("feedback frames encode");
        match self.codec.decode(&bytes).expect("own frames decode") {
            DecodeOutcome::Frame { message: Message::Feedback(decoded), .. } => {
                self.world.apply_command(&decoded).expect("flow targets name live entities");
            }
            _ => unreachable!("a feedback message decodes to a feedback frame"),
        }
        self.commands_applied += 1;
    }
}

impl Environment for TwinEnv {
    fn reset(&mut self, _episode: usize) -> State {
        // Every episode replays the one scenario the seed names: the world
        // is rebuilt from the scenario seed, so the only cross-episode
        // variation is the policy itself. Distinct training runs vary the
        // scenario by varying the seed.
        self.world = build_network(&self.sim_config).expect("config validated at construction");
        self.broker = BrokerState::new(&self.pipeline_config);
        self.repo = TwinRepository::new(self.repo.root_dir().to_path_buf(), DEFAULT_HISTORY_BOUND);
        self.overflow_seen = 0;
        let (report, _) = self.advance_window();
        self.observe(&report)
    }

    fn step(&mut self, action: &Action) -> (State, f64) {
        assert!(action.in_bounds(), "policy action escaped its bounds: {action:?}");
        let targets = self.world.flow_targets();
        let cycle = targets.green_s + targets.red_s;
        self.apply(FeedbackCommand::SetSpeedLimit {
            lane: targets.lane.clone(),
            limit_mps: action.0[0],
        });
        // The green share moves; the cycle length is preserved. The share
        // is pulled a hair inside its bounds: command validation recomputes
        // g/(g+r) from the durations, and a saturated action sitting
        // exactly on a bound must not round across it.
        let (lo, hi) = bounds::GREEN_RATIO;
        let ratio = action.0[1].clamp(lo + 1e-9, hi - 1e-9);
        self.apply(FeedbackCommand::SetSignalTiming {
            light: targets.light.clone(),
            green_s: ratio * cycle,
            red_s: (1.0 - ratio) * cycle,
        });
        self.apply(FeedbackCommand::SetSensorSampling {
            sensor: targets.sensor.clone(),
            period_s: action.0[2],
        });
        let (report, drops) = self.advance_window();
        let reward = -self.weights.congestion * self.world.congestion_index()
            - self.weights.overflow * (drops as f64 / self.pipeline_config.queue_capacity as f64);
        (self.observe(&report), reward)
    }
}
