//! The Twin Service Layer's RL engine: DDPG over a hand-rolled MLP with
//! replay buffer, Adam, and time-delayed target networks, recommending
//! continuous congestion-avoiding actions.
//!
//! Everything is double precision and seeded; a full training run is a
//! pure function of its configuration and the environment seed.

mod adam;
mod ddpg;
mod env;
mod mlp;
mod replay;

pub use adam::{adam_step, AdamState};
pub use ddpg::{
    actor_action, actor_gradients, actor_normalized, actor_update, bellman_target, critic_input,
    critic_gradients, critic_update, select_action, soft_update, train, Checkpoint, DdpgNets,
    EpisodeRow, Trainer, TrainingLog,
};
pub use env::{Environment, RewardWeights, TwinEnv};
pub use mlp::{Activation, Gradients, Layer, LayerGrads, Mlp};
pub use replay::ReplayBuffer;

use serde::{Deserialize, Serialize};

use crate::events::bounds;

/// Observation fed to the actor: the three event densities of the last
/// window, the congestion index, and the normalized mean speed. All
/// components lie in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State(pub [f64; 5]);

/// Dimension of [`State`].
pub const STATE_DIM: usize = 5;

/// Continuous action: [speed limit m/s, green ratio, sampling period s].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action(pub [f64; 3]);

/// Dimension of [`Action`].
pub const ACTION_DIM: usize = 3;

/// Per-dimension (lo, hi) action bounds, matching the ranges the physical
/// layer accepts for feedback commands.
pub const ACTION_BOUNDS: [(f64, f64); 3] =
    [bounds::SPEED_LIMIT, bounds::GREEN_RATIO, bounds::SAMPLING_PERIOD];

impl Action {
    pub fn in_bounds(&self) -> bool {
        self.0
            .iter()
            .zip(ACTION_BOUNDS)
            .all(|(v, (lo, hi))| *v >= lo && *v <= hi && v.is_finite())
    }

    /// Maps each dimension from its bounds onto [-1, 1] (the space the
    /// actor's Tanh head and the exploration noise live in).
    pub fn to_normalized(self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, (v, (lo, hi))) in self.0.iter().zip(ACTION_BOUNDS).enumerate() {
            out[i] = ((v - lo) / (hi - lo)) * 2.0 - 1.0;
        }
        out
    }

    /// Inverse of [`Action::to_normalized`]; input is clamped to [-1, 1].
    pub fn from_normalized(norm: [f64; 3]) -> Self {
        let mut out = [0.0; 3];
        for (i, (t, (lo, hi))) in norm.iter().zip(ACTION_BOUNDS).enumerate() {
            out[i] = lo + (t.clamp(-1.0, 1.0) + 1.0) / 2.0 * (hi - lo);
        }
        Action(out)
    }
}

/// One experience tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: State,
    pub a: Action,
    pub r: f64,
    pub s_next: State,
    pub done: bool,
}

/// How target networks chase the online networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TargetUpdate {
    /// Polyak averaging with the configured tau, every update.
    Soft,
    /// Exact copy every N updates (the literal "time-delayed copy").
    HardEvery(u64),
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgConfig {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma: f64,
    pub batch: usize,
    pub tau: f64,
    pub noise_sigma: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub buffer_capacity: usize,
    pub seed: u64,
    pub target_update: TargetUpdate,
}

/// Accepted learning-rate range for both networks.
pub const LR_RANGE: (f64, f64) = (0.001, 0.2);

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            lr_actor: 0.01,
            lr_critic: 0.02,
            gamma: 0.8,
            batch: 256,
            tau: 0.005,
            noise_sigma: 0.1,
            episodes: 135,
            steps_per_episode: 50,
            buffer_capacity: 10_000,
            seed: 42,
            target_update: TargetUpdate::Soft,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let (lo, hi) = LR_RANGE;
        for (name, lr) in [("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic)] {
            if !(lr >= lo && lr <= hi) {
                return Err(LearnerError::InvalidConfig(format!(
                    "{name} = {lr} outside the accepted range [{lo}, {hi}]"
                )));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(LearnerError::InvalidConfig(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if self.batch == 0 {
            return Err(LearnerError::InvalidConfig("batch must be at least 1".into()));
        }
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return Err(LearnerError::InvalidConfig(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(LearnerError::InvalidConfig(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return Err(LearnerError::InvalidConfig(
                "episodes and steps_per_episode must be at least 1".into(),
            ));
        }
        if self.buffer_capacity < self.batch {
            return Err(LearnerError::InvalidConfig(format!(
                "buffer_capacity {} cannot hold a batch of {}",
                self.buffer_capacity, self.batch
            )));
        }
        if let TargetUpdate::HardEvery(0) = self.target_update {
            return Err(LearnerError::InvalidConfig(
                "hard target copies need a period of at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Errors of the learner.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LearnerError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch { context: &'static str, expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid learner config: {0}")]
    InvalidConfig(String),
}
