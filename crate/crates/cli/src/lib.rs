//! Benchmark harness for the digital-twin IoV stack.
//!
//! Wires the simulator, the wire protocol, the event pipeline, the twin
//! store, and the learner into runnable experiments:
//!
//! - [`experiment::run_experiment`] — one streaming run, producing twin XML
//!   and a per-event metrics CSV;
//! - [`experiment::compare_modes`] — paired dt-native vs traditional runs
//!   with confidence intervals on the processing-time saving;
//! - [`sweep::sweep_learning_rates`] — learning-rate sweep over the
//!   twin-backed control environment;
//! - [`selftest::run_all`] — the property suites (density recount,
//!   finite-difference gradients, frame fuzz, session enumeration).
//!
//! The `iovtwin` binary exposes these as the `run`, `compare`, `sweep`,
//! and `selftest` subcommands.

pub mod config;
pub mod driver;
pub mod experiment;
pub mod metrics;
pub mod selftest;
pub mod sweep;
pub mod tcp;

pub use config::{ExperimentConfig, GlobalConfig, Mode};
pub use driver::{run_experiment, RunOutput};
pub use experiment::{compare_modes, CompareReport};
pub use metrics::{EventRecord, MetricsReport};
pub use selftest::{run_all, CheckResult};
pub use sweep::{sweep_learning_rates, SweepReport};

use iovtwin_core::wire::WireError;

/// Everything that can abort a harness invocation. Each variant maps to a
/// distinct process exit code so scripts can tell failure classes apart.
#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("bind failure on {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("io failure at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("watchdog: no event committed for {secs} s of wall time (sim time {sim_time})")]
    Watchdog { secs: u64, sim_time: f64 },
}

impl From<WireError> for ExperimentError {
    fn from(e: WireError) -> Self {
        ExperimentError::Protocol(e.to_string())
    }
}

impl ExperimentError {
    /// Stable exit code for the binary; 0 is reserved for full success.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::InvalidConfig(_) => 2,
            ExperimentError::Bind { .. } => 3,
            ExperimentError::Protocol(_) => 4,
            ExperimentError::Io { .. } => 5,
            ExperimentError::Watchdog { .. } => 6,
        }
    }
}
