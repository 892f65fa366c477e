//! Digital-twin service core for a desk-scale Internet-of-Vehicles testbed.
//!
//! The crate is organized bottom-up:
//!
//! - [`events`] — the shared event and feedback-command vocabulary;
//! - [`wire`] — framed message format and session state machines;
//! - [`sim`] — the microscopic road-network simulator (the physical twin);
//! - [`pipeline`] — publisher → broker → reactor event flow and densities;
//! - [`twin`] — XML twin instances with bounded history and persistence;
//! - [`learner`] — hand-rolled MLP, Adam, and DDPG over the twin state;
//! - [`system`] — the lockstep orchestrator tying everything together;
//! - [`exec`] — sequential/parallel execution helpers;
//! - [`config`] — runtime configuration.

pub mod events;
pub mod exec;
pub mod learner;
pub mod pipeline;
pub mod sim;
pub mod twin;
pub mod wire;
