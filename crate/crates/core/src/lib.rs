//! Affordance-driven interactive reinforcement learning on a table-cleaning
//! task.
//!
//! * [`scenario`]: the task as a deterministic MDP, its state enumeration and
//!   an optimal-policy oracle.
//! * [`fusion`]: speech and gesture recognizers and their audio-visual fusion.
//! * [`advisor`]: a simulated trainer whose advice passes through noisy channels.
//! * [`affordance`]: the effect-prediction network and its Levenberg-Marquardt
//!   trainer.
//! * [`learner`]: SARSA with advice gating and affordance bypassing.
//! * [`experiment`]: seeded agent populations, sweeps, result files and plots.

pub mod advisor;
pub mod affordance;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod learner;
pub mod scenario;

pub use error::{Error, Result};
