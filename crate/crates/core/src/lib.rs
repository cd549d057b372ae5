//! Dual value-function deep RL: DQV, DQV-Max and their shared-parameter
//! variants, DQN/DDQN baselines, tabular oracles, overestimation diagnostics
//! and an experiment harness.

pub mod agents;
pub mod approximator;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod replay;
pub mod stats;
pub mod tabular;

pub use error::{Error, Result};
