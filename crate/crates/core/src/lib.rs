//! Ensemble exploration for deep reinforcement learning on small control tasks.
//!
//! The crate bundles a small reverse-mode autodiff for MLPs, toy
//! environments with exact reference values, a replay buffer with bootstrap
//! masks, Bootstrapped DQN and Ensemble SAC with optional cross-ensemble
//! auxiliary heads, tandem active/passive diagnostics, aggregation at test
//! time, evaluation statistics and a checkpointed training loop.

pub mod aggregation;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dqn;
pub mod ensemble_net;
pub mod envs;
pub mod error;
pub mod evalstats;
pub mod replay;
pub mod report;
pub mod rng;
pub mod runner;
pub mod sac;
pub mod schedule;
pub mod tandem;

pub use config::{parse_config, Algorithm, RunConfig};
pub use error::{Error, Result};
pub use runner::{train, train_tandem, RunLog, Trainer};
