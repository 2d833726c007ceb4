//! Core library for a deterministic NR-V2X Mode-2 sidelink simulator with
//! integrated sensing, communication, and computation (ISCC), plus the
//! multi-agent schedulers that drive it.
//!
//! Modules map onto the subsystems: configuration/RNG plumbing, mobility and
//! channels, OFDM-radar sensing, SB-SPS MAC, sidelink communication outcomes,
//! local/MEC computation and offloading, the Markov-game environment, policy
//! training, and experiment orchestration.

pub mod comm;
pub mod compute;
pub mod config;
pub mod env;
pub mod eval;
pub mod marl;
pub mod mobility;
pub mod plot;
pub mod rdmap;
pub mod rng;
pub mod sbsps;
pub mod sensing;
pub mod trace;

pub use config::{load_config, ConfigError, SimConfig};
pub use env::{ActionIndices, ActionVector, GlobalState, IsccEnv, Observation};
pub use rng::{RngError, RngStreams};
