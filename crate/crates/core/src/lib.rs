//! Real-time nodal-pricing market on radial distribution networks.
//!
//! The crate models a distribution feeder with the linear DistFlow equations,
//! attaches one battery prosumer to every loaded bus, prices real and reactive
//! power at the marginal cost of the distribution operator, and computes
//! equilibrium policies by gradient ascent on the game's potential value
//! function.
//!
//! Everything here is pure computation over `alloc` collections; file IO,
//! configuration and the command-line front end live in the `dlmp` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod devices;
pub mod error;
pub mod evaluator;
pub mod exogenous;
pub mod game;
pub mod gradient;
pub mod linalg;
pub mod netmodel;
pub mod policy;
pub mod powerflow;
pub mod rng;
pub mod trainer;
pub mod verify;

pub use devices::{DeviceConfig, StorageFleet, StorageSpec, Utility, ZeroUtility};
pub use error::{Error, Result};
pub use evaluator::{ComparisonTable, DemoTrace, EvalConfig, EvalReport};
pub use exogenous::{ExoConfig, ExoState};
pub use game::{Game, GameState, RewardMode, StageOutcome};
pub use gradient::{GradEstimate, NoiseStreams, RolloutTape};
pub use netmodel::{Network, Sensitivities};
pub use policy::{PolicyLayout, PolicyMode, PolicyParams};
pub use powerflow::{FlowSolution, PriceVector};
pub use trainer::{TrainConfig, TrainLog};
pub use verify::{VerifyEntry, VerifyReport};

/// The 18-bus radial feeder distributed with MATPOWER (`case18.m`).
pub const CASE18: &str = include_str!("../data/case18.m");
