//! Deterministic simulator and analytical toolkit for energy-aware federated
//! learning over unreliable wireless uplinks.
//!
//! The crate models a server coordinating `U` edge devices. Each round the
//! server samples `S` devices with replacement, the sampled devices train on
//! locally augmented data, prune and quantize their gradients, and upload them
//! over Rayleigh-fading channels that drop packets with a power-dependent
//! probability. The toolkit has three layers:
//!
//! * mechanics: [`data`] (synthesis, Dirichlet partitioning, augmentation
//!   planning, surrogate generation), [`compress`] (magnitude pruning,
//!   stochastic quantization), [`channel`] (rates, outage probabilities,
//!   power control), [`energy`] (per-round and total energy accounting);
//! * analysis: [`analysis`] (participation-weight enumeration, convergence
//!   bound evaluation, round budgets, constant calibration);
//! * execution: [`engine`] (the federated training loop), [`optimizer`]
//!   (Bayesian optimization inside block coordinate descent), [`harness`]
//!   (scenario orchestration) and [`metrics`] (line-delimited result files).
//!
//! Every stochastic choice draws from a stream derived in [`rng`] from
//! `(seed, round, device, purpose)`, so identical inputs produce bit-identical
//! outputs regardless of thread count or call order.

pub mod analysis;
pub mod channel;
pub mod compress;
pub mod config;
pub mod data;
pub mod energy;
pub mod engine;
pub mod harness;
pub mod metrics;
pub mod numeric;
pub mod optimizer;
pub mod rng;
pub mod types;

pub use config::Config;
pub use types::{
    DeviceProfile, Error, Range, Result, Strategy, StrategyBounds, SystemConstants,
};
