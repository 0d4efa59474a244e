//! Deterministic discrete-event simulation of the scheme.
//!
//! Two topologies are provided: a static disc around an evaluated node, and
//! a highway section with Poisson arrivals from both ends. Every benign node
//! runs a full sender and receiver; the channel is a range cutoff with
//! independent per-receiver loss, and each node's CPU serializes signature
//! verifications at a fixed cost.

mod config;
mod engine;
mod metrics;
pub mod topology;

use rayon::prelude::*;

pub use config::{ConfigError, Scenario, SimConfig, Timing};
pub use engine::PROPAGATION_US;
pub use metrics::{ChannelCounters, MetricsReport, PsnymRatio, PsnymRecord, RunReport, WaitRecord, KINDS};

/// Runs run `run_id` of `cfg` (seeded with `cfg.seed + run_id`). With
/// `audit`, receiver invariants are checked after every pipeline step.
pub fn run_single(cfg: &SimConfig, run_id: u32, audit: bool) -> Result<RunReport, ConfigError> {
    let tm = cfg.validate()?;
    Ok(engine::Engine::new(cfg, tm, run_id, audit).run())
}

/// Runs all `cfg.runs` seeded repetitions, in parallel.
pub fn run(cfg: &SimConfig) -> Result<MetricsReport, ConfigError> {
    let tm = cfg.validate()?;
    let runs = (0..cfg.runs)
        .into_par_iter()
        .map(|i| engine::Engine::new(cfg, tm, i, false).run())
        .collect();
    Ok(MetricsReport { config: cfg.clone(), runs })
}
