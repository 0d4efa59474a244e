//! Cooperative, DoS-resilient verification of vehicular safety beacons.
//!
//! Beacons are signed under short-lived pseudonym certificates and also carry
//! a TESLA MAC, the previous slot's chain key, and digests of beacons their
//! sender verified by signature. Receivers spend expensive signature checks
//! on newly seen pseudonyms and validate the rest through hash chains and
//! shared results. The [`sim`] module is a deterministic discrete-event
//! simulator of the scheme on static and highway topologies.

pub mod crypto;
pub mod messages;
pub mod receiver;
pub mod sender;
pub mod sim;
pub mod store;
pub mod tesla;

/// Simulation and protocol time in microseconds.
pub type Micros = i64;

pub const MICROS_PER_SEC: Micros = 1_000_000;

pub fn secs_to_micros(s: f64) -> Micros {
    (s * MICROS_PER_SEC as f64).round() as Micros
}

pub fn micros_to_secs(t: Micros) -> f64 {
    t as f64 / MICROS_PER_SEC as f64
}
