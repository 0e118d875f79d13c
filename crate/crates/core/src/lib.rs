//! Simulation and analysis of a magnetometer network searching for
//! dark-photon dark matter through shield-room induced fields.
//!
//! The crate is organised along the data path: [`physics`] maps kinetic
//! mixing to a wall field, [`simnet`] produces synthetic sensor records,
//! [`correlator`] turns records into cross-spectra, and [`detect`] turns
//! averaged spectra into candidates and exclusion limits.

pub mod correlator;
pub mod detect;
pub mod error;
pub mod physics;
pub mod rng;
pub mod simnet;

pub use error::{Error, Result};
