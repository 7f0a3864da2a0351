//! Simulator for the quasiperiodically kicked quantum rotor: an atomic kicked
//! rotor driven by two incommensurate series of kicks.
//!
//! All quantities are dimensionless. Time is measured in periods of the
//! primary kick series, the angle is `θ = 2 k_L x`, and momenta are either
//! integer momentum classes in units of `2ħk_L` (histograms, `⟨p²⟩`) or the
//! Hamiltonian momentum `ħ̄ (n + β)` where noted.
//!
//! Module map:
//!
//! - [`units`]: laboratory to dimensionless conversions and the bundled
//!   parameter table.
//! - [`schedule`]: the merged two-series kick timeline.
//! - [`qprop`]: split-step spectral propagation of one quantum state.
//! - [`ensemble`]: sampled trajectories with beam and spontaneous-emission
//!   realism, reduced into momentum histograms.
//! - [`classical`]: the classical kicked-rotor map over the same timeline.
//! - [`analysis`]: zero-momentum sweeps, scaling collapse and tail shape fits.

pub mod analysis;
pub mod classical;
pub mod ensemble;
mod error;
pub mod qprop;
pub mod rng;
pub mod schedule;
pub mod units;

pub use error::{Error, Result};
