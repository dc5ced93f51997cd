//! Polarization-entangled photon pairs from a quantum dot in a bimodal cavity.
//!
//! The pipeline: [`model`] builds the rotating-frame Hamiltonian and Lindblad
//! channels on the [`hilbert`] space, [`propagator`] integrates the master
//! equation, [`correlations`] evaluates two-time correlators by quantum
//! regression and assembles the two-photon density matrix, [`entanglement`]
//! turns that into a concurrence and Stark-shift diagnostics, and [`harness`]
//! runs scenarios, sweeps and figure presets.

pub mod error;
pub mod hilbert;
pub mod model;
pub mod propagator;
pub mod correlations;
pub mod entanglement;
pub mod harness;

pub use error::{Error, Result};
