//! Simulation of heralded polarization entanglement from a down-conversion
//! source, with state tomography of the heralded pair.
//!
//! The pipeline is: [`source`] produces pair-number components, [`elements`]
//! builds the linear-optical circuit, [`detection`] heralds and post-selects,
//! [`tomography`] reconstructs density matrices from counts, and [`metrics`]
//! scores them. [`experiments`] ties the stages together.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detection;
pub mod elements;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod metrics;
pub mod qubit;
pub mod source;
pub mod tomography;

pub use detection::{ConditionalEnsemble, DetectorModel, NumberTable, Resolution};
pub use elements::{build_heralding_circuit, CircuitLayout};
pub use error::{Error, Result};
pub use fock::{ModeLabel, ModeMap, ModeRegister, OccupationVector, Polarization, SparseKet};
pub use qubit::{BellState, Pauli, TwoQubitDensityMatrix};
pub use source::{PairSign, SpdcParams};
