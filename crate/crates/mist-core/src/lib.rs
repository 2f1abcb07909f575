//! Simulation of measurement-induced state transitions (MIST) in a
//! dispersively read-out qubit.
//!
//! The crate is organised bottom-up:
//!
//! * [`qubit_spectrum`] diagonalizes the fluxonium circuit.
//! * [`operator_core`] holds the operator algebra, Lindblad generators,
//!   the RK4 stepper and the sparse steady-state solver.
//! * [`sw_transform`] computes the Schrieffer-Wolff effective parameters.
//! * [`reduced_model`] builds and evolves the two-level effective model.
//! * [`rate_theory`] evaluates the analytic transition rates.
//! * [`full_model`] and [`semiclassical`] are the benchmark models.
//! * [`entanglement`] computes the negativity.
//! * [`scenario`] and [`pipeline`] drive everything from a JSON scenario.
//!
//! Frequencies are angular and expressed in rad/ns throughout; use
//! [`units`] to convert from the ordinary GHz/MHz values found in scenarios.

pub mod entanglement;
pub mod error;
pub mod full_model;
pub mod operator_core;
pub mod output;
pub mod pipeline;
pub mod qubit_spectrum;
pub mod rate_theory;
pub mod reduced_model;
pub mod scenario;
pub mod semiclassical;
pub mod sw_transform;
pub mod units;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Version string embedded in output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
