//! Nonperturbative excitation of discrete-level samples by single free
//! electrons.
//!
//! Three mutually checking routes are provided:
//!
//! * [`closed_forms`]: exact point-like limits and Poisson statistics;
//! * [`nonrecoil`]: constant-velocity electrons, integrating the amplitude
//!   equations along the trajectory;
//! * [`recoil`]: full recoil, solving the discretized Lippmann–Schwinger
//!   equation on a momentum grid.
//!
//! Units are natural throughout: ħ = mₑ = 1.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod closed_forms;
pub mod coupling;
pub mod error;
pub mod kinematics;
pub mod nonrecoil;
pub mod quadrature;
pub mod recoil;
pub mod sweep;

pub use error::{Error, Result};
