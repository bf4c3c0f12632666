//! Desk-scale laboratory for the RowHammer temperature side channel.
//!
//! The crate contains a stochastic DRAM module simulator calibrated to
//! per-module BER-versus-temperature cubics, the attack pipeline built on top
//! of it (fingerprinting, regression fitting and inversion, BER monitoring,
//! canary-cell enrollment and monitoring) and an experiment harness that
//! measures estimation accuracy.
//!
//! # Features
//!
//! - `parallel` (default): rayon-backed data-parallel sweeps. Results are
//!   bit-identical with and without it.

pub mod canary;
pub mod dram;
pub mod error;
pub mod experiment;
pub mod fingerprint;
pub mod hammer;
pub mod par;
pub mod regression;
mod rng;

pub use error::{Error, Result};
pub use par::Execution;
