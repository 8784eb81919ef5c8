//! Photovoltaic maximum-power-point-tracking laboratory.
//!
//! A simulated partially shaded PV array driven in closed loop by an MPPT
//! controller built from three parts: a GLLR sequential change detector on the
//! power signal, a particle-filter estimator of the reference voltage, and a
//! feed-forward network that predicts the global MPP voltage after a change.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ann;
pub mod controller;
pub mod detect;
pub mod error;
pub mod harness;
pub mod pv;
pub mod rng;
pub mod smc;

pub use error::{Error, Result};
