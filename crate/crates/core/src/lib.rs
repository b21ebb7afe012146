//! Dynamic likelihood filtering for 1-D stochastic advection.
//!
//! The crate is `no_std` with `alloc`. It holds the full numerical pipeline:
//! exact stochastic-characteristic truth generation ([`truth`]), the
//! Lax-Friedrichs forecast model ([`model`]), a fixed sparse observation
//! network ([`obsnet`]), the reference Kalman filter ([`kf`]), the dynamic
//! likelihood filter ([`dlf`]) and end-to-end scenario runs with their
//! diagnostics ([`scenario`]).
#![no_std]
#![deny(unsafe_code)]
// `!(x > 0.0)` is how parameter checks reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dlf;
pub mod error;
pub mod grid;
pub mod kf;
pub mod linalg;
pub mod model;
pub mod obsnet;
pub mod scenario;
pub mod truth;

pub use error::{Error, Result};
pub use grid::{GridSpec, NoiseSource, StateEstimate};
pub use truth::{Problem, TruthConfig};
