//! Boundary control of sediment flushing in an open channel.
//!
//! The crate linearizes a water and suspended-sediment channel about a
//! uniform operating point, maps it to a transport system with three
//! rightward and one leftward characteristic, and stabilizes it from the
//! downstream gate with a backstepping controller fed by a boundary
//! observer that only measures the leftward state at the inlet.
//!
//! Pipeline: [`physics`] -> [`linearize`] -> [`kernels`] -> [`control`] ->
//! [`sim`] -> [`metrics`] / [`io`]. [`synthesis::Synthesis`] bundles the
//! offline stages for a given [`io::RunConfig`].

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too, and
// index loops over small fixed-size arrays mirror the componentwise formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod control;
pub mod error;
pub mod io;
pub mod kernels;
pub mod linearize;
pub mod metrics;
pub mod physics;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
