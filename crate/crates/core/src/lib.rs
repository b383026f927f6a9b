//! Quantum state tomography from a continuously measured, randomly driven
//! atomic spin ensemble.
//!
//! The crate covers the whole chain: angular-momentum algebra on the 16-level
//! cesium ground manifold ([`spin`]), piecewise-exact control dynamics and
//! Heisenberg-picture observables ([`dynamics`]), synthetic measurement
//! records ([`record`]), least-squares and trace-minimizing convex estimators
//! ([`estimators`]), and the experiment harness that produces fidelity curves
//! ([`pipeline`]). [`io`] holds the file formats.

pub mod digest;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod io;
pub mod pipeline;
pub mod record;
pub mod rng;
pub mod spin;

pub use error::{Error, Result};
