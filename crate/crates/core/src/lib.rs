//! Simulation and verification toolkit for the semi-discrete stochastic heat
//! equation `du_t(x) = (L u_t)(x) dt + sigma(u_t(x)) dB_t(x)` on `Z^d`.

pub mod error;
pub mod experiments;
pub mod lattice;
pub mod moments;
pub mod quadrature;
pub mod renewal;
pub mod rng;
pub mod stats;
pub mod walk_kernel;

pub use error::{Result, SheError};
