//! Conduct-parameter estimation for homogeneous-goods markets.
//!
//! The crate covers equilibrium computation, synthetic data generation,
//! GMM moments, a barrier/augmented-Lagrangian Newton solver and a Monte
//! Carlo harness.

pub mod dgp;
pub mod equilibrium;
pub mod error;
pub mod gmm;
pub mod io;
pub mod montecarlo;
pub mod nlp;
pub mod rng;
pub mod solver;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
