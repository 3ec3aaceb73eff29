//! Decentralized linear transformations with successive graph shift operators.
//!
//! The crate covers four pieces that build on each other:
//!
//! * [`graph`]: directed topologies and the support pattern a shift operator
//!   must respect.
//! * [`design`]: block coordinate descent over `S_1..S_L` so that the running
//!   products `S_l⋯S_1` approach a target matrix `T`.
//! * [`filtering`] and [`fluctuation`]: clean and randomly perturbed execution
//!   of a designed sequence, deviation statistics and the MSE bound.
//! * [`estimator`]: random Fourier feature regressors that impute values a
//!   node failed to receive, plus a deliberate sparsification mode.

pub mod design;
pub mod error;
pub mod estimator;
pub mod filtering;
pub mod fluctuation;
pub mod graph;
pub mod io;
pub mod mc;
pub mod rng;

pub use error::{Error, Result};

/// Dense real matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense real vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
