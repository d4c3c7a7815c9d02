//! Gridless direction-of-arrival estimation for uniform and non-uniform
//! linear arrays.
//!
//! The crate is organised bottom-up:
//!
//! - [`array_model`]: geometries, steering vectors, measurement synthesis.
//! - [`spectrum`]: subspace splitting, null spectra, polynomial rooting and
//!   the unit-circle minimum search.
//! - [`ivd`]: irregular Vandermonde decomposition, power estimation and the
//!   root-MUSIC family.
//! - [`projections`]: Toeplitz, PSD, irregular-Toeplitz and block-set
//!   projections.
//! - [`solvers`]: alternating-projection solvers and the ADMM baseline.
//! - [`bench`]: Monte-Carlo harness, RMSE scoring, CBF baseline and the CSV
//!   schema used by the CLI.
//!
//! Sensor positions are always expressed in half-wavelengths.

pub mod array_model;
pub mod bench;
pub mod error;
pub mod ivd;
pub mod linalg;
pub mod parallel;
pub mod projections;
pub mod solvers;
pub mod spectrum;

pub use error::{DoaError, Result};
pub use linalg::{CMat, CVec, C64};
