//! Bayesian calibration of computer models with Gaussian-process discrepancy
//! functions, including the scaled (S-GaSP) and orthogonal (O-GaSP) variants.

pub mod baselines;
pub mod calib;
pub mod covcore;
pub mod emulator;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod kernel;
pub mod optim;
pub mod sgasp;

pub use error::{Error, Result};
