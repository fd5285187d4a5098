//! Frequency-domain tests of structural hypotheses on multivariate
//! stationary time series.
//!
//! The pipeline runs from a sample `Z_1, …, Z_n` through its discrete
//! Fourier transform and smoothed periodogram `f̂_U` to a restricted
//! estimate `f̂_R = g(θ̂, f̂_U)`, then sums a discrepancy `K(f̂_U f̂_R^{-1})`
//! over the Fourier frequencies and standardizes it against a normal law.

pub mod constraints;
pub mod divergence;
pub mod error;
pub mod hermcore;
pub mod io;
pub mod simlab;
pub mod spectra;
pub mod statistics;

pub use error::{Error, Result};
