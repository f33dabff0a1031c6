//! Dirichlet Laplacian spectra of partial shapes and a learned commutative
//! operator that predicts the spectrum of the union of two parts.

pub mod dataset;
pub mod downstream;
pub mod error;
pub mod geometry;
pub mod spectral;
pub mod union;

pub use error::{CoreError, Result};
