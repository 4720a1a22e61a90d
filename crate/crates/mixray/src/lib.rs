//! Numerical workbench for mixing ray transforms of tensor fields on
//! two-dimensional conformal disks: forward transforms (geodesic, mixed,
//! transverse), the algebraic reduction machinery relating different
//! mixings, and discretized least-squares inversion.

pub mod config;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod grid;
pub mod inversion;
pub mod poly;
pub mod reduction;
pub mod suites;
pub mod tensor;
pub mod transforms;

pub use error::{MixrayError, Result};
