use thiserror::Error;

#[derive(Debug, Error)]
pub enum MixrayError {
    #[error("point ({0}, {1}) lies outside the domain of radius {2}")]
    Domain(f64, f64, f64),
    #[error("ray parameter {0} outside [0, {1}]")]
    RayParameter(f64, f64),
    #[error("entry direction is tangential: alpha = {0} not strictly inside (-pi/2, pi/2)")]
    TangentialEntry(f64),
    #[error("geodesic exceeded the trapping guard length {0}")]
    NonTerminatingRay(f64),
    #[error("rank mismatch: expected {expected}, got {got}")]
    RankMismatch { expected: usize, got: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("automorphism field near-singular: |det| = {0} below floor {1}")]
    Conditioning(f64, f64),
    #[error("finite-difference stencil leaves the grid near ({0}, {1})")]
    Stencil(f64, f64),
    #[error("iterative solver did not converge: {0}")]
    NonConvergence(String),
    #[error("field derivatives unavailable: {0}")]
    NoDerivative(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MixrayError>;
