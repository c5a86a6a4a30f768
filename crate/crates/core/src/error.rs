use crate::lattice::GridFunction;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared across the laboratory modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A lattice point lies outside the set an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// An argument violates a precondition (exponent, axis, radius, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The iterative solver hit its iteration cap. The best iterate is kept
    /// so callers can inspect how far the solve got.
    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Box<GridFunction>,
    },

    /// A dense-path operation was asked for on a grid above its cap.
    #[error("dense path refused: {points} interior points exceeds cap {cap}")]
    SizeCap { points: usize, cap: usize },

    /// Evaluation at the singular point of an asymptotic expansion.
    #[error("singularity: {0}")]
    Singularity(String),

    /// The full-space expansion is not pointwise valid this close to the
    /// source; only difference stencils are exposed there.
    #[error("near-origin evaluation at |z| = {z_norm:.3} below validity radius {radius}")]
    NearOrigin { z_norm: f64, radius: f64 },

    /// Quadrature could not reach the requested tolerance.
    #[error("quadrature accuracy {achieved:.3e} did not reach requested {requested:.3e}")]
    QuadratureAccuracy {
        achieved: f64,
        requested: f64,
        value: f64,
    },

    /// A dense factorization or other numeric kernel failed.
    #[error("numeric error: {0}")]
    Numeric(String),
}
