//! Error type shared by every module of the library.

use thiserror::Error;

/// Failures reported by kernel evaluation, solvers and probes.
///
/// Divergence of a fitted constant or an operator-norm estimate is a probe
/// verdict, not an error.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed input: shapes, symmetry, ordering of breakpoints.
    #[error("structural error: {0}")]
    Structural(String),
    /// A measured Rayleigh quotient is not positive.
    #[error("ellipticity violation: measured lower bound {lower} <= 0")]
    Ellipticity { lower: f64 },
    /// An interval `(s, t)` with `t <= s` where `t > s` is required.
    #[error("ordering error: need t > s, got s = {s}, t = {t}")]
    Ordering { s: f64, t: f64 },
    /// The accumulated diffusion matrix is numerically singular.
    #[error("degenerate accumulated diffusion: scaled determinant {det:e}")]
    Degenerate { det: f64 },
    /// A request outside what the implementation supports.
    #[error("capability error: {0}")]
    Capability(String),
    /// A point outside the admissible domain of a kernel.
    #[error("domain error: {0}")]
    Domain(String),
    /// Incompatible norm settings or operator selector.
    #[error("spec error: {0}")]
    Spec(String),
    /// Bad grid data: non-finite values, mismatched lattices, too few nodes.
    #[error("data error: {0}")]
    Data(String),
    /// An iterative method failed to converge.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Input rejected by a probe precondition (e.g. PDE residual too large).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A test input does not satisfy its construction constraint.
    #[error("construction error: {0}")]
    Construction(String),
}

pub type Result<T> = std::result::Result<T, Error>;
