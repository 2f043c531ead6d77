//! Green functions of `∂_t − a^{ij}(t) D_i D_j` with measurable-in-time
//! coefficients, discrete mixed norms, finite-difference solvers and the
//! probes that test pointwise kernel bounds and weighted coercive estimates.

pub mod appendix_ops;
pub mod coeffs;
pub mod error;
pub mod grid;
pub mod kernel_halfspace;
pub mod kernel_wholespace;
pub mod mixed_norms;
pub mod operators;
pub mod probe;
pub mod quadrature;
pub mod solver;
pub mod testfn;

pub use coeffs::{AccumulatedDiffusion, CoefficientField};
pub use error::{Error, Result};

pub use grid::{Axis, Domain, GridFunction};
pub use kernel_wholespace::MultiIndex;
pub use mixed_norms::{NormSpec, Order, WeightKind};


