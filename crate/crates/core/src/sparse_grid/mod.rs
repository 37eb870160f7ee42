//! Sparse-grid storage of functions on `ℝ^d`.
//!
//! A function is stored relative to a Gaussian: after mapping `x` to
//! standardized coordinates `z`, the log-ratio `c(z)` to the standard normal
//! density is interpolated on a Smolyak grid built from nested normal-quantile
//! knots and natural cubic splines.

mod knots;
mod smolyak;
mod spline;
mod stored;

pub use knots::{knots_1d, level_count, tau_schedule, KnotLadder};
pub use smolyak::{
    build_interpolant, eval_interpolant, grid_points, smolyak_index_sets, GridCache, GridTerm,
    SparseGrid, SparseGridInterpolant,
};
pub use spline::NaturalSplineBasis;
pub use stored::{eval_stored, store_function, StoredFunction, StoredScratch};
