//! Sequential reduction: eliminate random effects one at a time.
//!
//! The integrand is split into clique factors. Eliminating a vertex
//! integrates the product of the factors inside its closed neighbourhood over
//! that vertex with an adaptive Gauss–Hermite rule, and stores the result as a
//! function of the remaining neighbours on a sparse grid. Isolated vertices
//! contribute a scalar to the running log-constant.

mod engine;
mod factor;
mod modifier;

pub use engine::{
    loglik_surface, sequential_reduction, sequential_reduction_loglik, ReductionState, SrConfig,
    SrOutcome,
};
pub use factor::{initial_factorization, Factor, FactorKind};
pub use modifier::{build_modifier, ModifierH};
