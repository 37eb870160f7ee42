//! Likelihood approximation for generalized linear mixed models with sparse
//! random-effect structure.
//!
//! The likelihood of a GLMM is an integral over all `n` random effects. When
//! the posterior dependence graph of those effects is sparse, the integral can
//! be computed one effect at a time: each elimination step integrates a single
//! effect against the factors it touches and stores the resulting function of
//! its neighbours on a sparse grid, relative to the Gaussian approximation
//! used by the Laplace method. Level `k = 0` reproduces the Laplace
//! approximation; increasing `k` refines the stored functions.
//!
//! Modules:
//! - [`model`]: families, linear predictor, integrand, simulation.
//! - [`designs`]: builders for tournaments and nested multilevel layouts.
//! - [`graph`]: dependence graph, maximal cliques, elimination orderings.
//! - [`normal`]: posterior mode, Laplace approximation, Gaussian utilities.
//! - [`sparse_grid`]: knot ladders, Smolyak spline interpolation, stored functions.
//! - [`seqreduce`]: the elimination engine.
//! - [`inference`]: importance sampling, maximum likelihood, standard errors.

pub mod designs;
pub mod error;
pub mod graph;
pub mod inference;
pub mod model;
pub mod normal;
pub mod quadrature;
pub mod seqreduce;
pub mod sparse_grid;
pub mod special;

pub use error::{Error, Result};
pub use graph::{DependenceGraph, EliminationPlan};
pub use inference::{
    fit_mle, importance_sampling_loglik, loglik_difference_trace, standard_errors, Approximation,
    FitResult, ISResult, Trace,
};
pub use model::{Family, ModelSpec, Theta};
pub use normal::{laplace_loglik, posterior_mode, NormalApprox};
pub use seqreduce::{loglik_surface, sequential_reduction_loglik, SrConfig};
