//! Maximum-likelihood fitting over an approximated likelihood, standard
//! errors, and the importance-sampling baseline.

mod fit;
mod importance;
mod nelder_mead;

pub use fit::{fit_mle, fit_mle_with, standard_errors, standard_errors_with_step, Approximation, FitOptions, FitResult, StandardErrors};
pub use importance::{
    importance_sampling, importance_sampling_loglik, loglik_difference_trace, Budget,
    DifferenceMethod, ISResult, Trace, TracePoint, UNRELIABLE_CV,
};
pub use nelder_mead::{nelder_mead, NelderMeadOptions, NelderMeadResult};
