//! Gaussian approximation to the integrand: Newton mode finding, the Laplace
//! likelihood, and the Gaussian bookkeeping (marginals, conditionals,
//! standardizing transforms) used when storing intermediate functions.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Predictor, Theta};
use crate::special::{log_phi, LN_2PI};

const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_NEWTON_ITERATIONS: usize = 100;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1.0 / (1u64 << 30) as f64;

/// `N(μ_θ, Σ_θ)` approximation to the normalized integrand.
#[derive(Debug, Clone)]
pub struct NormalApprox {
    pub mode: DVector<f64>,
    /// `-H_θ`, the negative Hessian of `log g` at the mode.
    pub precision: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub log_g_at_mode: f64,
    pub log_det_precision: f64,
    pub iterations: usize,
}

impl NormalApprox {
    pub fn dim(&self) -> usize {
        self.mode.len()
    }

    /// `log g(μ) + (n/2) log 2π + ½ log det Σ`.
    pub fn laplace_loglik(&self) -> f64 {
        self.log_g_at_mode + 0.5 * self.dim() as f64 * LN_2PI - 0.5 * self.log_det_precision
    }
}

/// `log g`, its gradient and its Hessian at `u`.
pub(crate) fn integrand_derivatives(
    spec: &ModelSpec,
    y: &[f64],
    pred: &Predictor,
    u: &[f64],
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let n = u.len();
    let family = spec.family();
    let mut value = 0.0;
    let mut grad = DVector::from_iterator(n, u.iter().map(|v| -v));
    let mut hess = -DMatrix::identity(n, n);
    for (i, yi) in y.iter().enumerate() {
        let (l, d1, d2) = family.derivatives(*yi, pred.eta(i, u));
        value += l;
        let terms = pred.terms(i);
        for &(a, ca) in terms {
            grad[a] += d1 * ca;
            for &(b, cb) in terms {
                hess[(a, b)] += d2 * ca * cb;
            }
        }
    }
    value += u.iter().map(|v| log_phi(*v)).sum::<f64>();
    (value, grad, hess)
}

fn integrand_value(spec: &ModelSpec, y: &[f64], pred: &Predictor, u: &[f64]) -> f64 {
    let family = spec.family();
    let obs: f64 = y
        .iter()
        .enumerate()
        .map(|(i, yi)| family.log_density_unchecked(*yi, pred.eta(i, u)))
        .sum();
    obs + u.iter().map(|v| log_phi(*v)).sum::<f64>()
}

/// Maximizes `log g(u | y, θ)` by damped Newton iterations from `u = 0`.
pub fn posterior_mode(spec: &ModelSpec, theta: &Theta) -> Result<NormalApprox> {
    let y = spec.require_response()?;
    let pred = spec.predictor(theta)?;
    let n = spec.num_effects();
    let mut u = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let (value, grad, hess) = integrand_derivatives(spec, y, &pred, &u);
        let grad_norm = grad.amax();
        let precision = -hess;
        if !value.is_finite() || !grad_norm.is_finite() {
            return Err(Error::numerical(format!(
                "log-integrand not finite at Newton iteration {iterations}"
            )));
        }
        if grad_norm < GRADIENT_TOLERANCE {
            let chol = Cholesky::new(precision.clone()).ok_or_else(|| {
                Error::numerical("negative Hessian at the mode is not positive definite")
            })?;
            let log_det_precision = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let covariance = chol.inverse();
            return Ok(NormalApprox {
                mode: DVector::from_vec(u),
                precision,
                covariance,
                log_g_at_mode: value,
                log_det_precision,
                iterations,
            });
        }
        if iterations >= MAX_NEWTON_ITERATIONS {
            return Err(Error::numerical(format!(
                "Newton iterations did not converge after {MAX_NEWTON_ITERATIONS} steps \
                 (gradient ∞-norm {grad_norm:.3e}, log g {value:.6})"
            )));
        }
        let chol = Cholesky::new(precision).ok_or_else(|| {
            Error::numerical(format!(
                "Hessian not negative definite at Newton iteration {iterations}"
            ))
        })?;
        let step = chol.solve(&grad);
        let slope = grad.dot(&step);
        let slack = 1e-12 * value.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        while t >= MIN_STEP {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let v = integrand_value(spec, y, &pred, &trial);
            if v.is_finite() && v >= value + ARMIJO * t * slope - slack {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        u = accepted.ok_or_else(|| {
            Error::numerical(format!(
                "line search failed at Newton iteration {iterations} (gradient ∞-norm {grad_norm:.3e})"
            ))
        })?;
        iterations += 1;
    }
}

/// Laplace approximation to the log-likelihood.
pub fn laplace_loglik(spec: &ModelSpec, theta: &Theta) -> Result<f64> {
    posterior_mode(spec, theta).map(|na| na.laplace_loglik())
}

/// Mean and covariance of the approximation restricted to `subset`.
pub fn marginal_normal(na: &NormalApprox, subset: &[usize]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if subset.is_empty() {
        return Err(Error::invalid("marginal of an empty subset"));
    }
    if let Some(v) = subset.iter().find(|v| **v >= na.dim()) {
        return Err(Error::invalid(format!("vertex {v} out of range")));
    }
    let mean = DVector::from_iterator(subset.len(), subset.iter().map(|i| na.mode[*i]));
    let cov = DMatrix::from_fn(subset.len(), subset.len(), |a, b| {
        na.covariance[(subset[a], subset[b])]
    });
    Ok((mean, cov))
}

/// Linear regression of one Gaussian coordinate on a set of others:
/// `E[x_t | x_G] = μ_t + bᵀ(x_G - μ_G)` with constant conditional variance.
#[derive(Debug, Clone)]
pub struct ConditionalRegression {
    pub target_mean: f64,
    pub given_mean: DVector<f64>,
    pub coefficients: DVector<f64>,
    pub variance: f64,
}

impl ConditionalRegression {
    pub fn new(mean: &DVector<f64>, cov: &DMatrix<f64>, target: usize, given: &[usize]) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d || target >= d || given.iter().any(|g| *g >= d || *g == target) {
            return Err(Error::invalid("inconsistent conditional-moment arguments"));
        }
        let k = given.len();
        let given_mean = DVector::from_iterator(k, given.iter().map(|g| mean[*g]));
        if k == 0 {
            let variance = cov[(target, target)];
            if !(variance > 0.0) {
                return Err(Error::numerical("non-positive variance"));
            }
            return Ok(ConditionalRegression {
                target_mean: mean[target],
                given_mean,
                coefficients: DVector::zeros(0),
                variance,
            });
        }
        let s_gg = DMatrix::from_fn(k, k, |a, b| cov[(given[a], given[b])]);
        let s_gt = DVector::from_iterator(k, given.iter().map(|g| cov[(*g, target)]));
        let chol = Cholesky::new(s_gg).ok_or_else(|| Error::numerical("conditioning covariance is singular"))?;
        let coefficients = chol.solve(&s_gt);
        let variance = cov[(target, target)] - s_gt.dot(&coefficients);
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::numerical(format!("conditional variance {variance} is not positive")));
        }
        Ok(ConditionalRegression {
            target_mean: mean[target],
            given_mean,
            coefficients,
            variance,
        })
    }

    pub fn mean_at(&self, given_values: &[f64]) -> f64 {
        self.target_mean
            + self
                .coefficients
                .iter()
                .zip(given_values.iter().zip(self.given_mean.iter()))
                .map(|(b, (x, m))| b * (x - m))
                .sum::<f64>()
    }
}

/// Mean and variance of coordinate `target` given values of other coordinates.
pub fn conditional_moments(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    target: usize,
    given: &[(usize, f64)],
) -> Result<(f64, f64)> {
    let idx: Vec<usize> = given.iter().map(|g| g.0).collect();
    let vals: Vec<f64> = given.iter().map(|g| g.1).collect();
    let reg = ConditionalRegression::new(mean, cov, target, &idx)?;
    Ok((reg.mean_at(&vals), reg.variance))
}

/// `A = P·D` with `A·Aᵀ = Σ`: eigenvectors as columns of `P`, square roots of
/// eigenvalues on the diagonal of `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub transform: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub log_abs_det: f64,
}

/// Eigenvalues sorted descending; each eigenvector's first non-negligible
/// component is made positive.
pub fn standardizing_transform(cov: &DMatrix<f64>) -> Result<Standardization> {
    let d = cov.nrows();
    if cov.ncols() != d {
        return Err(Error::invalid("covariance must be square"));
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if (cov - cov.transpose()).amax() > 1e-10 * scale {
        return Err(Error::numerical("covariance is not symmetric"));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));
    let mut transform = DMatrix::zeros(d, d);
    let mut inverse = DMatrix::zeros(d, d);
    let mut log_abs_det = 0.0;
    for (col, &k) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[k];
        if !(lambda > 1e-14 * scale) || !lambda.is_finite() {
            return Err(Error::numerical(format!("covariance is not positive definite (eigenvalue {lambda:e})")));
        }
        let mut v = eig.eigenvectors.column(k).into_owned();
        let tol = 1e-12 * v.amax();
        if let Some(first) = v.iter().find(|c| c.abs() > tol) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        let s = lambda.sqrt();
        transform.set_column(col, &(&v * s));
        inverse.set_row(col, &(v.transpose() / s));
        log_abs_det += s.ln();
    }
    Ok(Standardization {
        transform,
        inverse,
        log_abs_det,
    })
}
