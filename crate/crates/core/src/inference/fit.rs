use std::time::Instant;

use nalgebra::{Cholesky, DMatrix};
use serde::Serialize;

use super::nelder_mead::{nelder_mead, NelderMeadOptions};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Theta};
use crate::normal::laplace_loglik;
use crate::seqreduce::{sequential_reduction_loglik, SrConfig};

/// Which likelihood approximation to maximize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Approximation {
    Laplace,
    SequentialReduction(SrConfig),
}

impl Approximation {
    pub fn loglik(&self, spec: &ModelSpec, theta: &Theta) -> Result<f64> {
        match self {
            Approximation::Laplace => laplace_loglik(spec, theta),
            Approximation::SequentialReduction(cfg) => sequential_reduction_loglik(spec, theta, *cfg),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Approximation::Laplace => "laplace".to_string(),
            Approximation::SequentialReduction(cfg) => format!("sr(k={})", cfg.level),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub optimizer: NelderMeadOptions,
    pub standard_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            optimizer: NelderMeadOptions::default(),
            standard_errors: true,
        }
    }
}

/// Standard errors from the observed information, or the reason they are absent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StandardErrors {
    pub values: Option<Vec<f64>>,
    /// Observed information (negative Hessian), row by row.
    pub information: Vec<Vec<f64>>,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub standard_errors: Option<StandardErrors>,
    pub loglik: f64,
    pub approximation: Approximation,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub elapsed_ms: f64,
}

impl FitResult {
    pub fn ms_per_evaluation(&self) -> f64 {
        self.elapsed_ms / self.evaluations.max(1) as f64
    }
}

fn to_theta(x: &[f64], num_fixed: usize) -> Result<Theta> {
    let beta = x[..num_fixed].to_vec();
    let psi = x[num_fixed..].iter().map(|v| v.exp()).collect();
    Theta::new(beta, psi)
}

pub fn fit_mle(spec: &ModelSpec, approximation: Approximation, init: &Theta) -> Result<FitResult> {
    fit_mle_with(spec, approximation, init, &FitOptions::default())
}

/// Nelder–Mead on `(β, log ψ)` followed by one restart from the incumbent.
pub fn fit_mle_with(
    spec: &ModelSpec,
    approximation: Approximation,
    init: &Theta,
    options: &FitOptions,
) -> Result<FitResult> {
    spec.check_theta(init)?;
    spec.require_response()?;
    let start = Instant::now();
    let p = spec.num_fixed();
    let objective = |x: &[f64]| -> f64 {
        match to_theta(x, p).and_then(|t| approximation.loglik(spec, &t)) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };
    let x0: Vec<f64> = init
        .beta
        .iter()
        .copied()
        .chain(init.psi.iter().map(|v| v.ln()))
        .collect();
    if !objective(&x0).is_finite() {
        return Err(Error::numerical(format!(
            "{} log-likelihood is not finite at the initial value",
            approximation.label()
        )));
    }
    let first = nelder_mead(objective, &x0, &options.optimizer);
    let second = nelder_mead(objective, &first.point, &options.optimizer);
    let best = if second.value <= first.value { &second } else { &first };
    let theta_hat = to_theta(&best.point, p)?;
    let loglik = -best.value;
    let evaluations = first.evaluations + second.evaluations;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    let standard_errors = options.standard_errors.then(|| {
        standard_errors(
            |v: &[f64]| {
                let t = Theta::from_slice(v, p)?;
                approximation.loglik(spec, &t)
            },
            &theta_hat.to_vec(),
        )
    });
    Ok(FitResult {
        theta_hat,
        standard_errors,
        loglik,
        approximation,
        iterations: first.iterations + second.iterations,
        evaluations,
        converged: second.converged,
        elapsed_ms,
    })
}

/// Standard errors with relative step `10⁻³`.
pub fn standard_errors<F>(loglik: F, theta_hat: &[f64]) -> StandardErrors
where
    F: Fn(&[f64]) -> Result<f64>,
{
    standard_errors_with_step(loglik, theta_hat, 1e-3)
}

/// Central-difference observed information on the untransformed scale with
/// step `rel_step · max(|θ_i|, 0.1)`.
pub fn standard_errors_with_step<F>(loglik: F, theta_hat: &[f64], rel_step: f64) -> StandardErrors
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let n = theta_hat.len();
    let steps: Vec<f64> = theta_hat.iter().map(|t| rel_step * t.abs().max(0.1)).collect();
    let probe = |offsets: &[(usize, f64)]| -> Result<f64> {
        let mut x = theta_hat.to_vec();
        for (i, o) in offsets {
            x[*i] += o;
        }
        let v = loglik(&x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numerical(format!("log-likelihood is {v} at {x:?}")))
        }
    };
    let hessian = || -> Result<DMatrix<f64>> {
        let f0 = probe(&[])?;
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            let a = steps[i];
            h[(i, i)] = (probe(&[(i, a)])? - 2.0 * f0 + probe(&[(i, -a)])?) / (a * a);
            for j in 0..i {
                let b = steps[j];
                let v = (probe(&[(i, a), (j, b)])? - probe(&[(i, a), (j, -b)])?
                    - probe(&[(i, -a), (j, b)])?
                    + probe(&[(i, -a), (j, -b)])?)
                    / (4.0 * a * b);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok(h)
    };
    let information = match hessian() {
        Ok(h) => -h,
        Err(e) => {
            return StandardErrors {
                values: None,
                information: Vec::new(),
                diagnostic: Some(format!("information could not be computed: {e}")),
            }
        }
    };
    let rows = (0..n)
        .map(|i| information.row(i).iter().copied().collect())
        .collect();
    match Cholesky::new(information.clone()) {
        Some(chol) => {
            let inv = chol.inverse();
            StandardErrors {
                values: Some((0..n).map(|i| inv[(i, i)].sqrt()).collect()),
                information: rows,
                diagnostic: None,
            }
        }
        None => StandardErrors {
            values: None,
            information: rows,
            diagnostic: Some("observed information is not positive definite".to_string()),
        },
    }
}
