use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::normal::NormalApprox;

/// Quadratic log-modifier
/// `log h(x) = aᵀ(x − c) + ½ (x − c)ᵀ B (x − c)` with `log h(c) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifierH {
    pub center: DVector<f64>,
    pub linear: DVector<f64>,
    pub quadratic: DMatrix<f64>,
}

impl ModifierH {
    /// The modifier that makes `r = g·h` have zero gradient and Hessian
    /// `−Σ⁻¹` at `center`, given the gradient and Hessian of `log g` there.
    pub fn from_derivatives(
        center: DVector<f64>,
        cov: &DMatrix<f64>,
        grad_log_g: &DVector<f64>,
        hess_log_g: &DMatrix<f64>,
    ) -> Result<Self> {
        let d = center.len();
        if cov.shape() != (d, d) || grad_log_g.len() != d || hess_log_g.shape() != (d, d) {
            return Err(Error::invalid("modifier arguments have inconsistent dimensions"));
        }
        let precision = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::numerical("marginal covariance is not positive definite"))?
            .inverse();
        let mut quadratic = -precision - hess_log_g;
        quadratic = (&quadratic + quadratic.transpose()) * 0.5;
        Ok(ModifierH {
            center,
            linear: -grad_log_g,
            quadratic,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn log_h(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut lin = 0.0;
        let mut quad = 0.0;
        for i in 0..d {
            let di = x[i] - self.center[i];
            lin += self.linear[i] * di;
            let mut row = 0.5 * self.quadratic[(i, i)] * di;
            for j in 0..i {
                row += self.quadratic[(i, j)] * (x[j] - self.center[j]);
            }
            quad += row * di;
        }
        lin + quad
    }

    /// Writes `∇ log h(x)` into `grad`.
    pub fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let mut g = self.linear[i];
            for j in 0..d {
                g += self.quadratic[(i, j)] * (x[j] - self.center[j]);
            }
            grad[i] = g;
        }
    }
}

/// Builds the modifier for `subset` from central finite differences of
/// `log_g_marginal` at the normal-approximation mean of that subset.
///
/// Step for coordinate `i` is `10⁻⁴ (|μ_i| + σ_i)`, floored at `10⁻⁶`.
pub fn build_modifier<F>(na: &NormalApprox, subset: &[usize], log_g_marginal: F) -> Result<ModifierH>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let d = subset.len();
    if d == 0 {
        return Err(Error::invalid("modifier needs a non-empty subset"));
    }
    if subset.iter().any(|s| *s >= na.dim()) {
        return Err(Error::invalid("modifier subset out of range"));
    }
    let center = DVector::from_iterator(d, subset.iter().map(|s| na.mode[*s]));
    let cov = DMatrix::from_fn(d, d, |a, b| na.covariance[(subset[a], subset[b])]);
    let steps: Vec<f64> = (0..d)
        .map(|i| (1e-4 * (center[i].abs() + cov[(i, i)].sqrt())).max(1e-6))
        .collect();
    let probe = |offsets: &[(usize, f64)]| -> Result<f64> {
        let mut x: Vec<f64> = center.iter().copied().collect();
        for (i, o) in offsets {
            x[*i] += o;
        }
        let v = log_g_marginal(&x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numerical(format!("finite-difference probe is {v} at {x:?}")))
        }
    };
    let f0 = probe(&[])?;
    let mut grad = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let h = steps[i];
        let fp = probe(&[(i, h)])?;
        let fm = probe(&[(i, -h)])?;
        grad[i] = (fp - fm) / (2.0 * h);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let k = steps[j];
            let pp = probe(&[(i, h), (j, k)])?;
            let pm = probe(&[(i, h), (j, -k)])?;
            let mp = probe(&[(i, -h), (j, k)])?;
            let mm = probe(&[(i, -h), (j, -k)])?;
            let v = (pp - pm - mp + mm) / (4.0 * h * k);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    ModifierH::from_derivatives(center, &cov, &grad, &hess)
}
