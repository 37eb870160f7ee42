use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::smolyak::{SparseGrid, SparseGridInterpolant};
use crate::error::Result;
use crate::normal::{standardizing_transform, Standardization};
use crate::special::LN_2PI;

/// A positive function on `ℝ^d` stored as `exp(c(z)) φ_d(z) / |det A|` with
/// `z = A⁻¹(x − μ)` and `c` interpolated on a sparse grid.
///
/// `c(z) = log f(Az + μ) + log|det A| − log φ_d(z)`, so the stored function
/// approximates `f` itself on `x`-space.
#[derive(Debug, Clone)]
pub struct StoredFunction {
    mean: DVector<f64>,
    standardization: Standardization,
    interp: SparseGridInterpolant,
}

/// Reusable buffers for repeated evaluation of one stored function.
#[derive(Debug, Clone)]
pub struct StoredScratch {
    z: Vec<f64>,
    weights: Vec<f64>,
    grad_z: Vec<f64>,
    hess_z: Vec<f64>,
}

fn log_phi_std(z: &[f64]) -> f64 {
    -0.5 * (z.len() as f64 * LN_2PI + z.iter().map(|v| v * v).sum::<f64>())
}

impl StoredFunction {
    /// Stores `exp(log_f)` on `grid` in coordinates standardized by `standardization`.
    pub fn build<F>(
        log_f: F,
        mean: DVector<f64>,
        standardization: Standardization,
        grid: Arc<SparseGrid>,
    ) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let d = mean.len();
        assert_eq!(grid.dim(), d, "grid dimension mismatch");
        let a = &standardization.transform;
        let log_det = standardization.log_abs_det;
        let interp = SparseGridInterpolant::build(grid, |z| {
            let mut x = mean.clone();
            for r in 0..d {
                for (c, zc) in z.iter().enumerate() {
                    x[r] += a[(r, c)] * zc;
                }
            }
            Ok(log_f(x.as_slice())? + log_det - log_phi_std(z))
        })?;
        Ok(StoredFunction {
            mean,
            standardization,
            interp,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.standardization.transform
    }

    pub fn inverse_transform(&self) -> &DMatrix<f64> {
        &self.standardization.inverse
    }

    pub fn log_abs_det(&self) -> f64 {
        self.standardization.log_abs_det
    }

    pub fn interpolant(&self) -> &SparseGridInterpolant {
        &self.interp
    }

    pub fn scratch(&self) -> StoredScratch {
        let d = self.dim();
        StoredScratch {
            z: vec![0.0; d],
            weights: self.interp.scratch(),
            grad_z: vec![0.0; d],
            hess_z: vec![0.0; d * d],
        }
    }

    fn standardize(&self, x: &[f64], z: &mut [f64]) {
        let inv = &self.standardization.inverse;
        let d = self.dim();
        for r in 0..d {
            let mut s = 0.0;
            for c in 0..d {
                s += inv[(r, c)] * (x[c] - self.mean[c]);
            }
            z[r] = s;
        }
    }

    /// `c_interp(z)` at standardized coordinates.
    pub fn log_ratio_at(&self, z: &[f64]) -> f64 {
        self.interp.eval(z)
    }

    pub fn eval_log(&self, x: &[f64]) -> f64 {
        let mut s = self.scratch();
        self.eval_log_with(x, &mut s)
    }

    pub fn eval_log_with(&self, x: &[f64], s: &mut StoredScratch) -> f64 {
        assert_eq!(x.len(), self.dim(), "dimension mismatch");
        self.standardize(x, &mut s.z);
        let c = self.interp.eval_with(&s.z, &mut s.weights);
        c + log_phi_std(&s.z) - self.standardization.log_abs_det
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_log(x).exp()
    }

    /// Log value, with gradient and Hessian in `x` written to `grad` (length `d`)
    /// and `hess` (row-major `d×d`).
    pub fn eval_log_derivatives_with(
        &self,
        x: &[f64],
        s: &mut StoredScratch,
        grad: &mut [f64],
        hess: &mut [f64],
    ) -> f64 {
        let d = self.dim();
        self.standardize(x, &mut s.z);
        let c = self
            .interp
            .eval_derivatives_with(&s.z, &mut s.weights, &mut s.grad_z, &mut s.hess_z);
        let inv = &self.standardization.inverse;
        // ∇_z of (c − ½|z|²), then pulled back through z = A⁻¹(x − μ).
        for i in 0..d {
            s.grad_z[i] -= s.z[i];
            s.hess_z[i * d + i] -= 1.0;
        }
        for a in 0..d {
            let mut g = 0.0;
            for i in 0..d {
                g += inv[(i, a)] * s.grad_z[i];
            }
            grad[a] = g;
        }
        for a in 0..d {
            for b in 0..=a {
                let mut h = 0.0;
                for i in 0..d {
                    let ia = inv[(i, a)];
                    if ia == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        h += ia * s.hess_z[i * d + j] * inv[(j, b)];
                    }
                }
                hess[a * d + b] = h;
                hess[b * d + a] = h;
            }
        }
        c + log_phi_std(&s.z) - self.standardization.log_abs_det
    }
}

/// Stores `exp(log_f)` relative to `N(mean, cov)` at level `k`.
pub fn store_function<F>(
    log_f: F,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    k: usize,
) -> Result<StoredFunction>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let standardization = standardizing_transform(cov)?;
    let grid = Arc::new(SparseGrid::new(mean.len(), k));
    StoredFunction::build(log_f, mean.clone(), standardization, grid)
}

pub fn eval_stored(sf: &StoredFunction, x: &[f64]) -> f64 {
    sf.eval(x)
}
