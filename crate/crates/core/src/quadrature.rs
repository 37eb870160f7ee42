//! Gauss–Hermite rules for integrals against a Gaussian weight.

use nalgebra::DMatrix;

use crate::special::{log_phi, log_sum_exp};

/// Gauss–Hermite rule for the standard normal weight: `E[f(T)] ≈ Σ w_q f(t_q)`
/// with `T ~ N(0, 1)` and `Σ w_q = 1`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
    /// `ln w_q - ln φ(t_q)`, the weight for integrating against Lebesgue measure.
    log_ratio: Vec<f64>,
}

impl GaussHermite {
    /// Rule with `n ≥ 1` nodes, computed by Newton iteration on the
    /// orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
        let mut x = vec![0.0; n];
        let mut ln_w = vec![0.0; n];
        let nf = n as f64;
        let half = n.div_ceil(2);
        // Starting values from the Jacobi matrix, polished by Newton below.
        let jacobi = DMatrix::from_fn(n, n, |r, c| {
            if r + 1 == c || c + 1 == r {
                (r.max(c) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut start: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        start.sort_by(|a, b| b.total_cmp(a));
        for i in 0..half {
            let mut z = start[i];
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            let lw = std::f64::consts::LN_2 - 2.0 * pp.abs().ln();
            ln_w[i] = lw;
            ln_w[n - 1 - i] = lw;
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        // Physicists' rule (weight e^{-x²}) to standard-normal weight.
        let half_ln_pi = 0.5 * std::f64::consts::PI.ln();
        let nodes: Vec<f64> = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
        let log_weights: Vec<f64> = ln_w.iter().map(|w| w - half_ln_pi).collect();
        let log_ratio = nodes
            .iter()
            .zip(&log_weights)
            .map(|(t, w)| w - log_phi(*t))
            .collect();
        let mut rule = GaussHermite {
            nodes,
            log_weights,
            log_ratio,
        };
        rule.reverse();
        rule
    }

    fn reverse(&mut self) {
        // Ascending node order.
        self.nodes.reverse();
        self.log_weights.reverse();
        self.log_ratio.reverse();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn log_ratios(&self) -> &[f64] {
        &self.log_ratio
    }

    /// `ln ∫ exp(log_f(u)) du` using the rule recentred at `center` and
    /// rescaled by `scale`.
    pub fn integrate_log<F: FnMut(f64) -> f64>(&self, center: f64, scale: f64, mut log_f: F) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.log_ratio)
            .map(|(t, r)| r + log_f(center + scale * t))
            .collect();
        scale.ln() + log_sum_exp(&terms)
    }
}
