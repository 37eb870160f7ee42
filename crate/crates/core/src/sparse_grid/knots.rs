use crate::special::normal_quantile;

use super::spline::NaturalSplineBasis;

/// Number of knots at level `l`: 1 for `l = 1`, `2^l - 1` beyond.
pub fn level_count(l: usize) -> usize {
    assert!(l >= 1, "levels start at 1");
    (1usize << l) - 1
}

/// Knot spread for storage level `k`.
pub fn tau_schedule(k: usize) -> f64 {
    1.0 + k as f64 / 2.0
}

/// The `m_l` equally spaced quantiles `j/(m_l+1)` of `N(0, τ²)`, ascending.
///
/// Probabilities are dyadic, so quantiles of a level reappear bit-for-bit at
/// every finer level. The set is exactly symmetric about zero.
pub fn knots_1d(l: usize, tau: f64) -> Vec<f64> {
    let m = level_count(l);
    let denom = (m + 1) as f64;
    let mut out = vec![0.0; m];
    for j in 1..=m / 2 {
        let q = tau * normal_quantile(j as f64 / denom);
        out[j - 1] = q;
        out[m - j] = -q;
    }
    out
}

/// Knots and spline operators for levels `1..=max_level` at a fixed `τ`.
#[derive(Debug, Clone)]
pub struct KnotLadder {
    pub tau: f64,
    levels: Vec<NaturalSplineBasis>,
}

impl KnotLadder {
    pub fn new(max_level: usize, tau: f64) -> Self {
        let levels = (1..=max_level)
            .map(|l| NaturalSplineBasis::new(knots_1d(l, tau)))
            .collect();
        KnotLadder { tau, levels }
    }

    pub fn max_level(&self) -> usize {
        self.levels.len()
    }

    pub fn knots_at(&self, l: usize) -> &[f64] {
        self.levels[l - 1].knots()
    }

    pub fn basis(&self, l: usize) -> &NaturalSplineBasis {
        &self.levels[l - 1]
    }
}
