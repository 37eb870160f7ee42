use nalgebra::DMatrix;

/// Natural cubic spline through fixed knots, as a linear map from knot values
/// to interpolant. Outside the outermost knots the spline is held constant.
#[derive(Debug, Clone)]
pub struct NaturalSplineBasis {
    knots: Vec<f64>,
    /// Row `i` maps knot values to the spline's second derivative at knot `i`.
    second: DMatrix<f64>,
}

impl NaturalSplineBasis {
    pub fn new(knots: Vec<f64>) -> Self {
        let m = knots.len();
        assert!(m >= 1, "spline needs at least one knot");
        assert!(knots.windows(2).all(|w| w[0] < w[1]), "knots must be increasing");
        let mut second = DMatrix::zeros(m, m);
        if m >= 3 {
            let inner = m - 2;
            let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
            let mut tri = DMatrix::zeros(inner, inner);
            let mut rhs = DMatrix::zeros(inner, m);
            for r in 0..inner {
                let i = r + 1;
                tri[(r, r)] = 2.0 * (h[i - 1] + h[i]);
                if r > 0 {
                    tri[(r, r - 1)] = h[i - 1];
                }
                if r + 1 < inner {
                    tri[(r, r + 1)] = h[i];
                }
                rhs[(r, i - 1)] = 6.0 / h[i - 1];
                rhs[(r, i)] = -6.0 / h[i - 1] - 6.0 / h[i];
                rhs[(r, i + 1)] = 6.0 / h[i];
            }
            let solved = tri.lu().solve(&rhs).expect("spline system is diagonally dominant");
            second.view_mut((1, 0), (inner, m)).copy_from(&solved);
        }
        NaturalSplineBasis { knots, second }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Writes the weights `a_j(x)` (or their `order`-th derivative, `order ≤ 2`)
    /// into `out`, so that the spline value is `Σ_j y_j a_j(x)`.
    pub fn weights(&self, x: f64, order: usize, out: &mut [f64]) {
        let m = self.knots.len();
        debug_assert_eq!(out.len(), m);
        out.fill(0.0);
        if m == 1 {
            if order == 0 {
                out[0] = 1.0;
            }
            return;
        }
        let first = self.knots[0];
        let last = self.knots[m - 1];
        if x <= first || x >= last {
            if order == 0 {
                out[if x <= first { 0 } else { m - 1 }] = 1.0;
            }
            return;
        }
        let t = self.knots.partition_point(|k| *k <= x).saturating_sub(1).min(m - 2);
        let h = self.knots[t + 1] - self.knots[t];
        let a = (self.knots[t + 1] - x) / h;
        let b = 1.0 - a;
        let row_t = self.second.row(t);
        let row_u = self.second.row(t + 1);
        let (ct, cu) = match order {
            0 => {
                out[t] += a;
                out[t + 1] += b;
                (h * h / 6.0 * (a * a * a - a), h * h / 6.0 * (b * b * b - b))
            }
            1 => {
                out[t] -= 1.0 / h;
                out[t + 1] += 1.0 / h;
                (-(3.0 * a * a - 1.0) * h / 6.0, (3.0 * b * b - 1.0) * h / 6.0)
            }
            2 => (a, b),
            _ => panic!("derivative order {order} not supported"),
        };
        for j in 0..m {
            out[j] += ct * row_t[j] + cu * row_u[j];
        }
    }

    /// Spline value at `x` for knot values `y`.
    pub fn eval(&self, y: &[f64], x: f64) -> f64 {
        let mut w = vec![0.0; self.len()];
        self.weights(x, 0, &mut w);
        w.iter().zip(y).map(|(a, b)| a * b).sum()
    }
}
