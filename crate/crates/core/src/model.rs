//! Generalized linear mixed models with scaled-incidence random effects.
//!
//! The linear predictor is `η = Xβ + Z(ψ)u` where every column of `Z(ψ)` is a
//! fixed sparse column of signed multiplicities scaled by one entry of `ψ`,
//! and `u ~ N(0, I)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{log_normal_cdf, log_phi, logistic, softplus, inverse_mills, LN_2PI};

/// Response family and link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    BernoulliLogit,
    BernoulliProbit,
    /// Normal response with identity link and a known residual standard deviation.
    GaussianIdentity { sd: f64 },
}

impl Family {
    fn check_response(&self, y: f64) -> Result<()> {
        match self {
            Family::BernoulliLogit | Family::BernoulliProbit => {
                if y == 0.0 || y == 1.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("bernoulli response must be 0 or 1, got {y}")))
                }
            }
            Family::GaussianIdentity { .. } => {
                if y.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("gaussian response must be finite, got {y}")))
                }
            }
        }
    }

    /// `log f(y | η)`.
    pub fn log_density(&self, y: f64, eta: f64) -> Result<f64> {
        self.check_response(y)?;
        Ok(self.log_density_unchecked(y, eta))
    }

    pub(crate) fn log_density_unchecked(&self, y: f64, eta: f64) -> f64 {
        match *self {
            Family::BernoulliLogit => y * eta - softplus(eta),
            Family::BernoulliProbit => log_normal_cdf((2.0 * y - 1.0) * eta),
            Family::GaussianIdentity { sd } => log_phi((y - eta) / sd) - sd.ln(),
        }
    }

    /// `(log f, d/dη log f, d²/dη² log f)`.
    pub(crate) fn derivatives(&self, y: f64, eta: f64) -> (f64, f64, f64) {
        match *self {
            Family::BernoulliLogit => {
                let p = logistic(eta);
                (y * eta - softplus(eta), y - p, -p * (1.0 - p))
            }
            Family::BernoulliProbit => {
                let s = 2.0 * y - 1.0;
                let x = s * eta;
                let lambda = inverse_mills(x);
                (log_normal_cdf(x), s * lambda, -lambda * (x + lambda))
            }
            Family::GaussianIdentity { sd } => {
                let r = y - eta;
                let v = sd * sd;
                (-0.5 * r * r / v - sd.ln() - 0.5 * LN_2PI, r / v, -1.0 / v)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::BernoulliLogit => "bernoulli-logit",
            Family::BernoulliProbit => "bernoulli-probit",
            Family::GaussianIdentity { .. } => "gaussian-identity",
        }
    }
}

/// One non-zero entry of a row of the random-effect incidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Incidence {
    pub effect: usize,
    pub multiplicity: f64,
}

impl Incidence {
    pub fn new(effect: usize, multiplicity: f64) -> Self {
        Incidence { effect, multiplicity }
    }
}

/// Model structure plus (optionally) the observed response.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    num_effects: usize,
    fixed_design: DMatrix<f64>,
    incidence: Vec<Vec<Incidence>>,
    scale_map: Vec<usize>,
    num_scales: usize,
    family: Family,
    response: Option<Vec<f64>>,
    fixed_names: Vec<String>,
    scale_names: Vec<String>,
}

impl ModelSpec {
    /// Builds a model template without a response.
    ///
    /// `scale_map[j]` is the index into `ψ` that scales effect `j`.
    pub fn new(
        num_effects: usize,
        fixed_design: DMatrix<f64>,
        incidence: Vec<Vec<Incidence>>,
        scale_map: Vec<usize>,
        family: Family,
    ) -> Result<Self> {
        let m = incidence.len();
        if fixed_design.nrows() != m {
            return Err(Error::invalid(format!(
                "fixed design has {} rows but there are {m} observations",
                fixed_design.nrows()
            )));
        }
        if scale_map.len() != num_effects {
            return Err(Error::invalid(format!(
                "scale map has {} entries for {num_effects} effects",
                scale_map.len()
            )));
        }
        for (i, row) in incidence.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::invalid(format!("observation {i} touches no random effect")));
            }
            for entry in row {
                if entry.effect >= num_effects {
                    return Err(Error::invalid(format!(
                        "observation {i} references effect {} but there are only {num_effects}",
                        entry.effect
                    )));
                }
                if !entry.multiplicity.is_finite() {
                    return Err(Error::invalid(format!("observation {i} has a non-finite multiplicity")));
                }
            }
        }
        if let Family::GaussianIdentity { sd } = family {
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::invalid(format!("residual sd must be positive, got {sd}")));
            }
        }
        let num_scales = scale_map.iter().map(|s| s + 1).max().unwrap_or(0);
        let p = fixed_design.ncols();
        Ok(ModelSpec {
            num_effects,
            fixed_design,
            incidence,
            scale_map,
            num_scales,
            family,
            response: None,
            fixed_names: (0..p).map(|j| format!("beta{j}")).collect(),
            scale_names: (0..num_scales).map(|j| format!("sigma{j}")).collect(),
        })
    }

    /// Attaches a response vector, validating it against the family.
    pub fn with_response(mut self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.num_obs() {
            return Err(Error::invalid(format!(
                "response has {} entries for {} observations",
                y.len(),
                self.num_obs()
            )));
        }
        for v in &y {
            self.family.check_response(*v)?;
        }
        self.response = Some(y);
        Ok(self)
    }

    pub fn with_names(mut self, fixed: Vec<String>, scales: Vec<String>) -> Result<Self> {
        if fixed.len() != self.num_fixed() || scales.len() != self.num_scales {
            return Err(Error::invalid("parameter name counts do not match the model"));
        }
        self.fixed_names = fixed;
        self.scale_names = scales;
        Ok(self)
    }

    pub fn num_obs(&self) -> usize {
        self.incidence.len()
    }

    pub fn num_effects(&self) -> usize {
        self.num_effects
    }

    pub fn num_fixed(&self) -> usize {
        self.fixed_design.ncols()
    }

    pub fn num_scales(&self) -> usize {
        self.num_scales
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn fixed_design(&self) -> &DMatrix<f64> {
        &self.fixed_design
    }

    pub fn incidence(&self) -> &[Vec<Incidence>] {
        &self.incidence
    }

    pub fn scale_map(&self) -> &[usize] {
        &self.scale_map
    }

    pub fn response(&self) -> Option<&[f64]> {
        self.response.as_deref()
    }

    pub fn fixed_names(&self) -> &[String] {
        &self.fixed_names
    }

    pub fn scale_names(&self) -> &[String] {
        &self.scale_names
    }

    pub(crate) fn require_response(&self) -> Result<&[f64]> {
        self.response
            .as_deref()
            .ok_or_else(|| Error::invalid("model has no response attached"))
    }

    pub(crate) fn check_theta(&self, theta: &Theta) -> Result<()> {
        if theta.beta.len() != self.num_fixed() {
            return Err(Error::invalid(format!(
                "beta has length {} but the design has {} columns",
                theta.beta.len(),
                self.num_fixed()
            )));
        }
        if theta.psi.len() != self.num_scales {
            return Err(Error::invalid(format!(
                "psi has length {} but the model has {} scale parameters",
                theta.psi.len(),
                self.num_scales
            )));
        }
        theta.validate()
    }

    /// Precomputes `X_i β` and the scaled incidence for a given `θ`.
    pub fn predictor(&self, theta: &Theta) -> Result<Predictor> {
        self.check_theta(theta)?;
        let offsets = (0..self.num_obs())
            .map(|i| {
                self.fixed_design
                    .row(i)
                    .iter()
                    .zip(&theta.beta)
                    .map(|(x, b)| x * b)
                    .sum()
            })
            .collect();
        let terms = self
            .incidence
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| (e.effect, e.multiplicity * theta.psi[self.scale_map[e.effect]]))
                    .collect()
            })
            .collect();
        Ok(Predictor { offsets, terms })
    }
}

/// Model parameters `θ = (β, ψ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
}

impl Theta {
    pub fn new(beta: Vec<f64>, psi: Vec<f64>) -> Result<Self> {
        let t = Theta { beta, psi };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.psi.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::invalid(format!("scale parameters must be positive, got {p}")));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("fixed effects must be finite"));
        }
        Ok(())
    }

    /// Flattens to `(β, ψ)`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.beta.iter().chain(&self.psi).copied().collect()
    }

    pub fn from_slice(values: &[f64], num_fixed: usize) -> Result<Self> {
        Theta::new(values[..num_fixed].to_vec(), values[num_fixed..].to_vec())
    }

    /// Copy with every scale raised to at least `floor`. Used to warm-start an
    /// optimizer from an estimate that sits on the `ψ = 0` boundary, where a
    /// log-scale simplex would have to crawl back.
    pub fn with_scale_floor(&self, floor: f64) -> Theta {
        Theta {
            beta: self.beta.clone(),
            psi: self.psi.iter().map(|p| p.max(floor)).collect(),
        }
    }
}

/// `η` as an affine function of `u` for a fixed `θ`.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub(crate) offsets: Vec<f64>,
    /// Per observation: `(effect, multiplicity · ψ_scale(effect))`.
    pub(crate) terms: Vec<Vec<(usize, f64)>>,
}

impl Predictor {
    #[inline]
    pub fn eta(&self, i: usize, u: &[f64]) -> f64 {
        self.offsets[i] + self.terms[i].iter().map(|(j, c)| c * u[*j]).sum::<f64>()
    }

    pub fn terms(&self, i: usize) -> &[(usize, f64)] {
        &self.terms[i]
    }
}

/// `η = Xβ + Z(ψ)u`.
pub fn linear_predictor(spec: &ModelSpec, theta: &Theta, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != spec.num_effects() {
        return Err(Error::invalid(format!(
            "u has length {} but the model has {} effects",
            u.len(),
            spec.num_effects()
        )));
    }
    let pred = spec.predictor(theta)?;
    Ok((0..spec.num_obs()).map(|i| pred.eta(i, u)).collect())
}

/// `log f(y_i | η_i)` for one observation.
pub fn log_density_obs(family: Family, y: f64, eta: f64) -> Result<f64> {
    family.log_density(y, eta)
}

/// `log g(u | y, θ) = Σ_i log f(y_i | η_i) + Σ_j log φ(u_j)`.
pub fn log_integrand(spec: &ModelSpec, theta: &Theta, u: &[f64]) -> Result<f64> {
    let y = spec.require_response()?;
    let eta = linear_predictor(spec, theta, u)?;
    let family = spec.family();
    let obs: f64 = y
        .iter()
        .zip(&eta)
        .map(|(yi, ei)| family.log_density_unchecked(*yi, *ei))
        .sum();
    Ok(obs + u.iter().map(|v| log_phi(*v)).sum::<f64>())
}

/// Draws `u ~ N(0, I)` then `y` from the family, returning the filled model
/// and the latent effects. Deterministic given `seed`.
pub fn simulate_with_effects(
    template: &ModelSpec,
    theta: &Theta,
    seed: u64,
) -> Result<(ModelSpec, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..template.num_effects())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let eta = linear_predictor(template, theta, &u)?;
    let y = eta
        .iter()
        .map(|e| match template.family() {
            Family::BernoulliLogit => {
                let p = logistic(*e);
                if rng.random::<f64>() < p { 1.0 } else { 0.0 }
            }
            Family::BernoulliProbit => {
                let z: f64 = rng.sample(StandardNormal);
                if z < *e { 1.0 } else { 0.0 }
            }
            Family::GaussianIdentity { sd } => {
                let z: f64 = rng.sample(StandardNormal);
                e + sd * z
            }
        })
        .collect();
    let spec = template.clone().with_response(y)?;
    Ok((spec, u))
}

/// [`simulate_with_effects`] without the latent draws.
pub fn simulate(template: &ModelSpec, theta: &Theta, seed: u64) -> Result<ModelSpec> {
    simulate_with_effects(template, theta, seed).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pair_template(family: Family) -> ModelSpec {
        // Matches (0 vs 1), (1 vs 2).
        let inc = vec![
            vec![Incidence::new(0, 1.0), Incidence::new(1, -1.0)],
            vec![Incidence::new(1, 1.0), Incidence::new(2, -1.0)],
        ];
        ModelSpec::new(3, DMatrix::zeros(2, 1), inc, vec![0; 3], family).unwrap()
    }

    #[test]
    fn zero_effects_give_zero_predictor() {
        let spec = pair_template(Family::BernoulliLogit);
        let theta = Theta::new(vec![0.0], vec![1.0]).unwrap();
        assert_eq!(linear_predictor(&spec, &theta, &[0.0; 3]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn pairwise_predictor_is_ability_difference() {
        let spec = pair_template(Family::BernoulliLogit);
        let theta = Theta::new(vec![0.0], vec![1.0]).unwrap();
        let eta = linear_predictor(&spec, &theta, &[0.3, -1.1, 2.0]).unwrap();
        assert_abs_diff_eq!(eta[0], 0.3 + 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(eta[1], -1.1 - 2.0, epsilon = 1e-15);
    }

    #[test]
    fn three_level_item_predictor() {
        // η = α + βx + σ1 u + σ2 v with α=-0.5, β=0.5, x=1, σ1=1, σ2=0.5, u=v=1.
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let inc = vec![vec![Incidence::new(0, 1.0), Incidence::new(1, 1.0)]];
        let spec = ModelSpec::new(2, x, inc, vec![0, 1], Family::BernoulliLogit).unwrap();
        let theta = Theta::new(vec![-0.5, 0.5], vec![1.0, 0.5]).unwrap();
        let eta = linear_predictor(&spec, &theta, &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(eta[0], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = pair_template(Family::BernoulliLogit);
        let theta = Theta::new(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(
            linear_predictor(&spec, &theta, &[0.0; 2]),
            Err(Error::InvalidArgument(_))
        ));
        let bad = Theta::new(vec![0.0, 1.0], vec![1.0]).unwrap();
        assert!(linear_predictor(&spec, &bad, &[0.0; 3]).is_err());
        assert!(Theta::new(vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn scale_floor_only_raises() {
        let t = Theta::new(vec![-2.0], vec![1e-7, 0.8]).unwrap().with_scale_floor(0.1);
        assert_eq!(t.beta, vec![-2.0]);
        assert_eq!(t.psi, vec![0.1, 0.8]);
    }

    #[test]
    fn invalid_templates_are_rejected() {
        let inc = vec![vec![Incidence::new(3, 1.0)]];
        assert!(ModelSpec::new(2, DMatrix::zeros(1, 0), inc, vec![0, 0], Family::BernoulliLogit).is_err());
        let empty = vec![vec![]];
        assert!(ModelSpec::new(1, DMatrix::zeros(1, 0), empty, vec![0], Family::BernoulliLogit).is_err());
        let inc = vec![vec![Incidence::new(0, 1.0)]];
        assert!(ModelSpec::new(1, DMatrix::zeros(1, 0), inc, vec![0], Family::GaussianIdentity { sd: 0.0 }).is_err());
    }

    #[test]
    fn observation_log_densities() {
        let half = 0.5f64.ln();
        assert_abs_diff_eq!(log_density_obs(Family::BernoulliLogit, 1.0, 0.0).unwrap(), half, epsilon = 1e-15);
        assert_abs_diff_eq!(log_density_obs(Family::BernoulliProbit, 1.0, 0.0).unwrap(), half, epsilon = 1e-15);
        assert!(log_density_obs(Family::BernoulliLogit, 0.5, 0.0).is_err());
        assert!(log_density_obs(Family::BernoulliProbit, 2.0, 0.0).is_err());
    }

    #[test]
    fn logit_far_tail_does_not_overflow() {
        // log(1/(1+e^40)) = -40 - log(1+e^{-40}); e^{-40} ≈ 4.248354255291589e-18.
        let expected = -40.0 - 4.248_354_255_291_589e-18;
        let v = log_density_obs(Family::BernoulliLogit, 1.0, -40.0).unwrap();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-14);
        let v = log_density_obs(Family::BernoulliLogit, 1.0, -1000.0).unwrap();
        assert_abs_diff_eq!(v, -1000.0, epsilon = 1e-12);
        assert!(log_density_obs(Family::BernoulliProbit, 1.0, -1000.0).unwrap().is_finite());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let fams = [
            Family::BernoulliLogit,
            Family::BernoulliProbit,
            Family::GaussianIdentity { sd: 0.7 },
        ];
        for fam in fams {
            for y in [0.0, 1.0] {
                for eta in [-3.0, -0.4, 0.0, 1.3, 6.0] {
                    let (v, d1, d2) = fam.derivatives(y, eta);
                    let h = 1e-5;
                    let f = |e: f64| fam.log_density_unchecked(y, e);
                    assert_abs_diff_eq!(v, f(eta), epsilon = 1e-14);
                    assert_abs_diff_eq!(d1, (f(eta + h) - f(eta - h)) / (2.0 * h), epsilon = 1e-7);
                    let (_, a, _) = fam.derivatives(y, eta + h);
                    let (_, b, _) = fam.derivatives(y, eta - h);
                    assert_abs_diff_eq!(d2, (a - b) / (2.0 * h), epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn integrand_prior_only() {
        let x = DMatrix::zeros(0, 0);
        let spec = ModelSpec::new(1, x, vec![], vec![0], Family::BernoulliLogit)
            .unwrap()
            .with_response(vec![])
            .unwrap();
        let theta = Theta::new(vec![], vec![1.0]).unwrap();
        assert_abs_diff_eq!(log_integrand(&spec, &theta, &[0.0]).unwrap(), -0.5 * LN_2PI, epsilon = 1e-15);
    }

    #[test]
    fn integrand_single_logit_observation() {
        let inc = vec![vec![Incidence::new(0, 1.0)]];
        let spec = ModelSpec::new(1, DMatrix::zeros(1, 1), inc, vec![0], Family::BernoulliLogit)
            .unwrap()
            .with_response(vec![1.0])
            .unwrap();
        let theta = Theta::new(vec![0.0], vec![1.0]).unwrap();
        let expected = 0.5f64.ln() - 0.5 * LN_2PI;
        assert_abs_diff_eq!(log_integrand(&spec, &theta, &[0.0]).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn integrand_is_term_by_term_sum() {
        let template = pair_template(Family::BernoulliProbit);
        let theta = Theta::new(vec![0.2], vec![1.3]).unwrap();
        let spec = simulate(&template, &theta, 5).unwrap();
        let u = [0.4, -0.2, 1.7];
        let eta = linear_predictor(&spec, &theta, &u).unwrap();
        let y = spec.response().unwrap();
        let mut oracle = 0.0;
        for i in 0..2 {
            oracle += log_density_obs(spec.family(), y[i], eta[i]).unwrap();
        }
        for v in u {
            oracle += -0.5 * v * v - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
        assert_abs_diff_eq!(log_integrand(&spec, &theta, &u).unwrap(), oracle, epsilon = 1e-13);
    }

    #[test]
    fn shifting_all_abilities_leaves_pairwise_predictor_unchanged() {
        let spec = pair_template(Family::BernoulliLogit);
        let theta = Theta::new(vec![0.0], vec![1.7]).unwrap();
        let u = [0.1, 0.5, -0.9];
        let shifted: Vec<f64> = u.iter().map(|v| v + 2.5).collect();
        let a = linear_predictor(&spec, &theta, &u).unwrap();
        let b = linear_predictor(&spec, &theta, &shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let template = pair_template(Family::BernoulliLogit);
        let theta = Theta::new(vec![0.0], vec![1.0]).unwrap();
        let a = simulate(&template, &theta, 11).unwrap();
        let b = simulate(&template, &theta, 11).unwrap();
        assert_eq!(a.response(), b.response());
    }

    #[test]
    fn gaussian_simulation_with_tiny_noise_tracks_predictor() {
        let inc = (0..20).map(|i| vec![Incidence::new(i % 4, 1.0)]).collect();
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64 / 10.0);
        let template = ModelSpec::new(4, x, inc, vec![0; 4], Family::GaussianIdentity { sd: 1e-8 }).unwrap();
        let theta = Theta::new(vec![0.7], vec![1.2]).unwrap();
        let (spec, u) = simulate_with_effects(&template, &theta, 3).unwrap();
        let eta = linear_predictor(&spec, &theta, &u).unwrap();
        for (y, e) in spec.response().unwrap().iter().zip(&eta) {
            assert!((y - e).abs() < 1e-6);
        }
    }

    #[test]
    fn large_positive_predictor_gives_all_successes() {
        let inc = (0..1000).map(|i| vec![Incidence::new(i % 10, 1.0)]).collect();
        let x = DMatrix::from_element(1000, 1, 1.0);
        let template = ModelSpec::new(10, x, inc, vec![0; 10], Family::BernoulliLogit).unwrap();
        let theta = Theta::new(vec![20.0], vec![1.0]).unwrap();
        let spec = simulate(&template, &theta, 99).unwrap();
        assert!(spec.response().unwrap().iter().all(|y| *y == 1.0));
    }

    #[test]
    fn integrand_is_finite_for_extreme_effects() {
        let template = pair_template(Family::BernoulliProbit);
        let theta = Theta::new(vec![0.0], vec![3.0]).unwrap();
        let spec = simulate(&template, &theta, 1).unwrap();
        let v = log_integrand(&spec, &theta, &[40.0, -40.0, 40.0]).unwrap();
        assert!(v.is_finite());
    }
}
