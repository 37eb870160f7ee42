#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqred::designs::Tournament;
use seqred::model::{log_integrand, simulate, Incidence};
use seqred::{posterior_mode, Family, ModelSpec, Theta};

/// Orthonormal Hermite values `(p_{n-1}(x), p_n(x))` for the standard normal weight.
fn hermite_pair(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (prev, cur)
}

/// Gauss–Hermite rule for the standard normal weight: Jacobi-matrix
/// eigenvalues polished by Newton, weights `1 / (n p_{n-1}(x)²)`.
pub fn gh_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let j = DMatrix::from_fn(n, n, |r, c| {
        if r + 1 == c || c + 1 == r {
            (r.max(c) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(j).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (pm, pn) = hermite_pair(n, *x);
            *x -= pn / ((n as f64).sqrt() * pm);
        }
        let (pm, _) = hermite_pair(n, *x);
        weights.push(1.0 / (n as f64 * pm * pm));
    }
    (nodes, weights)
}

/// `ln ∫ g(u) du` by a dense tensor rule centred and scaled by the Laplace
/// approximation.
pub fn dense_oracle(spec: &ModelSpec, theta: &Theta, per_dim: usize) -> f64 {
    let na = posterior_mode(spec, theta).unwrap();
    let n = na.dim();
    let l = na.covariance.clone().cholesky().unwrap().l();
    let log_det = l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let (t, w) = gh_rule(per_dim);
    let ln_w: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let total = per_dim.pow(n as u32);
    let mut terms = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut u = vec![0.0; n];
    for flat in 0..total {
        let mut rem = flat;
        for i in 0..n {
            idx[i] = rem % per_dim;
            rem /= per_dim;
        }
        let mut sq = 0.0;
        let mut lw = 0.0;
        for i in 0..n {
            sq += t[idx[i]] * t[idx[i]];
            lw += ln_w[idx[i]];
        }
        for r in 0..n {
            let mut s = na.mode[r];
            for c in 0..=r {
                s += l[(r, c)] * t[idx[c]];
            }
            u[r] = s;
        }
        let lg = log_integrand(spec, theta, &u).unwrap();
        terms.push(lw + lg + 0.5 * sq + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln());
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    log_det + m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Exact marginal log-likelihood of a gaussian-identity model.
pub fn gaussian_closed_form(spec: &ModelSpec, theta: &Theta) -> f64 {
    let Family::GaussianIdentity { sd } = spec.family() else {
        panic!("closed form needs a gaussian model")
    };
    let m = spec.num_obs();
    let mut z = DMatrix::<f64>::zeros(m, spec.num_effects());
    for (i, row) in spec.incidence().iter().enumerate() {
        for e in row {
            z[(i, e.effect)] += e.multiplicity * theta.psi[spec.scale_map()[e.effect]];
        }
    }
    let v = &z * z.transpose() + DMatrix::identity(m, m) * (sd * sd);
    let mean = spec.fixed_design() * DVector::from_vec(theta.beta.clone());
    let r = DVector::from_column_slice(spec.response().unwrap()) - mean;
    let chol = v.cholesky().unwrap();
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + r.dot(&chol.solve(&r)))
}

/// A random binary model with at most three effects and a single covariate.
pub fn random_small_model(seed: u64) -> (ModelSpec, Theta) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3usize);
    let m = rng.random_range(2..=6usize);
    let family = if rng.random::<bool>() {
        Family::BernoulliProbit
    } else {
        Family::BernoulliLogit
    };
    let mut incidence = Vec::new();
    for _ in 0..m {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            incidence.push(vec![Incidence::new(a, 1.0)]);
        } else {
            incidence.push(vec![Incidence::new(a, 1.0), Incidence::new(b, -1.0)]);
        }
    }
    let x = DMatrix::from_fn(m, 1, |_, _| rng.random_range(-1.0..1.0));
    let template = ModelSpec::new(n, x, incidence, vec![0; n], family).unwrap();
    let theta = Theta::new(vec![rng.random_range(-1.0..1.0)], vec![rng.random_range(0.5..2.5)]).unwrap();
    let spec = simulate(&template, &theta, seed + 1000).unwrap();
    (spec, theta)
}

/// A random gaussian pairwise model with at most 50 effects and width at most 4.
pub fn random_gaussian_model(seed: u64) -> (ModelSpec, Theta) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let players = rng.random_range(5..=50usize);
    let clique = rng.random_range(2..=4usize);
    let pairs = rng.random_range(players..=2 * players);
    let sd = rng.random_range(0.3..1.5);
    let t = Tournament::sparse_random(players, clique, pairs, seed);
    let template = t.template(Family::GaussianIdentity { sd }).unwrap();
    let theta = Theta::new(vec![rng.random_range(-1.0..1.0)], vec![rng.random_range(0.3..2.0)]).unwrap();
    (simulate(&template, &theta, seed + 7).unwrap(), theta)
}
