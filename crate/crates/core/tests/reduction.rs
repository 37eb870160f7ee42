mod common;

use common::{dense_oracle, gaussian_closed_form, gh_rule, random_gaussian_model, random_small_model};
use nalgebra::DMatrix;
use seqred::graph::build_dependence_graph;
use seqred::model::{log_integrand, simulate, Incidence};
use seqred::seqreduce::{sequential_reduction, FactorKind, ReductionState};
use seqred::{laplace_loglik, loglik_surface, posterior_mode, sequential_reduction_loglik, Family, ModelSpec, SrConfig, Theta};

#[test]
fn small_models_match_dense_oracle() {
    for seed in 0..6 {
        let (spec, theta) = random_small_model(seed);
        let oracle = dense_oracle(&spec, &theta, 201);
        let sr = sequential_reduction_loglik(&spec, &theta, SrConfig::new(5)).unwrap();
        assert!((sr - oracle).abs() < 1e-4, "seed {seed}: {sr} vs {oracle}");
    }
}

#[test]
fn probit_triangle_matches_dense_oracle() {
    let inc = vec![
        vec![Incidence::new(0, 1.0), Incidence::new(1, -1.0)],
        vec![Incidence::new(1, 1.0), Incidence::new(2, -1.0)],
        vec![Incidence::new(2, 1.0), Incidence::new(0, -1.0)],
        vec![Incidence::new(0, 1.0), Incidence::new(2, -1.0)],
    ];
    let x = DMatrix::from_column_slice(4, 1, &[0.3, -0.8, 0.1, 1.2]);
    let template = ModelSpec::new(3, x, inc, vec![0; 3], Family::BernoulliProbit).unwrap();
    let theta = Theta::new(vec![0.5], vec![1.5]).unwrap();
    let spec = simulate(&template, &theta, 4).unwrap();
    let oracle = dense_oracle(&spec, &theta, 201);
    let sr = sequential_reduction_loglik(&spec, &theta, SrConfig::new(5).with_nodes(32)).unwrap();
    assert!((sr - oracle).abs() < 1e-4, "{sr} vs {oracle}");
}

#[test]
fn first_step_of_probit_path_preserves_integral() {
    let inc = vec![
        vec![Incidence::new(0, 1.0), Incidence::new(1, -1.0)],
        vec![Incidence::new(1, 1.0), Incidence::new(2, -1.0)],
        vec![Incidence::new(1, 1.0), Incidence::new(0, -1.0)],
    ];
    let template = ModelSpec::new(3, DMatrix::zeros(3, 1), inc, vec![0; 3], Family::BernoulliProbit).unwrap();
    let theta = Theta::new(vec![0.0], vec![1.8]).unwrap();
    let spec = simulate(&template, &theta, 11).unwrap();
    let na = posterior_mode(&spec, &theta).unwrap();
    let plan = build_dependence_graph(&spec).plan_for_ordering(&[0, 1, 2]).unwrap();
    let pred = spec.predictor(&theta).unwrap();
    let mut state = ReductionState::new(&spec, &theta, &na, plan, SrConfig::new(5)).unwrap();
    state.integrate_out(0).unwrap();
    assert!(state
        .active_factors()
        .iter()
        .any(|f| matches!(f.kind(), FactorKind::Stored { .. })));

    // Dense 2D integral of the remaining product over (u1, u2).
    let (t, w) = gh_rule(201);
    let l = DMatrix::from_fn(2, 2, |a, b| na.covariance[(a + 1, b + 1)])
        .cholesky()
        .unwrap()
        .l();
    let mut terms = Vec::new();
    let mut u = vec![0.0; 3];
    for i in 0..t.len() {
        for j in 0..t.len() {
            u[1] = na.mode[1] + l[(0, 0)] * t[i];
            u[2] = na.mode[2] + l[(1, 0)] * t[i] + l[(1, 1)] * t[j];
            let lg: f64 = state
                .active_factors()
                .iter()
                .map(|f| f.log_value(&spec, &pred, &u).unwrap())
                .sum();
            terms.push(w[i].ln() + w[j].ln() + lg + 0.5 * (t[i] * t[i] + t[j] * t[j]) + (2.0 * std::f64::consts::PI).ln());
        }
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let two_d = l.diagonal().iter().map(|v| v.ln()).sum::<f64>() + m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let full = dense_oracle(&spec, &theta, 201);
    assert!((two_d + state.log_constant() - full).abs() < 1e-5, "{two_d} vs {full}");
}

#[test]
fn gaussian_models_are_exact() {
    for seed in 0..4 {
        let (spec, theta) = random_gaussian_model(100 + seed);
        let exact = gaussian_closed_form(&spec, &theta);
        for k in [0, 2, 4] {
            let sr = sequential_reduction_loglik(&spec, &theta, SrConfig::new(k)).unwrap();
            assert!((sr - exact).abs() < 1e-8, "seed {seed} k {k}: {sr} vs {exact}");
        }
    }
}

#[test]
fn gaussian_chain_of_twenty() {
    let inc: Vec<Vec<Incidence>> = (0..19)
        .map(|i| vec![Incidence::new(i, 1.0), Incidence::new(i + 1, -1.0)])
        .collect();
    let x = DMatrix::from_fn(19, 1, |r, _| (r as f64 * 0.37).sin());
    let template = ModelSpec::new(20, x, inc, vec![0; 20], Family::GaussianIdentity { sd: 0.7 }).unwrap();
    let theta = Theta::new(vec![0.3], vec![1.1]).unwrap();
    let spec = simulate(&template, &theta, 5).unwrap();
    let exact = gaussian_closed_form(&spec, &theta);
    for k in [0, 1, 3, 5] {
        let sr = sequential_reduction_loglik(&spec, &theta, SrConfig::new(k)).unwrap();
        assert!((sr - exact).abs() < 1e-8, "k {k}: {sr} vs {exact}");
    }
}

#[test]
fn level_zero_equals_laplace_on_all_families() {
    for seed in 0..8 {
        let (spec, theta) = random_small_model(seed);
        let sr = sequential_reduction_loglik(&spec, &theta, SrConfig::new(0)).unwrap();
        let la = laplace_loglik(&spec, &theta).unwrap();
        assert!((sr - la).abs() < 1e-8, "seed {seed}");
    }
    let (spec, theta) = random_gaussian_model(3);
    let sr = sequential_reduction_loglik(&spec, &theta, SrConfig::new(0)).unwrap();
    assert!((sr - laplace_loglik(&spec, &theta).unwrap()).abs() < 1e-8);
}

#[test]
fn two_level_model_is_sum_of_one_dimensional_integrals() {
    let clusters = 20;
    let per = 4;
    let inc: Vec<Vec<Incidence>> = (0..clusters * per).map(|i| vec![Incidence::new(i / per, 1.0)]).collect();
    let x = DMatrix::from_fn(clusters * per, 1, |r, _| ((r * 7 % 11) as f64 - 5.0) / 5.0);
    let template = ModelSpec::new(clusters, x, inc, vec![0; clusters], Family::BernoulliLogit).unwrap();
    let theta = Theta::new(vec![0.4], vec![1.3]).unwrap();
    let spec = simulate(&template, &theta, 17).unwrap();
    let na = posterior_mode(&spec, &theta).unwrap();
    let (t, w) = gh_rule(32);
    let mut expect = 0.0;
    for c in 0..clusters {
        let s = na.covariance[(c, c)].sqrt();
        let mut terms = Vec::new();
        for (tq, wq) in t.iter().zip(&w) {
            let mut u = na.mode.as_slice().to_vec();
            u[c] += s * tq;
            // Only cluster c's terms vary; evaluate them directly.
            let mut lg = -0.5 * u[c] * u[c] - 0.5 * (2.0 * std::f64::consts::PI).ln();
            for i in c * per..(c + 1) * per {
                let eta = spec.fixed_design()[(i, 0)] * theta.beta[0] + theta.psi[0] * u[c];
                let y = spec.response().unwrap()[i];
                lg += y * eta - (1.0 + eta.exp()).ln();
            }
            terms.push(wq.ln() + lg + 0.5 * tq * tq + 0.5 * (2.0 * std::f64::consts::PI).ln());
        }
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        expect += s.ln() + m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    }
    let sr = sequential_reduction_loglik(&spec, &theta, SrConfig::new(3).with_nodes(32)).unwrap();
    assert!((sr - expect).abs() < 1e-10, "{sr} vs {expect}");
    let sr7 = sequential_reduction_loglik(&spec, &theta, SrConfig::new(7).with_nodes(32)).unwrap();
    assert!((sr7 - expect).abs() < 1e-10);
}

#[test]
fn orderings_agree_at_high_level() {
    for seed in 0..5 {
        let (spec, theta) = random_small_model(seed);
        let n = spec.num_effects();
        let forward: Vec<usize> = (0..n).collect();
        let backward: Vec<usize> = (0..n).rev().collect();
        let a = sequential_reduction(&spec, &theta, SrConfig::new(5), Some(&forward)).unwrap();
        let b = sequential_reduction(&spec, &theta, SrConfig::new(5), Some(&backward)).unwrap();
        assert!((a.loglik - b.loglik).abs() < 1e-4);
    }
}

#[test]
fn error_does_not_grow_with_level() {
    for seed in 0..6 {
        let (spec, theta) = random_small_model(seed);
        let oracle = dense_oracle(&spec, &theta, 201);
        let mut prev = f64::INFINITY;
        for k in 1..=5 {
            let err = (sequential_reduction_loglik(&spec, &theta, SrConfig::new(k)).unwrap() - oracle).abs();
            assert!(err <= prev + 1e-6, "seed {seed} k {k}: {err} > {prev}");
            prev = err;
        }
    }
}

#[test]
fn surface_matches_direct_calls_and_is_deterministic() {
    let (spec, theta) = random_small_model(2);
    let grid = vec![theta.clone(), Theta::new(theta.beta.clone(), vec![0.8]).unwrap()];
    let a = loglik_surface(&spec, &grid, SrConfig::new(3));
    let b = loglik_surface(&spec, &grid, SrConfig::new(3));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.as_ref().unwrap().to_bits(), y.as_ref().unwrap().to_bits());
    }
    let direct = sequential_reduction_loglik(&spec, &grid[0], SrConfig::new(3)).unwrap();
    assert_eq!(a[0].as_ref().unwrap().to_bits(), direct.to_bits());
}

#[test]
fn factor_sum_identity_on_tournament() {
    let t = seqred::designs::Tournament::tree(16, 2, 1);
    let template = t.template(Family::BernoulliProbit).unwrap();
    let theta = Theta::new(vec![0.5], vec![1.5]).unwrap();
    let spec = simulate(&template, &theta, 2).unwrap();
    let graph = build_dependence_graph(&spec);
    let factors = seqred::seqreduce::initial_factorization(&spec, &graph.maximal_cliques()).unwrap();
    let pred = spec.predictor(&theta).unwrap();
    let u: Vec<f64> = (0..16).map(|i| (i as f64 * 0.71).cos()).collect();
    let total: f64 = factors.iter().map(|f| f.log_value(&spec, &pred, &u).unwrap()).sum();
    assert!((total - log_integrand(&spec, &theta, &u).unwrap()).abs() < 1e-10);
}
