use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_dependence_graph, DependenceGraph, EliminationPlan};
use crate::model::{Family, ModelSpec, Predictor, Theta};
use crate::normal::{posterior_mode, standardizing_transform, ConditionalRegression, NormalApprox};
use crate::quadrature::GaussHermite;
use crate::sparse_grid::{GridCache, StoredFunction, StoredScratch};
use crate::special::{log_phi, log_sum_exp};

use super::factor::{initial_factorization, Factor, FactorKind};
use super::modifier::ModifierH;

/// Storage level, quadrature size and width cap for one approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrConfig {
    pub level: usize,
    /// Gauss–Hermite nodes per elimination for `level ≥ 1`. Level 0 uses the
    /// one-node rule, which makes the whole computation the Laplace approximation.
    pub nodes: usize,
    pub max_width: usize,
}

impl SrConfig {
    pub const DEFAULT_NODES: usize = 32;
    pub const DEFAULT_MAX_WIDTH: usize = 12;

    pub fn new(level: usize) -> Self {
        SrConfig {
            level,
            nodes: Self::DEFAULT_NODES,
            max_width: Self::DEFAULT_MAX_WIDTH,
        }
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes;
        self
    }

    pub fn with_max_width(mut self, max_width: usize) -> Self {
        self.max_width = max_width;
        self
    }

    /// Nodes actually used by each one-dimensional integration.
    pub fn effective_nodes(&self) -> usize {
        if self.level == 0 {
            1
        } else {
            self.nodes
        }
    }

    fn validate(&self) -> Result<()> {
        if self.level > 0 && self.nodes < 2 {
            return Err(Error::invalid(format!(
                "quadrature needs at least 2 nodes, got {}",
                self.nodes
            )));
        }
        Ok(())
    }
}

/// Result of a full reduction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SrOutcome {
    pub loglik: f64,
    pub width: usize,
    pub ordering: Vec<usize>,
    pub laplace: f64,
    /// Number of sparse-grid points evaluated over all steps.
    pub grid_evaluations: usize,
}

struct LocalObs {
    y: f64,
    offset: f64,
    terms: Vec<(usize, f64)>,
}

struct LocalStored {
    function: Arc<StoredFunction>,
    modifier: Arc<ModifierH>,
    locals: Vec<usize>,
}

#[derive(Default)]
struct LocalPart {
    obs: Vec<LocalObs>,
    priors: Vec<usize>,
    stored: Vec<LocalStored>,
}

struct PartScratch {
    stored: Vec<StoredScratch>,
    x: Vec<f64>,
    grad: Vec<f64>,
    hess: Vec<f64>,
    hgrad: Vec<f64>,
}

impl LocalPart {
    fn scratch(&self) -> PartScratch {
        PartScratch {
            stored: self.stored.iter().map(|s| s.function.scratch()).collect(),
            x: Vec::new(),
            grad: Vec::new(),
            hess: Vec::new(),
            hgrad: Vec::new(),
        }
    }

    fn log_value(&self, family: Family, y: &[f64], ws: &mut PartScratch) -> f64 {
        let mut total = 0.0;
        for o in &self.obs {
            let eta = o.offset + o.terms.iter().map(|(j, c)| c * y[*j]).sum::<f64>();
            total += family.log_density_unchecked(o.y, eta);
        }
        for j in &self.priors {
            total += log_phi(y[*j]);
        }
        for (s, scratch) in self.stored.iter().zip(ws.stored.iter_mut()) {
            ws.x.clear();
            ws.x.extend(s.locals.iter().map(|j| y[*j]));
            total += s.function.eval_log_with(&ws.x, scratch) - s.modifier.log_h(&ws.x);
        }
        total
    }

    /// Adds the gradient and Hessian in local coordinates into `g` and `h`.
    fn add_derivatives(
        &self,
        family: Family,
        y: &[f64],
        ws: &mut PartScratch,
        g: &mut DVector<f64>,
        h: &mut DMatrix<f64>,
    ) -> f64 {
        let mut total = 0.0;
        for o in &self.obs {
            let eta = o.offset + o.terms.iter().map(|(j, c)| c * y[*j]).sum::<f64>();
            let (f, d1, d2) = family.derivatives(o.y, eta);
            total += f;
            for &(a, ca) in &o.terms {
                g[a] += d1 * ca;
                for &(b, cb) in &o.terms {
                    h[(a, b)] += d2 * ca * cb;
                }
            }
        }
        for j in &self.priors {
            total += log_phi(y[*j]);
            g[*j] -= y[*j];
            h[(*j, *j)] -= 1.0;
        }
        for (s, scratch) in self.stored.iter().zip(ws.stored.iter_mut()) {
            let m = s.locals.len();
            ws.x.clear();
            ws.x.extend(s.locals.iter().map(|j| y[*j]));
            ws.grad.resize(m, 0.0);
            ws.hess.resize(m * m, 0.0);
            ws.hgrad.resize(m, 0.0);
            let v = s
                .function
                .eval_log_derivatives_with(&ws.x, scratch, &mut ws.grad, &mut ws.hess);
            total += v - s.modifier.log_h(&ws.x);
            s.modifier.gradient(&ws.x, &mut ws.hgrad);
            for (a, la) in s.locals.iter().enumerate() {
                g[*la] += ws.grad[a] - ws.hgrad[a];
                for (b, lb) in s.locals.iter().enumerate() {
                    h[(*la, *lb)] += ws.hess[a * m + b] - s.modifier.quadratic[(a, b)];
                }
            }
        }
        total
    }
}

/// Factors gathered for one elimination, in local coordinates: index 0 is the
/// eliminated vertex, `1..=d` the remaining neighbours in sorted order.
struct Gathered {
    family: Family,
    with_v: LocalPart,
    without_v: LocalPart,
    regression: ConditionalRegression,
    sd: f64,
}

struct Workspace {
    y: Vec<f64>,
    terms: Vec<f64>,
    with_v: PartScratch,
    without_v: PartScratch,
}

impl Gathered {
    fn workspace(&self) -> Workspace {
        Workspace {
            y: vec![0.0; self.regression.coefficients.len() + 1],
            terms: Vec::new(),
            with_v: self.with_v.scratch(),
            without_v: self.without_v.scratch(),
        }
    }

    /// `ln ∫ Π factors du_v` at neighbour values `x`.
    fn log_integral(&self, rule: &GaussHermite, x: &[f64], ws: &mut Workspace) -> f64 {
        ws.y[1..].copy_from_slice(x);
        let base = self.without_v.log_value(self.family, &ws.y, &mut ws.without_v);
        let center = self.regression.mean_at(x);
        ws.terms.clear();
        for (t, lr) in rule.nodes().iter().zip(rule.log_ratios()) {
            ws.y[0] = center + self.sd * t;
            let v = self.with_v.log_value(self.family, &ws.y, &mut ws.with_v);
            ws.terms.push(lr + v);
        }
        self.sd.ln() + base + log_sum_exp(&ws.terms)
    }

    /// Gradient and Hessian of `log_integral` at `x`.
    fn log_integral_derivatives(
        &self,
        rule: &GaussHermite,
        x: &[f64],
        ws: &mut Workspace,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let d = x.len();
        let b = &self.regression.coefficients;
        let pull_back = |gy: &DVector<f64>, hy: &DMatrix<f64>| {
            let gx = DVector::from_fn(d, |i, _| b[i] * gy[0] + gy[i + 1]);
            let hx = DMatrix::from_fn(d, d, |i, j| {
                b[i] * b[j] * hy[(0, 0)] + b[i] * hy[(0, j + 1)] + hy[(i + 1, 0)] * b[j] + hy[(i + 1, j + 1)]
            });
            (gx, hx)
        };
        ws.y[1..].copy_from_slice(x);
        let mut gy = DVector::zeros(d + 1);
        let mut hy = DMatrix::zeros(d + 1, d + 1);
        self.without_v
            .add_derivatives(self.family, &ws.y, &mut ws.without_v, &mut gy, &mut hy);
        let (mut grad, mut hess) = pull_back(&gy, &hy);

        let center = self.regression.mean_at(x);
        let mut logw = Vec::with_capacity(rule.len());
        let mut per_node = Vec::with_capacity(rule.len());
        for (t, lr) in rule.nodes().iter().zip(rule.log_ratios()) {
            ws.y[0] = center + self.sd * t;
            gy.fill(0.0);
            hy.fill(0.0);
            let v = self
                .with_v
                .add_derivatives(self.family, &ws.y, &mut ws.with_v, &mut gy, &mut hy);
            logw.push(lr + v);
            per_node.push(pull_back(&gy, &hy));
        }
        let lse = log_sum_exp(&logw);
        let mut mean_g = DVector::zeros(d);
        let mut second = DMatrix::zeros(d, d);
        for (lw, (gx, hx)) in logw.iter().zip(&per_node) {
            let w = (lw - lse).exp();
            if w == 0.0 {
                continue;
            }
            mean_g += gx * w;
            second += (hx + gx * gx.transpose()) * w;
        }
        grad += &mean_g;
        hess += second - &mean_g * mean_g.transpose();
        (grad, hess)
    }
}

/// Factors, elimination graph and running log-constant of a reduction in progress.
pub struct ReductionState<'a> {
    spec: &'a ModelSpec,
    na: &'a NormalApprox,
    predictor: Predictor,
    response: &'a [f64],
    factors: Vec<Factor>,
    graph: DependenceGraph,
    plan: EliminationPlan,
    position: usize,
    log_constant: f64,
    config: SrConfig,
    rule: GaussHermite,
    grids: GridCache,
    grid_evaluations: usize,
}

impl<'a> ReductionState<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        theta: &Theta,
        na: &'a NormalApprox,
        plan: EliminationPlan,
        config: SrConfig,
    ) -> Result<Self> {
        config.validate()?;
        let response = spec.require_response()?;
        let predictor = spec.predictor(theta)?;
        if na.dim() != spec.num_effects() {
            return Err(Error::invalid("normal approximation does not match the model"));
        }
        let graph = build_dependence_graph(spec);
        let family = spec.family();
        // Without random effects there are no cliques; the observations form the constant.
        let (factors, log_constant) = if spec.num_effects() == 0 {
            let c = (0..spec.num_obs())
                .map(|i| family.log_density_unchecked(response[i], predictor.eta(i, &[])))
                .sum();
            (Vec::new(), c)
        } else {
            (initial_factorization(spec, &graph.maximal_cliques())?, 0.0)
        };
        Ok(ReductionState {
            spec,
            na,
            predictor,
            response,
            factors,
            graph,
            plan,
            position: 0,
            log_constant,
            rule: GaussHermite::new(config.effective_nodes()),
            config,
            grids: GridCache::new(),
            grid_evaluations: 0,
        })
    }

    pub fn log_constant(&self) -> f64 {
        self.log_constant
    }

    pub fn active_factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn graph(&self) -> &DependenceGraph {
        &self.graph
    }

    pub fn plan(&self) -> &EliminationPlan {
        &self.plan
    }

    pub fn next_vertex(&self) -> Option<usize> {
        self.plan.ordering.get(self.position).copied()
    }

    pub fn is_finished(&self) -> bool {
        self.position == self.plan.ordering.len()
    }

    pub fn grid_evaluations(&self) -> usize {
        self.grid_evaluations
    }

    /// Integrates `v` out of the product of the factors inside its closed
    /// neighbourhood and replaces them by one stored factor on the neighbours.
    pub fn integrate_out(&mut self, v: usize) -> Result<()> {
        if self.next_vertex() != Some(v) {
            return Err(Error::invalid(format!(
                "vertex {v} is not next in the elimination plan (expected {:?})",
                self.next_vertex()
            )));
        }
        let mut closed = self.graph.closed_neighborhood(v);
        closed.sort_unstable();
        let others: Vec<usize> = closed.iter().copied().filter(|u| *u != v).collect();
        let d = others.len();
        let local = |j: usize| -> usize {
            if j == v {
                0
            } else {
                1 + others.binary_search(&j).expect("scope inside neighbourhood")
            }
        };

        let (gathered, kept): (Vec<Factor>, Vec<Factor>) = std::mem::take(&mut self.factors)
            .into_iter()
            .partition(|f| f.is_subset_of(&closed));
        self.factors = kept;

        let mut with_v = LocalPart::default();
        let mut without_v = LocalPart::default();
        for f in &gathered {
            match f.kind() {
                FactorKind::Primitive {
                    observations,
                    priors,
                } => {
                    for i in observations {
                        let terms: Vec<(usize, f64)> = self
                            .predictor
                            .terms(*i)
                            .iter()
                            .map(|(j, c)| (local(*j), *c))
                            .collect();
                        let part = if terms.iter().any(|(j, _)| *j == 0) {
                            &mut with_v
                        } else {
                            &mut without_v
                        };
                        part.obs.push(LocalObs {
                            y: self.response[*i],
                            offset: self.predictor.offsets[*i],
                            terms,
                        });
                    }
                    for j in priors {
                        if *j == v {
                            with_v.priors.push(0);
                        } else {
                            without_v.priors.push(local(*j));
                        }
                    }
                }
                FactorKind::Stored { function, modifier } => {
                    let locals: Vec<usize> = f.scope().iter().map(|j| local(*j)).collect();
                    let part = if locals.contains(&0) {
                        &mut with_v
                    } else {
                        &mut without_v
                    };
                    part.stored.push(LocalStored {
                        function: function.clone(),
                        modifier: modifier.clone(),
                        locals,
                    });
                }
            }
        }

        let regression = ConditionalRegression::new(&self.na.mode, &self.na.covariance, v, &others)?;
        let g = Gathered {
            family: self.spec.family(),
            with_v,
            without_v,
            sd: regression.variance.sqrt(),
            regression,
        };
        let rule = &self.rule;

        if d == 0 {
            let mut ws = g.workspace();
            let l = g.log_integral(rule, &[], &mut ws);
            if !l.is_finite() {
                return Err(Error::numerical(format!(
                    "integral over effect {v} is {l}"
                )));
            }
            self.log_constant += l;
        } else {
            let center = DVector::from_iterator(d, others.iter().map(|j| self.na.mode[*j]));
            let cov = DMatrix::from_fn(d, d, |a, b| self.na.covariance[(others[a], others[b])]);
            let mut ws = g.workspace();
            let (grad, hess) = g.log_integral_derivatives(rule, center.as_slice(), &mut ws);
            let modifier = ModifierH::from_derivatives(center.clone(), &cov, &grad, &hess)?;
            let standardization = standardizing_transform(&cov)?;
            let grid = self.grids.get(d, self.config.level);
            self.grid_evaluations += grid.num_points();
            let function = StoredFunction::build(
                |x| {
                    let mut ws = g.workspace();
                    let l = g.log_integral(rule, x, &mut ws);
                    if l.is_finite() {
                        Ok(l + modifier.log_h(x))
                    } else {
                        Err(Error::numerical(format!(
                            "integral over effect {v} is {l} with neighbours {others:?}"
                        )))
                    }
                },
                center,
                standardization,
                grid,
            )?;
            self.factors.push(Factor::new(
                others.clone(),
                FactorKind::Stored {
                    function: Arc::new(function),
                    modifier: Arc::new(modifier),
                },
            )?);
        }
        self.graph.eliminate_in_place(v)?;
        self.position += 1;
        Ok(())
    }

    /// Eliminates every remaining vertex and returns the log-likelihood.
    pub fn run(mut self) -> Result<f64> {
        while let Some(v) = self.next_vertex() {
            self.integrate_out(v)?;
        }
        if !self.factors.is_empty() {
            return Err(Error::Internal(format!(
                "{} factors left after elimination",
                self.factors.len()
            )));
        }
        Ok(self.log_constant)
    }
}

/// Full reduction with an optional explicit elimination ordering.
pub fn sequential_reduction(
    spec: &ModelSpec,
    theta: &Theta,
    config: SrConfig,
    ordering: Option<&[usize]>,
) -> Result<SrOutcome> {
    config.validate()?;
    let na = posterior_mode(spec, theta)?;
    let graph = build_dependence_graph(spec);
    let plan = match ordering {
        Some(o) => graph.plan_for_ordering(o)?,
        None => graph.elimination_ordering(),
    };
    if plan.width > config.max_width {
        return Err(Error::WidthExceeded {
            width: plan.width,
            max: config.max_width,
            level: config.level,
            cost_exponent: 2 * config.level,
        });
    }
    let width = plan.width;
    let ordering = plan.ordering.clone();
    let mut state = ReductionState::new(spec, theta, &na, plan, config)?;
    while let Some(v) = state.next_vertex() {
        state.integrate_out(v)?;
    }
    let grid_evaluations = state.grid_evaluations();
    let loglik = state.run()?;
    Ok(SrOutcome {
        loglik,
        width,
        ordering,
        laplace: na.laplace_loglik(),
        grid_evaluations,
    })
}

/// Log-likelihood approximation at storage level `config.level`.
pub fn sequential_reduction_loglik(spec: &ModelSpec, theta: &Theta, config: SrConfig) -> Result<f64> {
    sequential_reduction(spec, theta, config, None).map(|o| o.loglik)
}

/// Evaluates the approximation at each `θ` independently (in parallel).
pub fn loglik_surface(spec: &ModelSpec, thetas: &[Theta], config: SrConfig) -> Vec<Result<f64>> {
    thetas
        .par_iter()
        .map(|t| sequential_reduction_loglik(spec, t, config))
        .collect()
}
