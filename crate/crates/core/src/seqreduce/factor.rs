use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Predictor};
use crate::sparse_grid::StoredFunction;
use crate::special::log_phi;

use super::modifier::ModifierH;

#[derive(Debug, Clone)]
pub enum FactorKind {
    /// Observations whose effects all lie in the scope, plus the standard
    /// normal priors of the effects first seen in this factor.
    Primitive {
        observations: Vec<usize>,
        priors: Vec<usize>,
    },
    /// A stored function `r` with its modifier divided out: `r / h`.
    Stored {
        function: Arc<StoredFunction>,
        modifier: Arc<ModifierH>,
    },
}

/// A positive function of the effects in `scope` (sorted).
#[derive(Debug, Clone)]
pub struct Factor {
    scope: Vec<usize>,
    kind: FactorKind,
}

impl Factor {
    pub fn new(scope: Vec<usize>, kind: FactorKind) -> Result<Self> {
        if scope.is_empty() {
            return Err(Error::invalid("factor scope must be non-empty"));
        }
        if !scope.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("factor scope must be sorted and distinct"));
        }
        if let FactorKind::Stored { function, modifier } = &kind {
            if function.dim() != scope.len() || modifier.dim() != scope.len() {
                return Err(Error::invalid("stored factor dimension does not match its scope"));
            }
        }
        Ok(Factor { scope, kind })
    }

    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    pub fn kind(&self) -> &FactorKind {
        &self.kind
    }

    pub fn is_subset_of(&self, sorted: &[usize]) -> bool {
        self.scope.iter().all(|v| sorted.binary_search(v).is_ok())
    }

    /// Log value at the full effect vector `u`.
    pub fn log_value(&self, spec: &ModelSpec, pred: &Predictor, u: &[f64]) -> Result<f64> {
        match &self.kind {
            FactorKind::Primitive {
                observations,
                priors,
            } => {
                let y = spec.require_response()?;
                let family = spec.family();
                let obs: f64 = observations
                    .iter()
                    .map(|i| family.log_density_unchecked(y[*i], pred.eta(*i, u)))
                    .sum();
                Ok(obs + priors.iter().map(|j| log_phi(u[*j])).sum::<f64>())
            }
            FactorKind::Stored { function, modifier } => {
                let x: Vec<f64> = self.scope.iter().map(|j| u[*j]).collect();
                Ok(function.eval_log(&x) - modifier.log_h(&x))
            }
        }
    }
}

/// Splits the integrand over `cliques` taken in lexicographic order: each
/// observation goes to the first clique containing all its effects and each
/// prior to the first clique containing its effect. Cliques that receive
/// nothing are dropped.
pub fn initial_factorization(spec: &ModelSpec, cliques: &[Vec<usize>]) -> Result<Vec<Factor>> {
    let mut order: Vec<&Vec<usize>> = cliques.iter().collect();
    order.sort();
    let mut observations: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
    let mut priors: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
    let sorted: Vec<Vec<usize>> = order
        .iter()
        .map(|c| {
            let mut c = (*c).clone();
            c.sort_unstable();
            c
        })
        .collect();
    for (i, row) in spec.incidence().iter().enumerate() {
        let home = sorted
            .iter()
            .position(|c| row.iter().all(|e| c.binary_search(&e.effect).is_ok()))
            .ok_or_else(|| {
                Error::Internal(format!("observation {i} is not covered by any clique"))
            })?;
        observations[home].push(i);
    }
    let mut seen = vec![false; spec.num_effects()];
    for (c, clique) in sorted.iter().enumerate() {
        for v in clique {
            if *v >= seen.len() {
                return Err(Error::invalid(format!("clique vertex {v} is out of range")));
            }
            if !seen[*v] {
                seen[*v] = true;
                priors[c].push(*v);
            }
        }
    }
    if let Some(v) = seen.iter().position(|s| !s) {
        return Err(Error::Internal(format!("effect {v} is not covered by any clique")));
    }
    let mut out = Vec::new();
    for ((scope, obs), pri) in sorted.into_iter().zip(observations).zip(priors) {
        if obs.is_empty() && pri.is_empty() {
            continue;
        }
        out.push(Factor::new(
            scope,
            FactorKind::Primitive {
                observations: obs,
                priors: pri,
            },
        )?);
    }
    Ok(out)
}
