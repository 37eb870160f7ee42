use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use super::knots::{level_count, tau_schedule, KnotLadder};
use crate::error::{Error, Result};

/// All multi-indices `l ∈ {1,2,…}^d` with `Σ l_j ≤ d + k`, in lexicographic order.
pub fn smolyak_index_sets(d: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(d: usize, budget: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == d {
            out.push(prefix.clone());
            return;
        }
        let remaining = d - prefix.len() - 1;
        for l in 1..=budget - remaining {
            prefix.push(l);
            rec(d, budget - l, prefix, out);
            prefix.pop();
        }
    }
    assert!(d >= 1, "sparse grids need at least one dimension");
    let mut out = Vec::new();
    rec(d, d + k, &mut Vec::with_capacity(d), &mut out);
    out
}

fn binomial(n: usize, r: usize) -> f64 {
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// One tensor-product interpolant of the combination formula.
#[derive(Debug, Clone)]
pub struct GridTerm {
    pub levels: Vec<usize>,
    pub coefficient: f64,
    /// Grid point ids of the tensor nodes, row-major with the last axis fastest.
    pub nodes: Vec<usize>,
}

/// Point set and combination terms for a `d`-dimensional level-`k` grid.
#[derive(Debug, Clone)]
pub struct SparseGrid {
    dim: usize,
    level: usize,
    ladder: KnotLadder,
    index_sets: Vec<Vec<usize>>,
    points: Vec<f64>,
    terms: Vec<GridTerm>,
    /// Offset of each level's weights inside one axis of a weight buffer.
    level_offsets: Vec<usize>,
    axis_stride: usize,
}

impl SparseGrid {
    pub fn new(dim: usize, level: usize) -> Self {
        Self::with_tau(dim, level, tau_schedule(level))
    }

    pub fn with_tau(dim: usize, level: usize, tau: f64) -> Self {
        let max_level = level + 1;
        let ladder = KnotLadder::new(max_level, tau);
        let index_sets = smolyak_index_sets(dim, level);
        let q = dim + level;
        let mut ids: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut points = Vec::new();
        let mut terms = Vec::new();
        let mut key = vec![0u32; dim];
        let mut counter = vec![0usize; dim];
        for levels in &index_sets {
            let total: usize = levels.iter().sum();
            let gap = q - total;
            let keep = gap < dim;
            let coefficient = if keep {
                let c = binomial(dim - 1, gap);
                if gap.is_multiple_of(2) {
                    c
                } else {
                    -c
                }
            } else {
                0.0
            };
            let counts: Vec<usize> = levels.iter().map(|l| level_count(*l)).collect();
            let size: usize = counts.iter().product();
            let mut nodes = Vec::with_capacity(if keep { size } else { 0 });
            counter.fill(0);
            for _ in 0..size {
                for i in 0..dim {
                    let shift = max_level - levels[i];
                    key[i] = ((counter[i] + 1) << shift) as u32;
                }
                let id = match ids.get(&key) {
                    Some(id) => *id,
                    None => {
                        let id = ids.len();
                        ids.insert(key.clone(), id);
                        for i in 0..dim {
                            points.push(ladder.knots_at(levels[i])[counter[i]]);
                        }
                        id
                    }
                };
                if keep {
                    nodes.push(id);
                }
                for i in (0..dim).rev() {
                    counter[i] += 1;
                    if counter[i] < counts[i] {
                        break;
                    }
                    counter[i] = 0;
                }
            }
            if keep {
                terms.push(GridTerm {
                    levels: levels.clone(),
                    coefficient,
                    nodes,
                });
            }
        }
        let mut level_offsets = Vec::with_capacity(max_level + 1);
        let mut acc = 0;
        for l in 1..=max_level {
            level_offsets.push(acc);
            acc += level_count(l);
        }
        SparseGrid {
            dim,
            level,
            ladder,
            index_sets,
            points,
            terms,
            level_offsets,
            axis_stride: acc,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn tau(&self) -> f64 {
        self.ladder.tau
    }

    pub fn ladder(&self) -> &KnotLadder {
        &self.ladder
    }

    pub fn index_sets(&self) -> &[Vec<usize>] {
        &self.index_sets
    }

    pub fn terms(&self) -> &[GridTerm] {
        &self.terms
    }

    pub fn num_points(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn point(&self, id: usize) -> &[f64] {
        &self.points[id * self.dim..(id + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// Length of the scratch buffer `fill_weights` writes for one derivative order.
    pub fn weight_buffer_len(&self) -> usize {
        self.dim * self.axis_stride
    }

    fn fill_weights(&self, z: &[f64], order: usize, buf: &mut [f64]) {
        for (i, zi) in z.iter().enumerate() {
            for l in 1..=self.ladder.max_level() {
                let start = i * self.axis_stride + self.level_offsets[l - 1];
                let m = level_count(l);
                self.ladder.basis(l).weights(*zi, order, &mut buf[start..start + m]);
            }
        }
    }

    fn axis_weights<'a>(&self, buf: &'a [f64], axis: usize, level: usize) -> &'a [f64] {
        let start = axis * self.axis_stride + self.level_offsets[level - 1];
        &buf[start..start + level_count(level)]
    }

    /// Combination sum with per-axis weight buffers chosen by `pick(axis)`.
    fn combine(&self, values: &[f64], pick: &dyn Fn(usize) -> usize, bufs: &[&[f64]]) -> f64 {
        let mut slices: Vec<&[f64]> = Vec::with_capacity(self.dim);
        let mut total = 0.0;
        for term in &self.terms {
            slices.clear();
            for (axis, l) in term.levels.iter().enumerate() {
                slices.push(self.axis_weights(bufs[pick(axis)], axis, *l));
            }
            total += term.coefficient * contract(&slices, &term.nodes, values, 0, 0);
        }
        total
    }
}

fn contract(w: &[&[f64]], nodes: &[usize], values: &[f64], axis: usize, base: usize) -> f64 {
    let wi = w[axis];
    let m = wi.len();
    let mut s = 0.0;
    if axis + 1 == w.len() {
        let row = &nodes[base * m..(base + 1) * m];
        for (a, id) in wi.iter().zip(row) {
            s += a * values[*id];
        }
    } else {
        for (j, a) in wi.iter().enumerate() {
            if *a != 0.0 {
                s += a * contract(w, nodes, values, axis + 1, base * m + j);
            }
        }
    }
    s
}

/// Shares grids between interpolants of equal dimension and level.
#[derive(Debug, Default)]
pub struct GridCache {
    grids: Mutex<HashMap<(usize, usize), Arc<SparseGrid>>>,
}

impl GridCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, dim: usize, level: usize) -> Arc<SparseGrid> {
        let mut grids = self.grids.lock().expect("grid cache poisoned");
        grids
            .entry((dim, level))
            .or_insert_with(|| Arc::new(SparseGrid::new(dim, level)))
            .clone()
    }
}

/// Distinct points of the level-`k` grid in `d` dimensions, in node order.
pub fn grid_points(d: usize, k: usize) -> Vec<Vec<f64>> {
    SparseGrid::new(d, k).points().map(|p| p.to_vec()).collect()
}

/// Smolyak interpolant with an upper bound on its output.
#[derive(Debug, Clone)]
pub struct SparseGridInterpolant {
    grid: Arc<SparseGrid>,
    node_values: Vec<f64>,
    bound: f64,
}

impl SparseGridInterpolant {
    /// Evaluates `f` once at every grid point (concurrently) and builds the interpolant.
    pub fn build<F>(grid: Arc<SparseGrid>, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let node_values = (0..grid.num_points())
            .into_par_iter()
            .map(|id| {
                let p = grid.point(id);
                match f(p) {
                    Ok(v) if v.is_finite() => Ok(v),
                    Ok(v) => Err(Error::numerical(format!(
                        "interpolated function is {v} at grid point {p:?}"
                    ))),
                    Err(e) => Err(Error::numerical(format!("at grid point {p:?}: {e}"))),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self::from_values(grid, node_values))
    }

    pub fn from_values(grid: Arc<SparseGrid>, node_values: Vec<f64>) -> Self {
        assert_eq!(node_values.len(), grid.num_points());
        let bound = node_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        SparseGridInterpolant {
            grid,
            node_values,
            bound,
        }
    }

    pub fn grid(&self) -> &SparseGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn level(&self) -> usize {
        self.grid.level
    }

    pub fn node_values(&self) -> &[f64] {
        &self.node_values
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// A scratch buffer sized for `eval_with` and `eval_derivatives_with`.
    pub fn scratch(&self) -> Vec<f64> {
        vec![0.0; 3 * self.grid.weight_buffer_len()]
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.grid.weight_buffer_len()];
        self.eval_with(z, &mut scratch)
    }

    pub fn eval_with(&self, z: &[f64], scratch: &mut [f64]) -> f64 {
        assert_eq!(z.len(), self.dim(), "dimension mismatch");
        let len = self.grid.weight_buffer_len();
        let buf = &mut scratch[..len];
        self.grid.fill_weights(z, 0, buf);
        let bufs: [&[f64]; 1] = [buf];
        self.grid
            .combine(&self.node_values, &|_| 0, &bufs)
            .min(self.bound)
    }

    /// Value, gradient and Hessian (row-major `d×d`) of the clamped interpolant.
    /// Where the clamp is active the derivatives are zero.
    pub fn eval_derivatives_with(
        &self,
        z: &[f64],
        scratch: &mut [f64],
        grad: &mut [f64],
        hess: &mut [f64],
    ) -> f64 {
        let d = self.dim();
        assert_eq!(z.len(), d, "dimension mismatch");
        let len = self.grid.weight_buffer_len();
        let (b0, rest) = scratch.split_at_mut(len);
        let (b1, rest) = rest.split_at_mut(len);
        let b2 = &mut rest[..len];
        self.grid.fill_weights(z, 0, b0);
        self.grid.fill_weights(z, 1, b1);
        self.grid.fill_weights(z, 2, b2);
        let bufs: [&[f64]; 3] = [b0, b1, b2];
        let vals = &self.node_values;
        let value = self.grid.combine(vals, &|_| 0, &bufs);
        if value >= self.bound {
            grad.fill(0.0);
            hess.fill(0.0);
            return self.bound;
        }
        for i in 0..d {
            grad[i] = self
                .grid
                .combine(vals, &|a| usize::from(a == i), &bufs);
            for j in 0..=i {
                let h = if i == j {
                    self.grid.combine(vals, &|a| if a == i { 2 } else { 0 }, &bufs)
                } else {
                    self.grid
                        .combine(vals, &|a| usize::from(a == i || a == j), &bufs)
                };
                hess[i * d + j] = h;
                hess[j * d + i] = h;
            }
        }
        value
    }
}

/// Builds the level-`k` interpolant of `evaluator` in `d` dimensions.
pub fn build_interpolant<F>(d: usize, k: usize, evaluator: F) -> Result<SparseGridInterpolant>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if d == 0 {
        return Err(Error::invalid("sparse grids need at least one dimension"));
    }
    SparseGridInterpolant::build(Arc::new(SparseGrid::new(d, k)), evaluator)
}

pub fn eval_interpolant(interp: &SparseGridInterpolant, z: &[f64]) -> f64 {
    interp.eval(z)
}
