//! Posterior dependence graph of the random effects and elimination
//! orderings over it.
//!
//! Widths use the clique-size convention throughout: the width of an
//! ordering is the largest closed neighbourhood met while eliminating, which
//! is one more than the usual treewidth. A tree has width 2.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Undirected simple graph on vertices `0..n`. Eliminated vertices keep their
/// index but are no longer present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependenceGraph {
    adjacency: Vec<BTreeSet<usize>>,
    present: Vec<bool>,
}

/// An elimination ordering with the closed neighbourhood met at each step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EliminationPlan {
    pub ordering: Vec<usize>,
    /// `step_cliques[t]` is the sorted closed neighbourhood of `ordering[t]`
    /// at the moment it is eliminated.
    pub step_cliques: Vec<Vec<usize>>,
    pub width: usize,
}

impl DependenceGraph {
    pub fn empty(n: usize) -> Self {
        DependenceGraph {
            adjacency: vec![BTreeSet::new(); n],
            present: vec![true; n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n);
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("edge ({a}, {b}) out of range for {n} vertices")));
            }
            g.add_edge(a, b);
        }
        Ok(g)
    }

    fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.adjacency[a].insert(b);
            self.adjacency[b].insert(a);
        }
    }

    /// Index space size, including eliminated vertices.
    pub fn capacity(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(|a| a.len()).sum::<usize>() / 2
    }

    pub fn contains(&self, v: usize) -> bool {
        self.present.get(v).copied().unwrap_or(false)
    }

    pub fn vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.capacity()).filter(|v| self.present[*v])
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adjacency[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency.get(a).is_some_and(|s| s.contains(&b))
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.vertices()
            .flat_map(|a| self.adjacency[a].range(a + 1..).map(move |b| (a, *b)))
            .collect()
    }

    /// `v` together with its neighbours, sorted.
    pub fn closed_neighborhood(&self, v: usize) -> Vec<usize> {
        let mut n: Vec<usize> = self.adjacency[v].iter().copied().collect();
        n.push(v);
        n.sort_unstable();
        n
    }

    /// Connects all neighbours of `v` pairwise and removes `v`.
    pub fn eliminate_vertex(&self, v: usize) -> Result<Self> {
        let mut g = self.clone();
        g.eliminate_in_place(v)?;
        Ok(g)
    }

    pub(crate) fn eliminate_in_place(&mut self, v: usize) -> Result<()> {
        if !self.contains(v) {
            return Err(Error::invalid(format!("vertex {v} is not in the graph")));
        }
        let nbrs: Vec<usize> = self.adjacency[v].iter().copied().collect();
        for (i, a) in nbrs.iter().enumerate() {
            self.adjacency[*a].remove(&v);
            for b in &nbrs[i + 1..] {
                self.add_edge(*a, *b);
            }
        }
        self.adjacency[v].clear();
        self.present[v] = false;
        Ok(())
    }

    fn fill_in(&self, v: usize) -> usize {
        let nbrs: Vec<usize> = self.adjacency[v].iter().copied().collect();
        let mut missing = 0;
        for (i, a) in nbrs.iter().enumerate() {
            let adj = &self.adjacency[*a];
            missing += nbrs[i + 1..].iter().filter(|b| !adj.contains(b)).count();
        }
        missing
    }

    /// All maximal cliques, each sorted, in lexicographic order.
    /// Isolated vertices are singleton cliques.
    pub fn maximal_cliques(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let p: BTreeSet<usize> = self.vertices().collect();
        let mut r = Vec::new();
        self.bron_kerbosch(&mut r, p, BTreeSet::new(), &mut out);
        for c in &mut out {
            c.sort_unstable();
        }
        out.sort();
        out
    }

    fn bron_kerbosch(
        &self,
        r: &mut Vec<usize>,
        mut p: BTreeSet<usize>,
        mut x: BTreeSet<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if p.is_empty() {
            if x.is_empty() {
                out.push(r.clone());
            }
            return;
        }
        // Pivot on the vertex of P ∪ X with most neighbours in P.
        let pivot = p
            .iter()
            .chain(x.iter())
            .max_by_key(|u| self.adjacency[**u].iter().filter(|w| p.contains(w)).count())
            .copied()
            .expect("P is non-empty");
        let candidates: Vec<usize> = p
            .iter()
            .filter(|v| !self.adjacency[pivot].contains(v))
            .copied()
            .collect();
        for v in candidates {
            let nbrs = &self.adjacency[v];
            let p2 = p.intersection(nbrs).copied().collect();
            let x2 = x.intersection(nbrs).copied().collect();
            r.push(v);
            self.bron_kerbosch(r, p2, x2, out);
            r.pop();
            p.remove(&v);
            x.insert(v);
        }
    }

    /// Greedy min-fill ordering. Ties go to the smaller closed neighbourhood,
    /// then the lower vertex index.
    pub fn elimination_ordering(&self) -> EliminationPlan {
        let mut g = self.clone();
        let mut ordering = Vec::with_capacity(self.num_vertices());
        let mut step_cliques = Vec::with_capacity(self.num_vertices());
        while g.num_vertices() > 0 {
            let v = g
                .vertices()
                .min_by_key(|v| (g.fill_in(*v), g.adjacency[*v].len(), *v))
                .expect("graph is non-empty");
            step_cliques.push(g.closed_neighborhood(v));
            ordering.push(v);
            g.eliminate_in_place(v).expect("vertex is present");
        }
        let width = step_cliques.iter().map(|c| c.len()).max().unwrap_or(0);
        EliminationPlan {
            ordering,
            step_cliques,
            width,
        }
    }

    /// Replays a caller-supplied ordering, which must be a permutation of the
    /// present vertices.
    pub fn plan_for_ordering(&self, ordering: &[usize]) -> Result<EliminationPlan> {
        if ordering.len() != self.num_vertices() {
            return Err(Error::invalid("ordering must list every vertex exactly once"));
        }
        let mut g = self.clone();
        let mut step_cliques = Vec::with_capacity(ordering.len());
        for &v in ordering {
            if !g.contains(v) {
                return Err(Error::invalid(format!("vertex {v} repeated or absent in ordering")));
            }
            step_cliques.push(g.closed_neighborhood(v));
            g.eliminate_in_place(v)?;
        }
        let width = step_cliques.iter().map(|c| c.len()).max().unwrap_or(0);
        Ok(EliminationPlan {
            ordering: ordering.to_vec(),
            step_cliques,
            width,
        })
    }

    /// Minimum-degree-with-contraction lower bound on the width (clique-size
    /// convention). Returns 0 for a graph with no vertices.
    pub fn width_lower_bound(&self) -> usize {
        let mut adj = self.adjacency.clone();
        let mut alive = self.present.clone();
        let mut remaining = self.num_vertices();
        if remaining == 0 {
            return 0;
        }
        let mut best = 0;
        while remaining > 0 {
            let v = (0..adj.len())
                .filter(|v| alive[*v])
                .min_by_key(|v| (adj[*v].len(), *v))
                .expect("a vertex remains");
            best = best.max(adj[v].len());
            if let Some(u) = adj[v].iter().copied().min_by_key(|u| (adj[*u].len(), *u)) {
                // Contract v into u.
                let nbrs: Vec<usize> = adj[v].iter().copied().collect();
                for w in nbrs {
                    adj[w].remove(&v);
                    if w != u {
                        adj[w].insert(u);
                        adj[u].insert(w);
                    }
                }
            }
            adj[v].clear();
            alive[v] = false;
            remaining -= 1;
        }
        best + 1
    }
}

/// Vertex per random effect; edge when some observation involves both.
pub fn build_dependence_graph(spec: &ModelSpec) -> DependenceGraph {
    let mut g = DependenceGraph::empty(spec.num_effects());
    for row in spec.incidence() {
        for (i, a) in row.iter().enumerate() {
            for b in &row[i + 1..] {
                g.add_edge(a.effect, b.effect);
            }
        }
    }
    g
}

/// Free-function form of [`DependenceGraph::maximal_cliques`].
pub fn maximal_cliques(graph: &DependenceGraph) -> Vec<Vec<usize>> {
    graph.maximal_cliques()
}

/// Free-function form of [`DependenceGraph::elimination_ordering`].
pub fn elimination_ordering(graph: &DependenceGraph) -> EliminationPlan {
    graph.elimination_ordering()
}

/// Free-function form of [`DependenceGraph::width_lower_bound`].
pub fn width_lower_bound(graph: &DependenceGraph) -> usize {
    graph.width_lower_bound()
}
