//! Builders for the model layouts used in examples and tests: pairwise
//! tournaments (tree, round robin, sparse random) and nested multilevel
//! designs.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Family, Incidence, ModelSpec};

/// Players, contests between them, and per-player covariates.
#[derive(Debug, Clone)]
pub struct Tournament {
    pub num_players: usize,
    /// `(player1, player2)` for each contest; the response is 1 when player1 wins.
    pub contests: Vec<(usize, usize)>,
    /// `num_players × p` covariate matrix.
    pub covariates: DMatrix<f64>,
}

impl Tournament {
    pub fn new(num_players: usize, contests: Vec<(usize, usize)>, covariates: DMatrix<f64>) -> Result<Self> {
        if covariates.nrows() != num_players {
            return Err(Error::invalid("covariate rows must match the number of players"));
        }
        for (r, (a, b)) in contests.iter().enumerate() {
            if *a >= num_players || *b >= num_players || a == b {
                return Err(Error::invalid(format!("contest {r} has invalid players ({a}, {b})")));
            }
        }
        Ok(Tournament {
            num_players,
            contests,
            covariates,
        })
    }

    /// A tree tournament: player `i > 0` meets player `(i - 1) / 2`.
    /// One standard-normal covariate per player.
    pub fn tree(num_players: usize, matches_per_pair: usize, covariate_seed: u64) -> Self {
        let pairs: Vec<(usize, usize)> = (1..num_players).map(|i| ((i - 1) / 2, i)).collect();
        Self::from_pairs(num_players, &pairs, matches_per_pair, covariate_seed)
    }

    /// Every pair of players meets `matches_per_pair` times.
    pub fn round_robin(num_players: usize, matches_per_pair: usize, covariate_seed: u64) -> Self {
        let pairs: Vec<(usize, usize)> = (0..num_players)
            .flat_map(|a| (a + 1..num_players).map(move |b| (a, b)))
            .collect();
        Self::from_pairs(num_players, &pairs, matches_per_pair, covariate_seed)
    }

    /// A sparse random tournament whose pair graph is a random subgraph of a
    /// random `clique_size - 1`-tree, so its elimination width is at most
    /// `clique_size`. Roughly `num_pairs` distinct pairs meet once each.
    pub fn sparse_random(num_players: usize, clique_size: usize, num_pairs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = random_ktree_edges(num_players, clique_size, &mut rng);
        edges.shuffle(&mut rng);
        edges.truncate(num_pairs);
        edges.sort_unstable();
        let mut contests = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if rng.random::<bool>() {
                contests.push((a, b));
            } else {
                contests.push((b, a));
            }
        }
        let covariates = DMatrix::from_fn(num_players, 1, |_, _| rng.sample(StandardNormal));
        Tournament {
            num_players,
            contests,
            covariates,
        }
    }

    fn from_pairs(num_players: usize, pairs: &[(usize, usize)], matches_per_pair: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let covariates = DMatrix::from_fn(num_players, 1, |_, _| rng.sample(StandardNormal));
        let contests = pairs
            .iter()
            .flat_map(|p| std::iter::repeat_n(*p, matches_per_pair))
            .collect();
        Tournament {
            num_players,
            contests,
            covariates,
        }
    }

    /// Model template with `λ_i = βᵀx_i + σu_i` and `η_r = λ_{p1(r)} - λ_{p2(r)}`.
    pub fn template(&self, family: Family) -> Result<ModelSpec> {
        let p = self.covariates.ncols();
        let x = DMatrix::from_fn(self.contests.len(), p, |r, j| {
            let (a, b) = self.contests[r];
            self.covariates[(a, j)] - self.covariates[(b, j)]
        });
        let incidence = self
            .contests
            .iter()
            .map(|(a, b)| vec![Incidence::new(*a, 1.0), Incidence::new(*b, -1.0)])
            .collect();
        let names = if p == 1 {
            vec!["beta".to_string()]
        } else {
            (0..p).map(|j| format!("beta{j}")).collect()
        };
        ModelSpec::new(self.num_players, x, incidence, vec![0; self.num_players], family)?
            .with_names(names, vec!["sigma".to_string()])
    }

    /// Distinct unordered pairs that meet.
    pub fn pairs(&self) -> BTreeSet<(usize, usize)> {
        self.contests.iter().map(|(a, b)| (*a.min(b), *a.max(b))).collect()
    }
}

fn random_ktree_edges(n: usize, clique_size: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let c = clique_size.max(1).min(n.max(1));
    let mut edges = BTreeSet::new();
    let mut cliques: Vec<Vec<usize>> = Vec::new();
    let base: Vec<usize> = (0..c.min(n)).collect();
    for (i, a) in base.iter().enumerate() {
        for b in &base[i + 1..] {
            edges.insert((*a, *b));
        }
    }
    cliques.push(base);
    for v in c..n {
        let mut attach = cliques[rng.random_range(0..cliques.len())].clone();
        if attach.len() >= c {
            let drop = rng.random_range(0..attach.len());
            attach.remove(drop);
        }
        for a in &attach {
            edges.insert((*a.min(&v), *a.max(&v)));
        }
        attach.push(v);
        cliques.push(attach);
    }
    // Random relabelling so vertex order carries no structure.
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    edges
        .into_iter()
        .map(|(a, b)| {
            let (x, y) = (perm[a], perm[b]);
            (x.min(y), x.max(y))
        })
        .collect()
}

/// Nested multilevel layout.
///
/// Items sit in level-1 groups, which sit in level-2 groups, and so on up to
/// `levels - 1` group levels. There are `top_groups` groups at the top level
/// and every group has `branching` children. Every item touches one random
/// effect per group level, each level with its own scale parameter. The fixed
/// part is an intercept plus one standard-normal item covariate.
///
/// Effects are numbered level by level, lowest level first.
pub fn nested_template(
    levels: usize,
    top_groups: usize,
    branching: usize,
    family: Family,
    covariate_seed: u64,
) -> Result<ModelSpec> {
    if levels < 2 {
        return Err(Error::invalid("a nested model needs at least two levels"));
    }
    let group_levels = levels - 1;
    // Number of groups at level l (1-based, l = group_levels is the top).
    let count = |l: usize| top_groups * branching.pow((group_levels - l) as u32);
    let mut level_offset = vec![0usize; group_levels + 1];
    for l in 1..=group_levels {
        level_offset[l] = level_offset[l - 1] + count(l);
    }
    let num_effects = level_offset[group_levels];
    let num_items = count(1) * branching;
    let mut incidence = Vec::with_capacity(num_items);
    for item in 0..num_items {
        let mut row = Vec::with_capacity(group_levels);
        let mut g = item / branching;
        for l in 1..=group_levels {
            row.push(Incidence::new(level_offset[l - 1] + g, 1.0));
            g /= branching;
        }
        incidence.push(row);
    }
    let mut scale_map = Vec::with_capacity(num_effects);
    for l in 1..=group_levels {
        scale_map.extend(std::iter::repeat_n(l - 1, count(l)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(covariate_seed);
    let x = DMatrix::from_fn(num_items, 2, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
    ModelSpec::new(num_effects, x, incidence, scale_map, family)?.with_names(
        vec!["alpha".into(), "beta".into()],
        (1..=group_levels).map(|l| format!("sigma{l}")).collect(),
    )
}
