//! Branching-process prior over trees and the rule proposal measure.
//!
//! A node at depth d splits with probability γ(1+d)^(−ρ). Its rule picks a
//! variable uniformly among those with at least one feasible cut point at the
//! node, then a cut point uniformly among that variable's feasible ones. A cut
//! is feasible when both sides keep at least `min_leaf` rows. Categorical
//! levels present at the node are ranked by empirical frequency ΣN/Σv and
//! cut points are prefixes of that ranking.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset};
use crate::error::{Error, Result};
use crate::tree::{DecisionRule, NodeId, NodeKind, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePriorConfig {
    pub gamma: f64,
    pub rho: f64,
    pub grid_size: usize,
    pub min_leaf: usize,
}

impl Default for TreePriorConfig {
    fn default() -> Self {
        TreePriorConfig { gamma: 0.99, rho: 15.0, grid_size: 100, min_leaf: 10 }
    }
}

impl TreePriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma = {} outside (0, 1]", self.gamma)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho = {} must be non-negative", self.rho)));
        }
        if self.grid_size < 2 {
            return Err(Error::Config("grid size must be at least 2".into()));
        }
        if self.min_leaf < 1 {
            return Err(Error::Config("minimum leaf size must be at least 1".into()));
        }
        Ok(())
    }
}

/// p(d) = γ(1+d)^(−ρ), clamped to 1.
pub fn split_probability(depth: u32, cfg: &TreePriorConfig) -> f64 {
    (cfg.gamma * (1.0 + depth as f64).powf(-cfg.rho)).min(1.0)
}

/// Numeric cut grids, computed once on the training data. Categorical
/// variables carry no grid: their cut points depend on the node.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidates {
    grids: Vec<Option<Vec<f64>>>,
    /// Row indices sorted by value, per numeric variable.
    order: Vec<Option<Vec<u32>>>,
}

impl SplitCandidates {
    /// Grids of `grid_size` quantiles at probabilities k/(grid_size+1), deduplicated.
    pub fn from_data(data: &Dataset, grid_size: usize) -> SplitCandidates {
        let grids = (0..data.schema().len())
            .map(|j| match data.column(j) {
                Column::Numeric(x) => {
                    let mut sorted = x.clone();
                    sorted.sort_by(f64::total_cmp);
                    let n = sorted.len();
                    let mut grid: Vec<f64> = (1..=grid_size)
                        .filter(|_| n > 0)
                        .map(|k| {
                            let pos = (k as f64 / (grid_size + 1) as f64 * (n - 1) as f64).round() as usize;
                            sorted[pos]
                        })
                        .collect();
                    grid.dedup();
                    Some(grid)
                }
                Column::Categorical(_) => None,
            })
            .collect();
        let order = (0..data.schema().len())
            .map(|j| match data.column(j) {
                Column::Numeric(x) => {
                    let mut idx: Vec<u32> = (0..data.len() as u32).collect();
                    idx.sort_by(|&a, &b| x[a as usize].total_cmp(&x[b as usize]));
                    Some(idx)
                }
                Column::Categorical(_) => None,
            })
            .collect();
        SplitCandidates { grids, order }
    }

    /// Candidates from explicit grids, without a presorted row order.
    pub fn with_grids(grids: Vec<Option<Vec<f64>>>) -> SplitCandidates {
        let order = vec![None; grids.len()];
        SplitCandidates { grids, order }
    }

    /// Training rows sorted by the values of a numeric variable.
    pub fn sorted_rows(&self, variable: usize) -> Option<&[u32]> {
        self.order[variable].as_deref()
    }

    pub fn grid(&self, variable: usize) -> Option<&[f64]> {
        self.grids[variable].as_deref()
    }

    pub fn n_variables(&self) -> usize {
        self.grids.len()
    }
}

/// Feasible cut points of one variable at one node.
#[derive(Debug, Clone, PartialEq)]
pub enum CutSet<'a> {
    Numeric { variable: usize, thresholds: &'a [f64] },
    /// Levels ranked by node frequency; feasible cuts are the prefixes whose
    /// lengths lie in `lengths`.
    Categorical { variable: usize, order: Vec<u32>, lengths: std::ops::Range<usize> },
}

impl CutSet<'_> {
    pub fn len(&self) -> usize {
        match self {
            CutSet::Numeric { thresholds, .. } => thresholds.len(),
            CutSet::Categorical { lengths, .. } => lengths.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rule(&self, i: usize) -> DecisionRule {
        match self {
            CutSet::Numeric { variable, thresholds } => {
                DecisionRule::Numeric { variable: *variable, threshold: thresholds[i] }
            }
            CutSet::Categorical { variable, order, lengths } => {
                DecisionRule::categorical(*variable, order[..lengths.start + i].to_vec())
            }
        }
    }
}

/// Levels present among `rows`, ranked by ΣN/Σv ascending (ties by level
/// code), with their row counts.
pub fn level_ranking(data: &Dataset, rows: &[u32], variable: usize) -> Vec<(u32, usize)> {
    let Column::Categorical(x) = data.column(variable) else {
        panic!("variable {variable} is not categorical");
    };
    let n_levels = data.schema().variables[variable].levels().len();
    let mut count = vec![0usize; n_levels];
    let mut claims = vec![0u64; n_levels];
    let mut expo = vec![0.0; n_levels];
    for &r in rows {
        let k = x[r as usize] as usize;
        count[k] += 1;
        claims[k] += data.claims()[r as usize];
        expo[k] += data.exposure()[r as usize];
    }
    let mut present: Vec<(u32, usize, f64)> = (0..n_levels)
        .filter(|&k| count[k] > 0)
        .map(|k| (k as u32, count[k], claims[k] as f64 / expo[k]))
        .collect();
    present.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    present.into_iter().map(|(k, c, _)| (k, c)).collect()
}

/// Reusable buffers for [`feasible_cuts`].
#[derive(Debug, Default)]
pub struct CutScratch {
    values: Vec<f64>,
    mask: Vec<bool>,
}

/// The `m`-th smallest and `m`-th largest values of `x` over `rows`.
fn order_statistics(
    x: &[f64],
    rows: &[u32],
    m: usize,
    sorted: Option<&[u32]>,
    scratch: &mut CutScratch,
) -> (f64, f64) {
    let n = rows.len();
    match sorted {
        // Large nodes: walk the presorted training order from both ends.
        Some(order) if n >= 64 && order.len() == x.len() => {
            let mask = &mut scratch.mask;
            mask.resize(x.len(), false);
            for &r in rows {
                mask[r as usize] = true;
            }
            let pick = |iter: &mut dyn Iterator<Item = &u32>| {
                let mut seen = 0;
                for &r in iter {
                    if mask[r as usize] {
                        seen += 1;
                        if seen == m {
                            return x[r as usize];
                        }
                    }
                }
                unreachable!("node has at least m rows")
            };
            let lo = pick(&mut order.iter());
            let hi = pick(&mut order.iter().rev());
            for &r in rows {
                mask[r as usize] = false;
            }
            (lo, hi)
        }
        _ => {
            let v = &mut scratch.values;
            v.clear();
            v.extend(rows.iter().map(|&r| x[r as usize]));
            let (_, &mut lo, _) = v.select_nth_unstable_by(m - 1, f64::total_cmp);
            let (_, &mut hi, _) = v.select_nth_unstable_by(n - m, f64::total_cmp);
            (lo, hi)
        }
    }
}

/// Cut points of `variable` leaving at least `min_leaf` rows on both sides.
pub fn feasible_cuts<'a>(
    data: &Dataset,
    rows: &[u32],
    variable: usize,
    candidates: &'a SplitCandidates,
    min_leaf: usize,
    scratch: &mut CutScratch,
) -> CutSet<'a> {
    let n = rows.len();
    let m = min_leaf.max(1);
    match data.column(variable) {
        Column::Numeric(x) => {
            let grid = candidates.grid(variable).expect("numeric grid");
            if n < 2 * m {
                return CutSet::Numeric { variable, thresholds: &grid[..0] };
            }
            // Cut c is feasible iff lo < c ≤ hi.
            let (lo, hi) = order_statistics(x, rows, m, candidates.sorted_rows(variable), scratch);
            let start = grid.partition_point(|&c| c <= lo);
            let end = grid.partition_point(|&c| c <= hi).max(start);
            CutSet::Numeric { variable, thresholds: &grid[start..end] }
        }
        Column::Categorical(_) => {
            let ranked = level_ranking(data, rows, variable);
            let order: Vec<u32> = ranked.iter().map(|&(k, _)| k).collect();
            let mut prefix = 0;
            let (mut first, mut last) = (usize::MAX, 0);
            for (i, &(_, c)) in ranked.iter().enumerate().take(ranked.len().saturating_sub(1)) {
                prefix += c;
                if prefix >= m && n - prefix >= m {
                    first = first.min(i + 1);
                    last = i + 2;
                }
            }
            let lengths = if first == usize::MAX { 0..0 } else { first..last };
            CutSet::Categorical { variable, order, lengths }
        }
    }
}

/// Per-variable feasible cut counts at a node.
pub fn feasible_counts(
    data: &Dataset,
    rows: &[u32],
    candidates: &SplitCandidates,
    min_leaf: usize,
    scratch: &mut CutScratch,
) -> Vec<usize> {
    (0..candidates.n_variables())
        .map(|j| feasible_cuts(data, rows, j, candidates, min_leaf, scratch).len())
        .collect()
}

/// log P(rule | node) given per-variable feasible counts: −log(#usable
/// variables) − log(#cuts of the rule's variable). Counts are floored at one so
/// hand-built trees with off-grid rules still get a finite value.
pub fn rule_log_prob(counts: &[usize], variable: usize) -> f64 {
    let usable = counts.iter().filter(|&&c| c > 0).count().max(1);
    -(usable as f64).ln() - (counts[variable].max(1) as f64).ln()
}

/// Log prior of the subtree rooted at `id` (the node's own split factor
/// included, ancestors excluded).
pub fn subtree_log_prior(
    tree: &Tree,
    id: NodeId,
    data: &Dataset,
    candidates: &SplitCandidates,
    cfg: &TreePriorConfig,
) -> f64 {
    let mut scratch = CutScratch::default();
    tree.subtree(id)
        .into_iter()
        .map(|i| {
            let node = tree.node(i);
            let p = split_probability(node.depth, cfg);
            match &node.kind {
                NodeKind::Leaf(_) => (1.0 - p).ln(),
                NodeKind::Internal { rule, .. } => {
                    let counts = feasible_counts(data, &node.stats.rows, candidates, cfg.min_leaf, &mut scratch);
                    p.ln() + rule_log_prob(&counts, rule.variable())
                }
            }
        })
        .sum()
}

pub fn log_tree_prior(tree: &Tree, data: &Dataset, candidates: &SplitCandidates, cfg: &TreePriorConfig) -> f64 {
    subtree_log_prior(tree, 0, data, candidates, cfg)
}

/// A proposed rule with log P(rule | node) under the proposal measure.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposedRule {
    pub rule: DecisionRule,
    pub log_prob: f64,
}

/// Draws a rule for a node: a uniformly chosen usable variable, then a
/// uniformly chosen feasible cut point. Returns `None` when no variable has a
/// feasible cut, which tells the caller to abandon the move.
pub fn propose_rule<R: Rng + ?Sized>(
    data: &Dataset,
    rows: &[u32],
    candidates: &SplitCandidates,
    min_leaf: usize,
    rng: &mut R,
) -> Option<ProposedRule> {
    let mut scratch = CutScratch::default();
    let cuts: Vec<CutSet> = (0..candidates.n_variables())
        .map(|j| feasible_cuts(data, rows, j, candidates, min_leaf, &mut scratch))
        .collect();
    let usable: Vec<usize> = (0..cuts.len()).filter(|&j| !cuts[j].is_empty()).collect();
    let &j = usable.choose(rng)?;
    let i = rng.random_range(0..cuts[j].len());
    let log_prob = -(usable.len() as f64).ln() - (cuts[j].len() as f64).ln();
    Some(ProposedRule { rule: cuts[j].rule(i), log_prob })
}
