//! Metropolis-Hastings search over trees.
//!
//! Each iteration draws a move type from the proposal mix, builds a candidate
//! tree, refreshes the latent variables of the rows it touches (NB and ZIP
//! families), scores the candidate with the node parameters integrated out,
//! and finally redraws the parameters of the leaves involved. Only the
//! subtree changed by a move (its "region") enters the acceptance ratio.
//!
//! Proposal measures are enumerated exactly rather than realized by retry
//! loops: drawing uniformly among the admissible targets is the same law as
//! drawing without replacement until an admissible one turns up, and it makes
//! the reverse-move probabilities available in closed form.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::sync::{Arc, Weak};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset};
use crate::error::{Error, Result};
use crate::family::{
    kappa_or_clamp, latent_log_density, leaf_log_marginal, log_data_likelihood, plug_in_params, posterior,
    sample_latents, Family, Latents, NodeParams, Priors,
};
use crate::prior::{
    feasible_counts, level_ranking, propose_rule, rule_log_prob, split_probability, CutScratch, SplitCandidates,
    TreePriorConfig,
};
use crate::tree::{DecisionRule, Edit, Leaf, NodeId, NodeKind, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Grow,
    Prune,
    Change1,
    Change2,
    Swap,
}

impl MoveKind {
    pub const ALL: [MoveKind; 5] = [MoveKind::Grow, MoveKind::Prune, MoveKind::Change1, MoveKind::Change2, MoveKind::Swap];

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Grow => "grow",
            MoveKind::Prune => "prune",
            MoveKind::Change1 => "change1",
            MoveKind::Change2 => "change2",
            MoveKind::Swap => "swap",
        }
    }
}

impl fmt::Display for MoveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Move-type probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalMix {
    pub grow: f64,
    pub prune: f64,
    pub change1: f64,
    pub change2: f64,
    pub swap: f64,
}

impl Default for ProposalMix {
    fn default() -> Self {
        ProposalMix { grow: 0.2, prune: 0.2, change1: 0.2, change2: 0.2, swap: 0.2 }
    }
}

impl ProposalMix {
    pub fn prob(&self, kind: MoveKind) -> f64 {
        match kind {
            MoveKind::Grow => self.grow,
            MoveKind::Prune => self.prune,
            MoveKind::Change1 => self.change1,
            MoveKind::Change2 => self.change2,
            MoveKind::Swap => self.swap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = MoveKind::ALL.map(|k| self.prob(k));
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("proposal probabilities must be non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("proposal probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveKind {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = MoveKind::Grow;
        for kind in MoveKind::ALL {
            let p = self.prob(kind);
            if p > 0.0 {
                acc += p;
                last = kind;
                if u < acc {
                    return kind;
                }
            }
        }
        last
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub restarts: usize,
    pub mix: ProposalMix,
    pub prior: TreePriorConfig,
    pub family: Family,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 10_000,
            burn_in: 2_000,
            restarts: 3,
            mix: ProposalMix::default(),
            prior: TreePriorConfig::default(),
            family: Family::Poisson,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.restarts == 0 {
            return Err(Error::Config("at least one restart is required".into()));
        }
        self.mix.validate()?;
        self.prior.validate()
    }
}

/// Random stream of one restart: the restart index selects a ChaCha stream.
pub fn chain_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Current tree, with leaf parameters and caches, plus the latent variables.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub tree: Tree,
    pub latents: Latents,
    pub restart: usize,
    pub iteration: usize,
    pub rng: ChaCha8Rng,
}

/// A candidate tree. `region` is the root of the changed subtree; it has the
/// same id in both trees because edits never renumber the nodes before it.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub kind: MoveKind,
    pub tree: Tree,
    pub region: NodeId,
    /// log q(candidate → current) − log q(current → candidate)
    pub log_q_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub restart: usize,
    pub iteration: usize,
    #[serde(rename = "move")]
    pub move_kind: MoveKind,
    pub accepted: bool,
    pub n_leaves: usize,
    pub log_marginal: f64,
    pub log_data_lik: f64,
    pub usage: Vec<usize>,
}

/// An accepted post-burn-in tree. Its leaves carry the full conditionals at
/// acceptance time, which is all the latent state DIC needs.
#[derive(Debug, Clone)]
pub struct ArchiveEntry {
    pub restart: usize,
    pub iteration: usize,
    pub tree: Tree,
    pub log_data_lik: f64,
    pub log_marginal: f64,
    pub n_leaves: usize,
    pub usage: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub archive: Vec<ArchiveEntry>,
}

/// min(0, log q-ratio + Δ log marginal + Δ log prior); NaN counts as −∞.
pub fn acceptance_log_ratio(log_q_ratio: f64, delta_log_marginal: f64, delta_log_prior: f64) -> f64 {
    let r = log_q_ratio + delta_log_marginal + delta_log_prior;
    if r.is_nan() {
        f64::NEG_INFINITY
    } else {
        r.min(0.0)
    }
}

/// Leaf counts below and above `min_leaf` while rows move between subtrees.
struct Tally {
    count: Vec<usize>,
    deficient: usize,
    min: usize,
}

impl Tally {
    fn new(slots: usize, min: usize) -> Self {
        Tally { count: vec![0; slots], deficient: slots, min }
    }

    fn add(&mut self, slot: u32) {
        let c = &mut self.count[slot as usize];
        *c += 1;
        if *c == self.min {
            self.deficient -= 1;
        }
    }

    fn remove(&mut self, slot: u32) {
        let c = &mut self.count[slot as usize];
        if *c == self.min {
            self.deficient += 1;
        }
        *c -= 1;
    }
}

/// Per-node values keyed by the address of the node's row vector. Trees
/// share row vectors between untouched nodes, so a value survives every edit
/// that does not reroute the node. The weak handle guards against a freed
/// address being reused.
struct RowCache<T> {
    entries: HashMap<usize, (Weak<Vec<u32>>, T)>,
}

impl<T: Clone> RowCache<T> {
    fn get_or(&mut self, rows: &Arc<Vec<u32>>, make: impl FnOnce() -> T) -> T {
        let key = Arc::as_ptr(rows) as usize;
        if let Some((weak, value)) = self.entries.get(&key) {
            if weak.upgrade().is_some_and(|r| Arc::ptr_eq(&r, rows)) {
                return value.clone();
            }
        }
        let value = make();
        if self.entries.len() > 4096 {
            self.entries.retain(|_, (w, _)| w.strong_count() > 0);
        }
        self.entries.insert(key, (Arc::downgrade(rows), value.clone()));
        value
    }
}

impl<T> Default for RowCache<T> {
    fn default() -> Self {
        RowCache { entries: HashMap::new() }
    }
}

/// Everything a chain shares: data, cut grids, model, mix and caches of
/// per-node cut counts and plug-in parameters.
pub struct Sampler<'a> {
    data: &'a Dataset,
    candidates: &'a SplitCandidates,
    family: Family,
    priors: Priors,
    prior: TreePriorConfig,
    mix: ProposalMix,
    counts: RefCell<RowCache<Arc<Vec<usize>>>>,
    plug_ins: RefCell<RowCache<NodeParams>>,
    kappas: RefCell<RowCache<f64>>,
}

impl<'a> Sampler<'a> {
    pub fn new(
        data: &'a Dataset,
        candidates: &'a SplitCandidates,
        family: Family,
        priors: Priors,
        prior: TreePriorConfig,
        mix: ProposalMix,
    ) -> Self {
        Sampler { data, candidates, family, priors, prior, mix, counts: RefCell::default(), plug_ins: RefCell::default(), kappas: RefCell::default() }
    }

    /// Feasible cut counts per variable for the rows of `id`.
    pub fn cut_counts(&self, tree: &Tree, id: NodeId) -> Arc<Vec<usize>> {
        let rows = &tree.node(id).stats.rows;
        self.counts.borrow_mut().get_or(rows, || {
            Arc::new(feasible_counts(self.data, rows, self.candidates, self.min_leaf(), &mut CutScratch::default()))
        })
    }

    /// Row-only leaf parameters that the joint move proposes latents from.
    fn plug_in(&self, tree: &Tree, id: NodeId) -> NodeParams {
        let rows = &tree.node(id).stats.rows;
        self.plug_ins
            .borrow_mut()
            .get_or(rows, || plug_in_params(self.family, self.data, rows, self.kappa(rows), &self.priors))
    }

    /// Log prior of the subtree at `id`, its own split factor included.
    pub fn region_log_prior(&self, tree: &Tree, id: NodeId) -> f64 {
        tree.subtree(id)
            .into_iter()
            .map(|i| {
                let node = tree.node(i);
                let p = split_probability(node.depth, &self.prior);
                match &node.kind {
                    NodeKind::Leaf(_) => (1.0 - p).ln(),
                    NodeKind::Internal { rule, .. } => p.ln() + rule_log_prob(&self.cut_counts(tree, i), rule.variable()),
                }
            })
            .sum()
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn family(&self) -> Family {
        self.family
    }

    fn min_leaf(&self) -> usize {
        self.prior.min_leaf.max(1)
    }

    /// Root-only starting state with ξ = 1 or (δ, φ) = (1, 1).
    pub fn init_state(&self, seed: u64, restart: usize) -> ChainState {
        let mut rng = chain_rng(seed, restart);
        let mut tree = Tree::root(self.data);
        let latents = Latents::initial(self.family, self.data.len());
        self.refresh_leaf(&mut tree, 0, &latents, &mut rng);
        ChainState { tree, latents, restart, iteration: 0, rng }
    }

    fn kappa(&self, rows: &Arc<Vec<u32>>) -> Option<f64> {
        self.family.is_nb().then(|| {
            self.kappas
                .borrow_mut()
                .get_or(rows, || kappa_or_clamp(self.family, self.data, rows, self.priors.kappa_max))
        })
    }

    /// Recomputes the full conditional of leaf `id`, draws its parameters from
    /// it and updates the cached log marginal and log data likelihood (the
    /// latter at the posterior mean).
    pub fn refresh_leaf<R: Rng + ?Sized>(&self, tree: &mut Tree, id: NodeId, latents: &Latents, rng: &mut R) {
        let rows = std::sync::Arc::clone(&tree.node(id).stats.rows);
        let kappa = self.kappa(&rows);
        let post = posterior(self.family, self.data, &rows, latents, kappa, &self.priors);
        let params = post.sample(rng);
        let log_marginal = leaf_log_marginal(self.family, self.data, &rows, latents, kappa, &self.priors);
        let log_data_lik = log_data_likelihood(self.family, &post.mean(), self.data, &rows);
        *tree.leaf_mut(id) = Leaf { params: Some(params), posterior: Some(post), log_marginal, log_data_lik };
    }

    pub fn leaf_log_marginal(&self, tree: &Tree, id: NodeId, latents: &Latents) -> f64 {
        let rows = &tree.node(id).stats.rows;
        leaf_log_marginal(self.family, self.data, rows, latents, self.kappa(rows), &self.priors)
    }

    /// Integrated (or augmented integrated) likelihood of the leaves under `region`.
    pub fn region_log_marginal(&self, tree: &Tree, region: NodeId, latents: &Latents) -> f64 {
        tree.subtree_leaves(region).into_iter().map(|id| self.leaf_log_marginal(tree, id, latents)).sum()
    }

    pub fn tree_log_marginal(&self, tree: &Tree, latents: &Latents) -> f64 {
        self.region_log_marginal(tree, 0, latents)
    }

    pub fn log_prior(&self, tree: &Tree) -> f64 {
        self.region_log_prior(tree, 0)
    }

    /// Leaves with at least one feasible rule.
    pub fn growable(&self, tree: &Tree) -> Vec<NodeId> {
        let m = self.min_leaf();
        tree.leaves()
            .into_iter()
            .filter(|&id| tree.node(id).stats.n >= 2 * m && self.cut_counts(tree, id).iter().any(|&c| c > 0))
            .collect()
    }

    /// Rules on `variable` that could replace the rule of internal node `node`
    /// while keeping every leaf of its subtree at `min_leaf` rows or more.
    /// Numeric candidates come from the global grid, categorical ones are
    /// prefixes of the node's frequency ranking.
    pub fn valid_rules(&self, tree: &Tree, node: NodeId, variable: usize) -> Vec<DecisionRule> {
        self.change_options(tree, node, [variable]).pop().map(|(_, r)| r).unwrap_or_default()
    }

    /// [`Self::valid_rules`] for several variables, keeping the non-empty ones.
    pub fn change_options(
        &self,
        tree: &Tree,
        node: NodeId,
        variables: impl IntoIterator<Item = usize>,
    ) -> Vec<(usize, Vec<DecisionRule>)> {
        let Some((left, right)) = tree.node(node).children() else {
            return Vec::new();
        };
        let rows = &tree.node(node).stats.rows;
        let m = self.min_leaf();
        if rows.len() < 2 * m {
            return Vec::new();
        }
        let mut slot = vec![u32::MAX; tree.len()];
        let mut n_slots = 0;
        for id in tree.subtree_leaves(left).into_iter().chain(tree.subtree_leaves(right)) {
            slot[id] = n_slots;
            n_slots += 1;
        }
        // Destination leaf of each row if sent left / right at `node`, by data row.
        let mut dest = vec![(u32::MAX, u32::MAX); self.data.len()];
        for &r in rows.iter() {
            let r = r as usize;
            dest[r] = (slot[tree.route_row_from(self.data, r, left)], slot[tree.route_row_from(self.data, r, right)]);
        }
        let mut out = Vec::new();
        for variable in variables {
            let mut tally = Tally::new(n_slots as usize, m);
            let mut rules = Vec::new();
            match self.data.column(variable) {
                Column::Numeric(x) => {
                    let order = self.candidates.sorted_rows(variable).expect("numeric order");
                    let moves: Vec<(f64, u32, u32)> = order
                        .iter()
                        .filter_map(|&r| {
                            let (dl, dr) = dest[r as usize];
                            (dl != u32::MAX).then(|| (x[r as usize], dl, dr))
                        })
                        .collect();
                    for &(_, _, dr) in &moves {
                        tally.add(dr);
                    }
                    let mut next = 0;
                    for &c in self.candidates.grid(variable).unwrap_or(&[]) {
                        while next < moves.len() && moves[next].0 < c {
                            tally.remove(moves[next].2);
                            tally.add(moves[next].1);
                            next += 1;
                        }
                        if next == moves.len() {
                            break;
                        }
                        if tally.deficient == 0 {
                            rules.push(DecisionRule::Numeric { variable, threshold: c });
                        }
                    }
                }
                Column::Categorical(x) => {
                    let ranking = level_ranking(self.data, rows, variable);
                    let n_levels = self.data.schema().variables[variable].levels().len();
                    let mut buckets: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n_levels];
                    for &r in rows.iter() {
                        let d = dest[r as usize];
                        tally.add(d.1);
                        buckets[x[r as usize] as usize].push(d);
                    }
                    let order: Vec<u32> = ranking.iter().map(|&(k, _)| k).collect();
                    for k in 1..order.len() {
                        for &(dl, dr) in &buckets[order[k - 1] as usize] {
                            tally.remove(dr);
                            tally.add(dl);
                        }
                        if tally.deficient == 0 {
                            rules.push(DecisionRule::categorical(variable, order[..k].to_vec()));
                        }
                    }
                }
            }
            if !rules.is_empty() {
                out.push((variable, rules));
            }
        }
        out
    }

    /// Parent–child pairs of internal nodes splitting on different variables
    /// whose swap yields a valid tree, with the swapped trees.
    pub fn valid_swaps(&self, tree: &Tree) -> Vec<((NodeId, NodeId), Tree)> {
        let m = self.min_leaf();
        let mut out = Vec::new();
        for child in tree.internal_nodes() {
            let Some(parent) = tree.node(child).parent else { continue };
            let pv = tree.node(parent).rule().map(|r| r.variable());
            let cv = tree.node(child).rule().map(|r| r.variable());
            if pv == cv {
                continue;
            }
            if let Ok(t) = tree.apply(&Edit::SwapRules { parent, child }, self.data, m) {
                out.push(((parent, child), t));
            }
        }
        out
    }

    pub fn propose<R: Rng + ?Sized>(&self, tree: &Tree, rng: &mut R) -> (MoveKind, Option<Proposal>) {
        let kind = self.mix.draw(rng);
        (kind, self.propose_move(tree, kind, rng))
    }

    /// Builds a candidate for a given move type, or `None` when the move is
    /// impossible from `tree`.
    pub fn propose_move<R: Rng + ?Sized>(&self, tree: &Tree, kind: MoveKind, rng: &mut R) -> Option<Proposal> {
        let m = self.min_leaf();
        let ln = |x: f64| x.ln();
        match kind {
            MoveKind::Grow => {
                let growable = self.growable(tree);
                let &leaf = growable.choose(rng)?;
                let rows = &tree.node(leaf).stats.rows;
                let rule = propose_rule(self.data, rows, self.candidates, m, rng)?;
                let cand = tree.apply(&Edit::Grow { leaf, rule: rule.rule }, self.data, m).ok()?;
                let forward = ln(self.mix.grow) - ln(growable.len() as f64) + rule.log_prob;
                let reverse = ln(self.mix.prune) - ln(cand.prunable().len() as f64);
                Some(Proposal { kind, tree: cand, region: leaf, log_q_ratio: reverse - forward })
            }
            MoveKind::Prune => {
                let prunable = tree.prunable();
                let &parent = prunable.choose(rng)?;
                let var = tree.node(parent).rule()?.variable();
                let cand = tree.apply(&Edit::Prune { parent }, self.data, m).ok()?;
                let counts = self.cut_counts(tree, parent);
                let forward = ln(self.mix.prune) - ln(prunable.len() as f64);
                let reverse =
                    ln(self.mix.grow) - ln(self.growable(&cand).len().max(1) as f64) + rule_log_prob(&counts, var);
                Some(Proposal { kind, tree: cand, region: parent, log_q_ratio: reverse - forward })
            }
            MoveKind::Change1 => {
                let internal = tree.internal_nodes();
                let &node = internal.choose(rng)?;
                let var = tree.node(node).rule()?.variable();
                let rules = self.valid_rules(tree, node, var);
                let rule = rules.choose(rng)?.clone();
                let cand = tree.apply(&Edit::ChangeRule { node, rule }, self.data, m).ok()?;
                // Node rows and the subtree below are shared, so the reverse
                // move sees the same node pool and the same cut set.
                Some(Proposal { kind, tree: cand, region: node, log_q_ratio: 0.0 })
            }
            MoveKind::Change2 => {
                let internal = tree.internal_nodes();
                let &node = internal.choose(rng)?;
                let old_var = tree.node(node).rule()?.variable();
                let options = self.change_options(tree, node, 0..self.candidates.n_variables());
                let (_, rules) = options.choose(rng)?;
                let rule = rules.choose(rng)?.clone();
                let old_count = options.iter().find(|(j, _)| *j == old_var).map_or(1, |(_, r)| r.len());
                let cand = tree.apply(&Edit::ChangeRule { node, rule }, self.data, m).ok()?;
                let log_q_ratio = ln(rules.len() as f64) - ln(old_count as f64);
                Some(Proposal { kind, tree: cand, region: node, log_q_ratio })
            }
            MoveKind::Swap => {
                let mut swaps = self.valid_swaps(tree);
                if swaps.is_empty() {
                    return None;
                }
                let n_forward = swaps.len();
                let ((parent, _), cand) = swaps.swap_remove(rng.random_range(0..n_forward));
                let n_reverse = self.valid_swaps(&cand).len();
                let log_q_ratio = ln(n_forward as f64) - ln(n_reverse as f64);
                Some(Proposal { kind, tree: cand, region: parent, log_q_ratio })
            }
        }
    }

    /// Unclamped log acceptance ratio of `proposal` against `current` under
    /// the given latents.
    pub fn log_ratio(&self, current: &Tree, proposal: &Proposal, latents: &Latents) -> f64 {
        let region = proposal.region;
        let dm = self.region_log_marginal(&proposal.tree, region, latents)
            - self.region_log_marginal(current, region, latents);
        let dp = self.region_log_prior(&proposal.tree, region) - self.region_log_prior(current, region);
        proposal.log_q_ratio + dm + dp
    }

    /// Log acceptance ratio of a joint move to (candidate tree, fresh latents).
    /// The region rows get latents drawn from their full conditionals under
    /// plug-in parameters of the candidate leaves; the reverse move would draw
    /// the current latents the same way under the current leaves. Returns the
    /// ratio and the proposed latent vector.
    pub fn joint_log_ratio<R: Rng + ?Sized>(
        &self,
        current: &Tree,
        proposal: &Proposal,
        latents: &Latents,
        rng: &mut R,
    ) -> (f64, Latents) {
        let region = proposal.region;
        let mut fresh = latents.clone();
        let mut log_q = 0.0;
        for id in proposal.tree.subtree_leaves(region) {
            let rows = &proposal.tree.node(id).stats.rows;
            let theta = self.plug_in(&proposal.tree, id);
            sample_latents(self.family, &theta, self.data, rows, &mut fresh, rng);
            log_q -= latent_log_density(self.family, &theta, self.data, rows, &fresh);
        }
        for id in current.subtree_leaves(region) {
            let rows = &current.node(id).stats.rows;
            let theta = self.plug_in(current, id);
            log_q += latent_log_density(self.family, &theta, self.data, rows, latents);
        }
        let dm = self.region_log_marginal(&proposal.tree, region, &fresh) - self.region_log_marginal(current, region, latents);
        let dp = self.region_log_prior(&proposal.tree, region) - self.region_log_prior(current, region);
        (proposal.log_q_ratio + dm + dp + log_q, fresh)
    }

    /// One iteration: propose, refresh the latents of the region rows, accept
    /// or reject, then redraw the parameters of the region leaves. Families
    /// with latents move the tree and the region latents jointly.
    pub fn step(&self, state: &mut ChainState) -> TraceRecord {
        state.iteration += 1;
        let (kind, proposal) = self.propose(&state.tree, &mut state.rng);
        let accepted = match proposal {
            None => {
                for id in state.tree.leaves() {
                    let leaf = state.tree.leaf_mut(id);
                    leaf.params = leaf.posterior.map(|p| p.sample(&mut state.rng));
                }
                false
            }
            Some(p) => {
                let region = p.region;
                if self.family.needs_latents() {
                    for id in state.tree.subtree_leaves(region) {
                        let node = state.tree.node(id);
                        let params = node.leaf().and_then(|l| l.params).expect("leaf parameters");
                        sample_latents(self.family, &params, self.data, &node.stats.rows, &mut state.latents, &mut state.rng);
                    }
                }
                let (r, fresh) = if self.family.needs_latents() {
                    let (r, fresh) = self.joint_log_ratio(&state.tree, &p, &state.latents, &mut state.rng);
                    (r, Some(fresh))
                } else {
                    (self.log_ratio(&state.tree, &p, &state.latents), None)
                };
                let log_alpha = acceptance_log_ratio(r, 0.0, 0.0);
                let accept = log_alpha >= 0.0 || state.rng.random::<f64>().ln() < log_alpha;
                if accept {
                    state.tree = p.tree;
                    if let Some(fresh) = fresh {
                        state.latents = fresh;
                    }
                }
                for id in state.tree.subtree_leaves(region) {
                    self.refresh_leaf(&mut state.tree, id, &state.latents, &mut state.rng);
                }
                accept
            }
        };
        let (log_marginal, log_data_lik) = tree_caches(&state.tree);
        TraceRecord {
            restart: state.restart,
            iteration: state.iteration,
            move_kind: kind,
            accepted,
            n_leaves: state.tree.n_leaves(),
            log_marginal,
            log_data_lik,
            usage: state.tree.variable_usage(),
        }
    }
}

/// Sums of the cached leaf log marginals and log data likelihoods.
pub fn tree_caches(tree: &Tree) -> (f64, f64) {
    tree.leaves().into_iter().fold((0.0, 0.0), |(m, d), id| {
        let leaf = tree.node(id).leaf().expect("leaf");
        (m + leaf.log_marginal, d + leaf.log_data_lik)
    })
}

/// Runs `config.restarts` independent chains from the root-only tree.
pub fn run(config: &ChainConfig, data: &Dataset, candidates: &SplitCandidates, priors: &Priors) -> Result<RunOutput> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("cannot fit an empty dataset".into()));
    }
    let sampler = Sampler::new(data, candidates, config.family, *priors, config.prior, config.mix);
    let mut out = RunOutput::default();
    out.trace.reserve(config.iterations * config.restarts);
    for restart in 0..config.restarts {
        let mut state = sampler.init_state(config.seed, restart);
        for _ in 0..config.iterations {
            let rec = sampler.step(&mut state);
            if rec.accepted && rec.iteration > config.burn_in {
                out.archive.push(ArchiveEntry {
                    restart,
                    iteration: rec.iteration,
                    tree: state.tree.clone(),
                    log_data_lik: rec.log_data_lik,
                    log_marginal: rec.log_marginal,
                    n_leaves: rec.n_leaves,
                    usage: rec.usage.clone(),
                });
            }
            out.trace.push(rec);
        }
    }
    Ok(out)
}

/// Proposal and acceptance counts of one move type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoveStats {
    pub kind: MoveKind,
    pub proposed: usize,
    pub accepted: usize,
}

impl MoveStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Per-move acceptance counts; impossible moves count as rejected proposals.
pub fn acceptance_rates(trace: &[TraceRecord]) -> Vec<MoveStats> {
    MoveKind::ALL
        .iter()
        .map(|&kind| {
            let recs = trace.iter().filter(|r| r.move_kind == kind);
            let (proposed, accepted) = recs.fold((0, 0), |(p, a), r| (p + 1, a + r.accepted as usize));
            MoveStats { kind, proposed, accepted }
        })
        .collect()
}

/// Writes the trace as CSV with one usage column per variable.
pub fn write_trace<W: Write>(trace: &[TraceRecord], variables: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["restart", "iteration", "move", "accepted", "n_leaves", "log_marginal", "log_data_lik"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(variables.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for r in trace {
        let mut rec = vec![
            r.restart.to_string(),
            r.iteration.to_string(),
            r.move_kind.to_string(),
            r.accepted.to_string(),
            r.n_leaves.to_string(),
            r.log_marginal.to_string(),
            r.log_data_lik.to_string(),
        ];
        rec.extend(r.usage.iter().map(|u| u.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}
