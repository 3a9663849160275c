//! Binary decision trees stored as a pre-order arena.
//!
//! Every node keeps the sufficient statistics of the training rows reaching it,
//! so proposals can be scored without re-routing the whole dataset. Edits never
//! mutate in place: they return a new tree in canonical pre-order, sharing row
//! vectors with the original wherever a subtree is untouched.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Column, Covariate, CovariateSchema, Dataset, VariableKind};
use crate::error::{Error, Result};
use crate::family::{NodeParams, Posterior};

pub type NodeId = usize;

/// Split rule; observations satisfying it go to the left child.
#[derive(Debug, Clone, PartialEq)]
pub enum DecisionRule {
    /// `x < threshold`
    Numeric { variable: usize, threshold: f64 },
    /// `x ∈ levels`, with `levels` sorted level codes.
    Categorical { variable: usize, levels: Vec<u32> },
}

impl DecisionRule {
    pub fn variable(&self) -> usize {
        match self {
            DecisionRule::Numeric { variable, .. } | DecisionRule::Categorical { variable, .. } => *variable,
        }
    }

    pub fn categorical(variable: usize, mut levels: Vec<u32>) -> Self {
        levels.sort_unstable();
        levels.dedup();
        DecisionRule::Categorical { variable, levels }
    }

    #[inline]
    pub fn goes_left(&self, data: &Dataset, row: usize) -> bool {
        match (self, data.column(self.variable())) {
            (DecisionRule::Numeric { threshold, .. }, Column::Numeric(x)) => x[row] < *threshold,
            (DecisionRule::Categorical { levels, .. }, Column::Categorical(x)) => {
                levels.binary_search(&x[row]).is_ok()
            }
            _ => panic!("rule kind does not match column kind"),
        }
    }

    /// Splits sorted `rows` into (left, right), both staying sorted.
    pub fn partition(&self, data: &Dataset, rows: &[u32]) -> (Vec<u32>, Vec<u32>) {
        let mut left = Vec::new();
        let mut right = Vec::new();
        match (self, data.column(self.variable())) {
            (DecisionRule::Numeric { threshold, .. }, Column::Numeric(x)) => {
                for &r in rows {
                    if x[r as usize] < *threshold {
                        left.push(r)
                    } else {
                        right.push(r)
                    }
                }
            }
            (DecisionRule::Categorical { levels, .. }, Column::Categorical(x)) => {
                let max = levels.last().copied().unwrap_or(0) as usize;
                let mut member = vec![false; max + 1];
                for &l in levels {
                    member[l as usize] = true;
                }
                for &r in rows {
                    let code = x[r as usize] as usize;
                    if code <= max && member[code] {
                        left.push(r)
                    } else {
                        right.push(r)
                    }
                }
            }
            _ => panic!("rule kind does not match column kind"),
        }
        (left, right)
    }

    fn check_against(&self, schema: &CovariateSchema) -> Result<()> {
        let var = schema
            .variables
            .get(self.variable())
            .ok_or_else(|| Error::Config(format!("rule variable {} out of range", self.variable())))?;
        match (self, &var.kind) {
            (DecisionRule::Numeric { threshold, .. }, VariableKind::Numeric) if threshold.is_finite() => Ok(()),
            (DecisionRule::Categorical { levels, .. }, VariableKind::Categorical { levels: all })
                if !levels.is_empty()
                    && levels.len() < all.len()
                    && levels.iter().all(|&l| (l as usize) < all.len()) =>
            {
                Ok(())
            }
            _ => Err(Error::CovariateKind(var.name.clone())),
        }
    }
}

/// Aggregates over the training rows reaching a node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSuffStats {
    pub n: usize,
    pub sum_claims: u64,
    pub sum_exposure: f64,
    pub rows: Arc<Vec<u32>>,
}

impl NodeSuffStats {
    pub fn from_rows(data: &Dataset, rows: Vec<u32>) -> Self {
        let claims = data.claims();
        let exposure = data.exposure();
        let mut sum_claims = 0;
        let mut sum_exposure = 0.0;
        for &r in &rows {
            sum_claims += claims[r as usize];
            sum_exposure += exposure[r as usize];
        }
        NodeSuffStats { n: rows.len(), sum_claims, sum_exposure, rows: Arc::new(rows) }
    }

    /// Empirical claim frequency ΣN/Σv (zero for an empty node).
    pub fn frequency(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum_claims as f64 / self.sum_exposure
        }
    }
}

/// Leaf payload. `params` holds either the chain's current draw or, once a tree
/// is finalized, the posterior means; `posterior` is the full conditional the
/// params were drawn from. The two log values are caches maintained by the chain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Leaf {
    pub params: Option<NodeParams>,
    pub posterior: Option<Posterior>,
    pub log_marginal: f64,
    pub log_data_lik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Internal { rule: DecisionRule, left: NodeId, right: NodeId },
    Leaf(Leaf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<NodeId>,
    pub depth: u32,
    pub stats: NodeSuffStats,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf(_))
    }

    pub fn leaf(&self) -> Option<&Leaf> {
        match &self.kind {
            NodeKind::Leaf(l) => Some(l),
            _ => None,
        }
    }

    pub fn rule(&self) -> Option<&DecisionRule> {
        match &self.kind {
            NodeKind::Internal { rule, .. } => Some(rule),
            _ => None,
        }
    }

    pub fn children(&self) -> Option<(NodeId, NodeId)> {
        match &self.kind {
            NodeKind::Internal { left, right, .. } => Some((*left, *right)),
            _ => None,
        }
    }
}

/// Structural edits.
#[derive(Debug, Clone, PartialEq)]
pub enum Edit {
    Grow { leaf: NodeId, rule: DecisionRule },
    /// Collapse `parent`, whose two children must both be leaves.
    Prune { parent: NodeId },
    ChangeRule { node: NodeId, rule: DecisionRule },
    SwapRules { parent: NodeId, child: NodeId },
}

#[derive(Debug, Clone)]
pub struct Tree {
    schema: Arc<CovariateSchema>,
    nodes: Vec<Node>,
}

impl Tree {
    /// Root-only tree holding every row of `data`.
    pub fn root(data: &Dataset) -> Tree {
        let rows = (0..data.len() as u32).collect();
        Tree {
            schema: Arc::new(data.schema().clone()),
            nodes: vec![Node {
                parent: None,
                depth: 0,
                stats: NodeSuffStats::from_rows(data, rows),
                kind: NodeKind::Leaf(Leaf::default()),
            }],
        }
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id]
    }

    pub fn leaf_mut(&mut self, id: NodeId) -> &mut Leaf {
        match &mut self.nodes[id].kind {
            NodeKind::Leaf(l) => l,
            _ => panic!("node {id} is not a leaf"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    pub fn internal_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| !self.nodes[i].is_leaf()).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Internal nodes whose children are both leaves.
    pub fn prunable(&self) -> Vec<NodeId> {
        self.internal_nodes()
            .into_iter()
            .filter(|&i| {
                let (l, r) = self.nodes[i].children().unwrap();
                self.nodes[l].is_leaf() && self.nodes[r].is_leaf()
            })
            .collect()
    }

    /// Leaves of the subtree rooted at `id`, in pre-order.
    pub fn subtree_leaves(&self, id: NodeId) -> Vec<NodeId> {
        self.subtree(id).into_iter().filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    /// All nodes of the subtree rooted at `id`, in pre-order.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(i) = stack.pop() {
            out.push(i);
            if let Some((l, r)) = self.nodes[i].children() {
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    /// Number of internal nodes splitting on each variable.
    pub fn variable_usage(&self) -> Vec<usize> {
        let mut usage = vec![0; self.schema.len()];
        for n in &self.nodes {
            if let Some(rule) = n.rule() {
                usage[rule.variable()] += 1;
            }
        }
        usage
    }

    /// Leaf reached by row `row` of a dataset sharing this tree's schema.
    pub fn route_row(&self, data: &Dataset, row: usize) -> NodeId {
        self.route_row_from(data, row, 0)
    }

    /// Leaf reached by descending from `start` with the rules below it.
    pub fn route_row_from(&self, data: &Dataset, row: usize, start: NodeId) -> NodeId {
        let mut id = start;
        while let NodeKind::Internal { rule, left, right } = &self.nodes[id].kind {
            id = if rule.goes_left(data, row) { *left } else { *right };
        }
        id
    }

    /// Leaf reached by a covariate vector given in schema order.
    pub fn route(&self, x: &[Covariate]) -> Result<NodeId> {
        if x.len() != self.schema.len() {
            return Err(Error::Data(format!(
                "expected {} covariates, got {}",
                self.schema.len(),
                x.len()
            )));
        }
        let mut id = 0;
        while let NodeKind::Internal { rule, left, right } = &self.nodes[id].kind {
            let var = &self.schema.variables[rule.variable()];
            let left_side = match (rule, &x[rule.variable()]) {
                (DecisionRule::Numeric { threshold, .. }, Covariate::Numeric(v)) => *v < *threshold,
                (DecisionRule::Categorical { levels, .. }, Covariate::Level(name)) => {
                    let code = var.levels().iter().position(|l| l == name).ok_or_else(|| {
                        Error::UnknownLevel { variable: var.name.clone(), level: name.clone() }
                    })?;
                    levels.binary_search(&(code as u32)).is_ok()
                }
                _ => return Err(Error::CovariateKind(var.name.clone())),
            };
            id = if left_side { *left } else { *right };
        }
        Ok(id)
    }

    /// Applies an edit, returning a new canonical tree. A result with a leaf
    /// smaller than `min_leaf` (including an empty side) yields
    /// [`Error::EditRejected`]; malformed targets yield other errors.
    pub fn apply(&self, edit: &Edit, data: &Dataset, min_leaf: usize) -> Result<Tree> {
        let min_leaf = min_leaf.max(1);
        let mut nodes = self.nodes.clone();
        let check = |id: NodeId| -> Result<()> {
            if id < nodes.len() {
                Ok(())
            } else {
                Err(Error::InvalidNode(id))
            }
        };
        match edit {
            Edit::Grow { leaf, rule } => {
                check(*leaf)?;
                if !nodes[*leaf].is_leaf() {
                    return Err(Error::InvalidNode(*leaf));
                }
                rule.check_against(&self.schema)?;
                let (l, r) = rule.partition(data, &nodes[*leaf].stats.rows);
                if l.len() < min_leaf || r.len() < min_leaf {
                    return Err(Error::EditRejected(format!("split sizes {} / {}", l.len(), r.len())));
                }
                let depth = nodes[*leaf].depth + 1;
                let li = nodes.len();
                for rows in [l, r] {
                    nodes.push(Node {
                        parent: Some(*leaf),
                        depth,
                        stats: NodeSuffStats::from_rows(data, rows),
                        kind: NodeKind::Leaf(Leaf::default()),
                    });
                }
                nodes[*leaf].kind = NodeKind::Internal { rule: rule.clone(), left: li, right: li + 1 };
            }
            Edit::Prune { parent } => {
                check(*parent)?;
                let (l, r) = nodes[*parent].children().ok_or(Error::InvalidNode(*parent))?;
                if !(nodes[l].is_leaf() && nodes[r].is_leaf()) {
                    return Err(Error::InvalidNode(*parent));
                }
                nodes[*parent].kind = NodeKind::Leaf(Leaf::default());
            }
            Edit::ChangeRule { node, rule } => {
                check(*node)?;
                rule.check_against(&self.schema)?;
                match &mut nodes[*node].kind {
                    NodeKind::Internal { rule: old, .. } => *old = rule.clone(),
                    NodeKind::Leaf(_) => return Err(Error::InvalidNode(*node)),
                }
                reroute(&mut nodes, *node, data, min_leaf)?;
            }
            Edit::SwapRules { parent, child } => {
                check(*parent)?;
                check(*child)?;
                if nodes[*child].parent != Some(*parent) || nodes[*child].is_leaf() {
                    return Err(Error::InvalidNode(*child));
                }
                let pr = nodes[*parent].rule().unwrap().clone();
                let cr = nodes[*child].rule().unwrap().clone();
                if let NodeKind::Internal { rule, .. } = &mut nodes[*parent].kind {
                    *rule = cr;
                }
                if let NodeKind::Internal { rule, .. } = &mut nodes[*child].kind {
                    *rule = pr;
                }
                reroute(&mut nodes, *parent, data, min_leaf)?;
            }
        }
        Ok(Tree { schema: Arc::clone(&self.schema), nodes: canonicalize(&nodes) })
    }

    /// Topology, rules and row sets agree (leaf payloads are ignored).
    pub fn same_structure(&self, other: &Tree) -> bool {
        self.nodes.len() == other.nodes.len()
            && self.nodes.iter().zip(&other.nodes).all(|(a, b)| {
                a.parent == b.parent
                    && a.depth == b.depth
                    && a.stats == b.stats
                    && match (&a.kind, &b.kind) {
                        (NodeKind::Leaf(_), NodeKind::Leaf(_)) => true,
                        (
                            NodeKind::Internal { rule: ra, left: la, right: rb },
                            NodeKind::Internal { rule: rc, left: lc, right: rd },
                        ) => ra == rc && la == lc && rb == rd,
                        _ => false,
                    }
            })
    }

    /// Checks the arena invariants against `data`: pre-order layout, partition of
    /// the rows and aggregate consistency.
    pub fn validate(&self, data: &Dataset, min_leaf: usize) -> Result<()> {
        let mut seen = vec![false; data.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            let fresh = NodeSuffStats::from_rows(data, node.stats.rows.to_vec());
            if fresh != node.stats {
                return Err(Error::Data(format!("node {id} stats are stale")));
            }
            match &node.kind {
                NodeKind::Internal { rule, left, right } => {
                    let (l, r) = rule.partition(data, &node.stats.rows);
                    if *self.nodes[*left].stats.rows != l || *self.nodes[*right].stats.rows != r {
                        return Err(Error::Data(format!("node {id} children disagree with its rule")));
                    }
                    if self.nodes[*left].parent != Some(id) || self.nodes[*right].parent != Some(id) {
                        return Err(Error::Data(format!("node {id} child links broken")));
                    }
                }
                NodeKind::Leaf(_) => {
                    if node.stats.n < min_leaf {
                        return Err(Error::Data(format!("leaf {id} has {} rows", node.stats.n)));
                    }
                    for &r in node.stats.rows.iter() {
                        if std::mem::replace(&mut seen[r as usize], true) {
                            return Err(Error::Data(format!("row {r} in two leaves")));
                        }
                    }
                }
            }
        }
        if self.nodes[0].stats.n != data.len() || seen.iter().any(|s| !s) {
            return Err(Error::Data("leaves do not cover the data".into()));
        }
        Ok(())
    }

    pub fn to_record(&self) -> NodeRecord {
        self.record_of(0)
    }

    fn record_of(&self, id: NodeId) -> NodeRecord {
        let node = &self.nodes[id];
        match &node.kind {
            NodeKind::Internal { rule, left, right } => {
                let var = &self.schema.variables[rule.variable()];
                let (threshold, subset) = match rule {
                    DecisionRule::Numeric { threshold, .. } => (Some(*threshold), None),
                    DecisionRule::Categorical { levels, .. } => (
                        None,
                        Some(levels.iter().map(|&l| var.levels()[l as usize].clone()).collect()),
                    ),
                };
                NodeRecord::Internal {
                    variable: var.name.clone(),
                    threshold,
                    subset,
                    children: vec![self.record_of(*left), self.record_of(*right)],
                }
            }
            NodeKind::Leaf(leaf) => NodeRecord::Leaf {
                leaf_params: leaf.params,
                posterior: leaf.posterior,
                leaf_stats: LeafStats {
                    n: node.stats.n,
                    sum_claims: node.stats.sum_claims,
                    sum_exposure: node.stats.sum_exposure,
                },
            },
        }
    }

    /// Rebuilds a tree from its serialized form by routing `data`, which must
    /// use the schema the tree was fitted on. Leaf payloads are restored; leaf
    /// statistics are recomputed from `data`.
    pub fn from_record(record: &NodeRecord, data: &Dataset) -> Result<Tree> {
        let schema = data.schema();
        let mut nodes = Vec::new();
        let rows = (0..data.len() as u32).collect();
        build_from_record(record, schema, data, rows, None, 0, &mut nodes)?;
        Ok(Tree { schema: Arc::new(schema.clone()), nodes })
    }
}

fn build_from_record(
    record: &NodeRecord,
    schema: &CovariateSchema,
    data: &Dataset,
    rows: Vec<u32>,
    parent: Option<NodeId>,
    depth: u32,
    nodes: &mut Vec<Node>,
) -> Result<NodeId> {
    let id = nodes.len();
    let stats = NodeSuffStats::from_rows(data, rows);
    match record {
        NodeRecord::Leaf { leaf_params, posterior, .. } => {
            nodes.push(Node {
                parent,
                depth,
                stats,
                kind: NodeKind::Leaf(Leaf { params: *leaf_params, posterior: *posterior, ..Leaf::default() }),
            });
        }
        NodeRecord::Internal { variable, threshold, subset, children } => {
            let j = schema
                .index_of(variable)
                .ok_or_else(|| Error::Data(format!("tree uses unknown variable `{variable}`")))?;
            let rule = match (threshold, subset, &schema.variables[j].kind) {
                (Some(t), None, VariableKind::Numeric) => DecisionRule::Numeric { variable: j, threshold: *t },
                (None, Some(s), VariableKind::Categorical { levels }) => {
                    let lookup: HashMap<&str, u32> =
                        levels.iter().enumerate().map(|(k, l)| (l.as_str(), k as u32)).collect();
                    let codes = s
                        .iter()
                        .map(|l| {
                            lookup.get(l.as_str()).copied().ok_or_else(|| Error::UnknownLevel {
                                variable: variable.clone(),
                                level: l.clone(),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    DecisionRule::categorical(j, codes)
                }
                _ => return Err(Error::CovariateKind(variable.clone())),
            };
            if children.len() != 2 {
                return Err(Error::Data("internal node needs two children".into()));
            }
            let (l, r) = rule.partition(data, &stats.rows);
            nodes.push(Node { parent, depth, stats, kind: NodeKind::Leaf(Leaf::default()) });
            let left = build_from_record(&children[0], schema, data, l, Some(id), depth + 1, nodes)?;
            let right = build_from_record(&children[1], schema, data, r, Some(id), depth + 1, nodes)?;
            nodes[id].kind = NodeKind::Internal { rule, left, right };
        }
    }
    Ok(id)
}

/// Re-splits the rows of `id` down its subtree using the (possibly new) rules.
fn reroute(nodes: &mut [Node], id: NodeId, data: &Dataset, min_leaf: usize) -> Result<()> {
    let (rule, l, r) = match &nodes[id].kind {
        NodeKind::Internal { rule, left, right } => (rule.clone(), *left, *right),
        NodeKind::Leaf(_) => {
            if nodes[id].stats.n < min_leaf {
                return Err(Error::EditRejected(format!("leaf with {} rows", nodes[id].stats.n)));
            }
            return Ok(());
        }
    };
    let (lr, rr) = rule.partition(data, &nodes[id].stats.rows);
    for (child, rows) in [(l, lr), (r, rr)] {
        if rows.len() < min_leaf {
            return Err(Error::EditRejected(format!("child with {} rows", rows.len())));
        }
        if *nodes[child].stats.rows != rows {
            nodes[child].stats = NodeSuffStats::from_rows(data, rows);
            if let NodeKind::Leaf(leaf) = &mut nodes[child].kind {
                *leaf = Leaf::default();
            }
        }
        reroute(nodes, child, data, min_leaf)?;
    }
    Ok(())
}

/// Renumbers the nodes reachable from 0 in pre-order.
fn canonicalize(nodes: &[Node]) -> Vec<Node> {
    let mut out: Vec<Node> = Vec::with_capacity(nodes.len());
    fn visit(nodes: &[Node], id: NodeId, parent: Option<NodeId>, depth: u32, out: &mut Vec<Node>) -> NodeId {
        let new_id = out.len();
        let mut node = nodes[id].clone();
        node.parent = parent;
        node.depth = depth;
        out.push(node);
        if let Some((l, r)) = nodes[id].children() {
            let nl = visit(nodes, l, Some(new_id), depth + 1, out);
            let nr = visit(nodes, r, Some(new_id), depth + 1, out);
            if let NodeKind::Internal { left, right, .. } = &mut out[new_id].kind {
                *left = nl;
                *right = nr;
            }
        }
        new_id
    }
    visit(nodes, 0, None, 0, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafStats {
    pub n: usize,
    pub sum_claims: u64,
    pub sum_exposure: f64,
}

/// Serialized node: one JSON object per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeRecord {
    Internal {
        variable: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subset: Option<Vec<String>>,
        children: Vec<NodeRecord>,
    },
    Leaf {
        #[serde(default)]
        leaf_params: Option<NodeParams>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        posterior: Option<Posterior>,
        leaf_stats: LeafStats,
    },
}
