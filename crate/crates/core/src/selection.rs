//! Tree-level DIC and the three-step choice of an optimal tree.
//!
//! Step 1 fixes a ladder of target leaf counts j with hyper-parameters
//! (γ_j, ρ_j) that make the chain concentrate near j leaves. Step 2 keeps, for
//! each j, the archived tree with the highest data likelihood at θ̄. Step 3
//! picks the DIC-minimal tree among those winners.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Covariate, Dataset};
use crate::error::{Error, Result};
use crate::family::{expected_count, node_dic, node_frequency, Family, Priors};
use crate::mcmc::{run, ArchiveEntry, ChainConfig};
use crate::prior::{SplitCandidates, TreePriorConfig};
use crate::tree::{NodeId, NodeKind, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafDic {
    pub leaf: NodeId,
    pub deviance: f64,
    pub effective_params: f64,
    pub dic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DicReport {
    pub leaves: Vec<LeafDic>,
    pub deviance: f64,
    pub effective_params: f64,
    pub dic: f64,
}

/// Sums the leaf DICs of `tree`. Each leaf must carry the full conditional
/// its parameters were drawn from; the deviance is taken at its mean.
pub fn tree_dic(tree: &Tree, family: Family, data: &Dataset, priors: &Priors) -> Result<DicReport> {
    let mut leaves = Vec::new();
    for id in tree.leaves() {
        let node = tree.node(id);
        let post = node
            .leaf()
            .and_then(|l| l.posterior)
            .ok_or_else(|| Error::Data(format!("leaf {id} has no posterior")))?;
        let d = node_dic(family, data, &node.stats.rows, &post, priors);
        leaves.push(LeafDic { leaf: id, deviance: d.deviance, effective_params: d.effective_params, dic: d.dic });
    }
    Ok(DicReport {
        deviance: leaves.iter().map(|l| l.deviance).sum(),
        effective_params: leaves.iter().map(|l| l.effective_params).sum(),
        dic: leaves.iter().map(|l| l.dic).sum(),
        leaves,
    })
}

/// Copy of `tree` whose leaf parameters are the posterior means.
pub fn finalize(tree: &Tree) -> Tree {
    let mut out = tree.clone();
    for id in out.leaves() {
        let leaf = out.leaf_mut(id);
        if let Some(post) = leaf.posterior {
            leaf.params = Some(post.mean());
        }
    }
    out
}

/// Higher data likelihood first, then fewer leaves, then earlier (restart, iteration).
fn archive_order(a: &ArchiveEntry, b: &ArchiveEntry) -> Ordering {
    b.log_data_lik
        .total_cmp(&a.log_data_lik)
        .then(a.n_leaves.cmp(&b.n_leaves))
        .then(a.restart.cmp(&b.restart))
        .then(a.iteration.cmp(&b.iteration))
}

/// The archived tree with the largest log data likelihood at θ̄.
pub fn best_in_region(archive: &[ArchiveEntry]) -> Result<&ArchiveEntry> {
    archive.iter().min_by(|a, b| archive_order(a, b)).ok_or_else(|| Error::Data("empty archive".into()))
}

/// [`best_in_region`] restricted to trees with exactly `leaves` leaves. When
/// the chain never accepted such a tree, the nearest leaf count is used
/// instead (the smaller one on ties).
pub fn best_with_leaves(archive: &[ArchiveEntry], leaves: usize) -> Result<&ArchiveEntry> {
    let nearest = archive
        .iter()
        .map(|e| e.n_leaves)
        .min_by_key(|&b| (b.abs_diff(leaves), b))
        .ok_or_else(|| Error::Data("empty archive".into()))?;
    archive
        .iter()
        .filter(|e| e.n_leaves == nearest)
        .min_by(|a, b| archive_order(a, b))
        .ok_or_else(|| Error::Data("empty archive".into()))
}

/// One step-1 grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub j: usize,
    pub gamma: f64,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct GridRun {
    pub point: GridPoint,
    pub archive: Vec<ArchiveEntry>,
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub j: usize,
    pub gamma: f64,
    pub rho: f64,
    pub effective_params: f64,
    pub dic: f64,
    pub log_data_lik: f64,
    pub n_leaves: usize,
    pub restart: usize,
    pub iteration: usize,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub rows: Vec<SelectionRow>,
    /// Index of the winning row.
    pub best: usize,
    /// The winning tree with posterior-mean leaf parameters.
    pub tree: Tree,
    pub report: DicReport,
}

/// Steps 2 and 3: per grid point the best tree with j leaves, then the
/// minimum DIC (smallest j on ties). Grid points with an empty archive are
/// left out of the table.
pub fn three_step_select(runs: &[GridRun], data: &Dataset, family: Family, priors: &Priors) -> Result<Selection> {
    let mut order: Vec<&GridRun> = runs.iter().collect();
    order.sort_by_key(|r| r.point.j);
    let mut rows = Vec::new();
    let mut winners = Vec::new();
    for r in order {
        let Ok(entry) = best_with_leaves(&r.archive, r.point.j) else { continue };
        let report = tree_dic(&entry.tree, family, data, priors)?;
        rows.push(SelectionRow {
            j: r.point.j,
            gamma: r.point.gamma,
            rho: r.point.rho,
            effective_params: report.effective_params,
            dic: report.dic,
            log_data_lik: entry.log_data_lik,
            n_leaves: entry.n_leaves,
            restart: entry.restart,
            iteration: entry.iteration,
        });
        winners.push((entry, report));
    }
    let dics: Vec<f64> = rows.iter().map(|r| r.dic).collect();
    let best = argmin_dic(&dics).ok_or_else(|| Error::Data("no grid point produced an archived tree".into()))?;
    let (entry, report) = winners.swap_remove(best);
    Ok(Selection { rows, best, tree: finalize(&entry.tree), report })
}

/// Index of the smallest DIC, the first one on ties.
pub fn argmin_dic(dics: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, d) in dics.iter().enumerate() {
        if best.is_none_or(|b| *d < dics[b]) {
            best = Some(i);
        }
    }
    best
}

/// Writes the comparison table as CSV.
pub fn write_dic_table<W: Write>(rows: &[SelectionRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["j", "gamma", "rho", "effective_params", "dic", "log_data_lik", "n_leaves"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.j.to_string(),
            r.gamma.to_string(),
            r.rho.to_string(),
            r.effective_params.to_string(),
            r.dic.to_string(),
            r.log_data_lik.to_string(),
            r.n_leaves.to_string(),
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Expected claim count for covariates `x` and exposure `exposure`, using the
/// parameters stored on the landing leaf.
pub fn predict(tree: &Tree, family: Family, x: &[Covariate], exposure: f64) -> Result<f64> {
    let leaf = tree.route(x)?;
    Ok(expected_count(family, &leaf_params(tree, leaf)?, exposure))
}

/// Prediction for row `row` of a dataset laid out with the tree's schema:
/// (leaf, expected count, unit-exposure frequency).
pub fn predict_row(tree: &Tree, family: Family, data: &Dataset, row: usize) -> Result<(NodeId, f64, f64)> {
    let leaf = tree.route_row(data, row);
    let p = leaf_params(tree, leaf)?;
    Ok((leaf, expected_count(family, &p, data.exposure()[row]), node_frequency(family, &p)))
}

fn leaf_params(tree: &Tree, leaf: NodeId) -> Result<crate::family::NodeParams> {
    match &tree.node(leaf).kind {
        NodeKind::Leaf(l) => l.params.ok_or_else(|| Error::Data(format!("leaf {leaf} has no parameters"))),
        NodeKind::Internal { .. } => Err(Error::InvalidNode(leaf)),
    }
}

/// Seed of the chain fitted at grid point `j`.
pub fn grid_seed(seed: u64, j: usize) -> u64 {
    // splitmix64 step
    let mut z = seed.wrapping_add((j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs one chain per grid point, with `base` supplying everything but (γ, ρ) and the seed.
pub fn fit_grid(
    points: &[GridPoint],
    base: &ChainConfig,
    data: &Dataset,
    candidates: &SplitCandidates,
    priors: &Priors,
) -> Result<Vec<GridRun>> {
    points
        .iter()
        .map(|&point| {
            let config = grid_config(base, point);
            Ok(GridRun { point, archive: run(&config, data, candidates, priors)?.archive })
        })
        .collect()
}

pub fn grid_config(base: &ChainConfig, point: GridPoint) -> ChainConfig {
    ChainConfig {
        prior: TreePriorConfig { gamma: point.gamma, rho: point.rho, ..base.prior },
        seed: grid_seed(base.seed, point.j),
        ..*base
    }
}

/// Pilot-chain settings for [`calibrate_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub gamma: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub steps: usize,
    pub pilot_iterations: usize,
    pub pilot_burn_in: usize,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration { gamma: 0.99, rho_min: 0.25, rho_max: 4096.0, steps: 10, pilot_iterations: 1500, pilot_burn_in: 500 }
    }
}

/// Median post-burn-in leaf count of one pilot chain at `rho`.
fn pilot_leaves(
    rho: f64,
    cal: &Calibration,
    base: &ChainConfig,
    data: &Dataset,
    candidates: &SplitCandidates,
    priors: &Priors,
) -> Result<f64> {
    let config = ChainConfig {
        iterations: cal.pilot_iterations,
        burn_in: cal.pilot_burn_in,
        restarts: 1,
        prior: TreePriorConfig { gamma: cal.gamma, rho, ..base.prior },
        seed: grid_seed(base.seed, rho.to_bits() as usize),
        ..*base
    };
    let out = run(&config, data, candidates, priors)?;
    let mut leaves: Vec<usize> = out.trace.iter().filter(|r| r.iteration > cal.pilot_burn_in).map(|r| r.n_leaves).collect();
    leaves.sort_unstable();
    Ok(leaves[leaves.len() / 2] as f64)
}

/// For each target j, bisects log ρ at fixed γ until a pilot chain's median
/// leaf count equals j (or the step budget runs out, keeping the closest ρ).
/// Pilot results are shared between targets.
pub fn calibrate_grid(
    targets: std::ops::RangeInclusive<usize>,
    cal: &Calibration,
    base: &ChainConfig,
    data: &Dataset,
    candidates: &SplitCandidates,
    priors: &Priors,
) -> Result<Vec<GridPoint>> {
    if !(cal.rho_min > 0.0 && cal.rho_max > cal.rho_min) {
        return Err(Error::Config("calibration needs 0 < rho_min < rho_max".into()));
    }
    let mut seen: Vec<(f64, f64)> = Vec::new();
    let mut eval = |rho: f64| -> Result<f64> {
        if let Some(&(_, b)) = seen.iter().find(|(r, _)| *r == rho) {
            return Ok(b);
        }
        let b = pilot_leaves(rho, cal, base, data, candidates, priors)?;
        seen.push((rho, b));
        Ok(b)
    };
    let mut points = Vec::new();
    for j in targets {
        let target = j as f64;
        let (mut lo, mut hi) = (cal.rho_min.ln(), cal.rho_max.ln());
        let mut best = (f64::INFINITY, cal.rho_max);
        for _ in 0..cal.steps {
            let rho = ((lo + hi) / 2.0).exp();
            let b = eval(rho)?;
            let err = (b - target).abs();
            if err < best.0 || (err == best.0 && rho < best.1) {
                best = (err, rho);
            }
            match b.partial_cmp(&target) {
                Some(Ordering::Greater) => lo = rho.ln(),
                Some(Ordering::Less) => hi = rho.ln(),
                _ => break,
            }
        }
        points.push(GridPoint { j, gamma: cal.gamma, rho: best.1 });
    }
    Ok(points)
}
