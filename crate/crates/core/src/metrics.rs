//! Hold-out evaluation: individual and portfolio residuals, negative
//! log-likelihood, a variance-weighted discrepancy, lift, and the
//! refit-stability harness.
//!
//! Every metric is computed from [`LeafGroup`]s, the test rows grouped by the
//! leaf they land in together with that leaf's unit-exposure prediction.

use std::cmp::Ordering;
use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_split, Dataset};
use crate::error::{Error, Result};
use crate::family::{expected_count, log_pmf, node_frequency, node_variance, Family, NodeParams};
use crate::tree::{NodeId, NodeKind, Tree};

/// Test rows falling in one leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafGroup {
    pub leaf: NodeId,
    /// Predicted frequency at unit exposure.
    pub yhat: f64,
    /// Predicted frequency variance at unit exposure.
    pub sigma2: f64,
    pub claims: Vec<u64>,
    pub exposure: Vec<f64>,
}

impl LeafGroup {
    pub fn new(leaf: NodeId, yhat: f64, sigma2: f64, rows: &[(u64, f64)]) -> Self {
        LeafGroup {
            leaf,
            yhat,
            sigma2,
            claims: rows.iter().map(|r| r.0).collect(),
            exposure: rows.iter().map(|r| r.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn total_claims(&self) -> f64 {
        self.claims.iter().map(|&c| c as f64).sum()
    }

    pub fn total_exposure(&self) -> f64 {
        self.exposure.iter().sum()
    }

    /// ΣN / Σv, `None` for a leaf without test rows.
    pub fn empirical_frequency(&self) -> Option<f64> {
        if self.is_empty() {
            None
        } else {
            Some(self.total_claims() / self.total_exposure())
        }
    }
}

fn leaf_params(tree: &Tree, id: NodeId) -> Result<NodeParams> {
    match &tree.node(id).kind {
        NodeKind::Leaf(l) => l.params.ok_or_else(|| Error::Data(format!("leaf {id} has no parameters"))),
        NodeKind::Internal { .. } => Err(Error::InvalidNode(id)),
    }
}

/// Routes `test` through `tree` and groups the rows by leaf, in leaf order.
/// Leaves without test rows are kept with empty groups.
pub fn leaf_groups(tree: &Tree, family: Family, test: &Dataset) -> Result<Vec<LeafGroup>> {
    let leaves = tree.leaves();
    let mut slot = vec![usize::MAX; tree.len()];
    let mut groups = Vec::with_capacity(leaves.len());
    for (k, &id) in leaves.iter().enumerate() {
        let p = leaf_params(tree, id)?;
        slot[id] = k;
        groups.push(LeafGroup::new(id, node_frequency(family, &p), node_variance(family, &p), &[]));
    }
    for i in 0..test.len() {
        let g = &mut groups[slot[tree.route_row(test, i)]];
        g.claims.push(test.claims()[i]);
        g.exposure.push(test.exposure()[i]);
    }
    Ok(groups)
}

/// Σ (N_i − N̂_i)².
pub fn rss_individual_from(claims: &[u64], predicted: &[f64]) -> f64 {
    claims.iter().zip(predicted).map(|(&n, &p)| (n as f64 - p).powi(2)).sum()
}

pub fn rss_individual(tree: &Tree, family: Family, test: &Dataset) -> Result<f64> {
    let mut pred = Vec::with_capacity(test.len());
    for i in 0..test.len() {
        let p = leaf_params(tree, tree.route_row(test, i))?;
        pred.push(expected_count(family, &p, test.exposure()[i]));
    }
    Ok(rss_individual_from(test.claims(), &pred))
}

/// Σ_t (empirical frequency − ŷ_t)² over leaves with test rows.
pub fn rss_portfolio_from(groups: &[LeafGroup]) -> f64 {
    groups
        .iter()
        .filter_map(|g| g.empirical_frequency().map(|f| (f - g.yhat).powi(2)))
        .sum()
}

pub fn rss_portfolio(tree: &Tree, family: Family, test: &Dataset) -> Result<f64> {
    Ok(rss_portfolio_from(&leaf_groups(tree, family, test)?))
}

/// −Σ ln P(N_i) at the leaf parameters.
pub fn nll(tree: &Tree, family: Family, test: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..test.len() {
        let p = leaf_params(tree, tree.route_row(test, i))?;
        total -= log_pmf(family, &p, test.claims()[i], test.exposure()[i]);
    }
    Ok(total)
}

/// Σ_t (empirical frequency − ŷ_t)² / σ̂²_t over leaves with test rows.
pub fn discrepancy_from(groups: &[LeafGroup]) -> Result<f64> {
    let mut total = 0.0;
    for g in groups {
        let Some(f) = g.empirical_frequency() else { continue };
        let r = f - g.yhat;
        if r == 0.0 {
            continue;
        }
        if g.sigma2 <= 0.0 {
            return Err(Error::ZeroVariance { leaf: g.leaf, residual: r });
        }
        total += r * r / g.sigma2;
    }
    Ok(total)
}

pub fn discrepancy(tree: &Tree, family: Family, test: &Dataset) -> Result<f64> {
    discrepancy_from(&leaf_groups(tree, family, test)?)
}

/// Least and most risky leaves (first on ties), or `None` when all predictions agree.
fn extremes(groups: &[LeafGroup]) -> Option<(&LeafGroup, &LeafGroup)> {
    let mut lo = groups.first()?;
    let mut hi = lo;
    for g in &groups[1..] {
        if g.yhat < lo.yhat {
            lo = g;
        }
        if g.yhat > hi.yhat {
            hi = g;
        }
    }
    (lo.yhat < hi.yhat).then_some((lo, hi))
}

/// Empirical frequency of the shortest prefix of `g`'s rows, sorted by
/// exposure (descending if `descending`), whose exposure reaches `basis`.
/// Exposure ties are broken by claim count so the result ignores row order.
fn prefix_frequency(g: &LeafGroup, basis: f64, descending: bool) -> Option<f64> {
    let mut rows: Vec<(f64, u64)> = g.exposure.iter().copied().zip(g.claims.iter().copied()).collect();
    rows.sort_by(|a, b| {
        let o = a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal);
        let o = if descending { o.reverse() } else { o };
        o.then(a.1.cmp(&b.1))
    });
    let (mut v, mut n) = (0.0, 0.0);
    for (e, c) in rows {
        v += e;
        n += c as f64;
        if v >= basis {
            break;
        }
    }
    (v > 0.0).then(|| n / v)
}

fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    match (num, den) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    }
}

/// Exposure-matched lift of the most over the least risky leaf. The larger
/// of the two groups is truncated to the other's total exposure: the most
/// risky group keeping its largest exposures first, the least risky group its
/// smallest. `None` when the ratio is undefined.
pub fn lift_from(groups: &[LeafGroup]) -> Option<f64> {
    let (lo, hi) = extremes(groups)?;
    if lo.is_empty() || hi.is_empty() {
        return None;
    }
    let (v_min, v_max) = (lo.total_exposure(), hi.total_exposure());
    if v_min <= v_max {
        ratio(prefix_frequency(hi, v_min, true), lo.empirical_frequency())
    } else {
        ratio(hi.empirical_frequency(), prefix_frequency(lo, v_max, false))
    }
}

pub fn lift(tree: &Tree, family: Family, test: &Dataset) -> Result<Option<f64>> {
    Ok(lift_from(&leaf_groups(tree, family, test)?))
}

/// Lift of several models on one exposure basis: the smallest extreme-group
/// exposure over all of them. Each model's two extreme groups are truncated
/// to that basis as in [`lift_from`].
pub fn lift_common_basis_from(models: &[Vec<LeafGroup>]) -> Vec<Option<f64>> {
    let ext: Vec<_> = models.iter().map(|g| extremes(g)).collect();
    let basis = ext
        .iter()
        .flatten()
        .map(|(lo, hi)| lo.total_exposure().min(hi.total_exposure()))
        .fold(f64::INFINITY, f64::min);
    ext.into_iter()
        .map(|e| {
            let (lo, hi) = e?;
            if lo.is_empty() || hi.is_empty() {
                return None;
            }
            ratio(prefix_frequency(hi, basis, true), prefix_frequency(lo, basis, false))
        })
        .collect()
}

pub fn lift_common_basis(models: &[(&Tree, Family)], test: &Dataset) -> Result<Vec<Option<f64>>> {
    let groups = models
        .iter()
        .map(|(t, f)| leaf_groups(t, *f, test))
        .collect::<Result<Vec<_>>>()?;
    Ok(lift_common_basis_from(&groups))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafReport {
    pub leaf: NodeId,
    pub m: usize,
    pub empirical_frequency: Option<f64>,
    pub yhat: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub rss_individual: f64,
    pub rss_portfolio: f64,
    pub nll: f64,
    pub discrepancy: f64,
    pub lift: Option<f64>,
    pub leaves: Vec<LeafReport>,
}

/// All five metrics of a finalized tree on `test`.
pub fn evaluate(model: &str, tree: &Tree, family: Family, test: &Dataset) -> Result<EvalReport> {
    let groups = leaf_groups(tree, family, test)?;
    Ok(EvalReport {
        model: model.to_string(),
        rss_individual: rss_individual(tree, family, test)?,
        rss_portfolio: rss_portfolio_from(&groups),
        nll: nll(tree, family, test)?,
        discrepancy: discrepancy_from(&groups)?,
        lift: lift_from(&groups),
        leaves: groups
            .iter()
            .map(|g| LeafReport {
                leaf: g.leaf,
                m: g.len(),
                empirical_frequency: g.empirical_frequency(),
                yhat: g.yhat,
                sigma2: g.sigma2,
            })
            .collect(),
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// One row per model: model, rss_N, rss_Nv, nll, ds_Nv, lift. Undefined lift is `NA`.
pub fn write_eval_table<W: Write>(reports: &[EvalReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["model", "rss_N", "rss_Nv", "nll", "ds_Nv", "lift"]).map_err(err)?;
    for r in reports {
        w.write_record([
            r.model.clone(),
            r.rss_individual.to_string(),
            r.rss_portfolio.to_string(),
            r.nll.to_string(),
            r.discrepancy.to_string(),
            opt(r.lift),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-leaf table: model, leaf, m_t, empirical frequency, ŷ_t, σ̂²_t.
pub fn write_leaf_table<W: Write>(reports: &[EvalReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["model", "leaf", "m", "empirical_frequency", "yhat", "sigma2"]).map_err(err)?;
    for r in reports {
        for l in &r.leaves {
            w.write_record([
                r.model.clone(),
                l.leaf.to_string(),
                l.m.to_string(),
                opt(l.empirical_frequency),
                l.yhat.to_string(),
                l.sigma2.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub repeats: usize,
    pub subsample: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig { repeats: 20, subsample: 0.9, train_fraction: 0.8, seed: 0 }
    }
}

/// Mean over test rows of the sample variance of the predictions made by
/// `repeats` refits on random subsamples of the training part.
///
/// `fit(subsample, test, k, seed)` fits on `subsample` and returns one
/// prediction per test row; `k` runs from 1 to `repeats`.
pub fn stability_assess<F>(data: &Dataset, config: &StabilityConfig, mut fit: F) -> Result<f64>
where
    F: FnMut(&Dataset, &Dataset, usize, u64) -> Result<Vec<f64>>,
{
    if config.repeats < 2 {
        return Err(Error::Config("stability needs at least two refits".into()));
    }
    if !(config.subsample > 0.0 && config.subsample <= 1.0) {
        return Err(Error::Config(format!("subsample fraction {} outside (0, 1]", config.subsample)));
    }
    let (train, test) = stratified_split(data, config.train_fraction, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let take = ((config.subsample * train.len() as f64).round() as usize).clamp(1, train.len());
    let mut preds = Vec::with_capacity(config.repeats);
    for k in 1..=config.repeats {
        let mut idx = sample(&mut rng, train.len(), take).into_vec();
        idx.sort_unstable();
        let p = fit(&train.subset(&idx), &test, k, config.seed.wrapping_add(k as u64))?;
        if p.len() != test.len() {
            return Err(Error::Data(format!("refit {k} returned {} predictions for {} rows", p.len(), test.len())));
        }
        preds.push(p);
    }
    Ok(mean_sample_variance(&preds))
}

/// Mean over columns of the per-column sample variance of `preds[k][i]`.
pub fn mean_sample_variance(preds: &[Vec<f64>]) -> f64 {
    let r = preds.len();
    let m = preds.first().map_or(0, Vec::len);
    if r < 2 || m == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..m {
        // shifted by the first refit so constant columns give exactly zero
        let base = preds[0][i];
        let mean = preds.iter().map(|p| p[i] - base).sum::<f64>() / r as f64;
        total += preds.iter().map(|p| (p[i] - base - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
    }
    total / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, CovariateSchema, Variable};
    use crate::family::Posterior;
    use crate::selection::finalize;
    use crate::tree::{DecisionRule, Edit};
    use approx::assert_relative_eq;

    fn group(leaf: NodeId, yhat: f64, rows: &[(u64, f64)]) -> LeafGroup {
        LeafGroup::new(leaf, yhat, yhat, rows)
    }

    #[test]
    fn rss_individual_examples() {
        assert_eq!(rss_individual_from(&[1, 2], &[1.0, 2.0]), 0.0);
        assert_eq!(rss_individual_from(&[2], &[1.0]), 1.0);
        assert_eq!(rss_individual_from(&[1, 1], &[0.5, 1.5]), 0.5);
    }

    #[test]
    fn rss_portfolio_examples() {
        let one = [group(0, 0.8, &[(1, 0.5), (0, 0.5)])];
        assert_relative_eq!(rss_portfolio_from(&one), 0.04, epsilon = 1e-15);
        let exact = [group(0, 2.0, &[(1, 0.5)]), group(1, 1.0, &[(1, 1.0)])];
        assert_eq!(rss_portfolio_from(&exact), 0.0);
        let two = [group(0, 1.1, &[(1, 1.0)]), group(1, 1.0 - 0.03f64.sqrt(), &[(1, 1.0)])];
        assert_relative_eq!(rss_portfolio_from(&two), 0.04, epsilon = 1e-12);
    }

    #[test]
    fn empty_leaves_contribute_nothing() {
        let g = [group(0, 0.8, &[(1, 1.0)]), group(1, 5.0, &[])];
        assert_relative_eq!(rss_portfolio_from(&g), 0.04, epsilon = 1e-15);
        assert_relative_eq!(discrepancy_from(&g).unwrap(), 0.05, epsilon = 1e-12);
    }

    #[test]
    fn discrepancy_examples() {
        let g = [group(0, 1.2, &[(1, 1.0)])];
        assert_relative_eq!(discrepancy_from(&g).unwrap(), 0.04 / 1.2, epsilon = 1e-12);
        let zero = [group(0, 1.0, &[(1, 1.0)])];
        assert_eq!(discrepancy_from(&zero).unwrap(), 0.0);
        let mut doubled = g.clone();
        doubled[0].sigma2 *= 2.0;
        assert_relative_eq!(discrepancy_from(&doubled).unwrap(), 0.5 * discrepancy_from(&g).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn discrepancy_zero_variance() {
        let g = [LeafGroup::new(3, 0.0, 0.0, &[(1, 1.0)])];
        assert!(matches!(discrepancy_from(&g), Err(Error::ZeroVariance { leaf: 3, .. })));
        let ok = [LeafGroup::new(3, 0.0, 0.0, &[(0, 1.0)])];
        assert_eq!(discrepancy_from(&ok).unwrap(), 0.0);
    }

    #[test]
    fn portfolio_and_discrepancy_agree_at_unit_variance() {
        let g = [
            LeafGroup::new(0, 0.3, 1.0, &[(1, 0.4), (0, 0.2)]),
            LeafGroup::new(1, 2.0, 1.0, &[(3, 0.9)]),
        ];
        assert_relative_eq!(rss_portfolio_from(&g), discrepancy_from(&g).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn lift_first_branch() {
        let lo = group(0, 0.5, &[(0, 0.5), (1, 0.5)]);
        let hi = group(1, 3.0, &[(2, 0.9), (1, 0.6), (1, 0.3)]);
        assert_relative_eq!(lift_from(&[lo, hi]).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn lift_second_branch() {
        // least risky: v_min = 1.5 > v_max = 0.7, so its rows are taken in
        // ascending exposure order (0.2, 0.3, 0.4 → 0.9 ≥ 0.7) with 1 claim.
        let lo = group(0, 0.5, &[(0, 0.6), (1, 0.4), (0, 0.2), (0, 0.3)]);
        let hi = group(1, 3.0, &[(1, 0.5), (1, 0.2)]);
        let lambda_max = 2.0 / 0.7;
        let lambda_min = 1.0 / 0.9;
        assert_relative_eq!(lift_from(&[lo, hi]).unwrap(), lambda_max / lambda_min, epsilon = 1e-12);
    }

    #[test]
    fn lift_identical_groups() {
        let rows = [(1, 0.5), (0, 0.5)];
        assert_relative_eq!(lift_from(&[group(0, 0.5, &rows), group(1, 0.7, &rows)]).unwrap(), 1.0);
    }

    #[test]
    fn lift_undefined_cases() {
        let lo = group(0, 0.5, &[(0, 0.5)]);
        let hi = group(1, 3.0, &[(2, 0.9)]);
        assert_eq!(lift_from(&[lo.clone(), hi.clone()]), None);
        let flat = group(1, 0.5, &[(2, 0.9)]);
        assert_eq!(lift_from(&[group(0, 0.5, &[(1, 0.5)]), flat]), None);
        assert_eq!(lift_from(&[group(0, 0.5, &[]), hi]), None);
    }

    #[test]
    fn common_basis_matches_standalone_for_one_model() {
        let lo = group(0, 0.5, &[(0, 0.5), (1, 0.5)]);
        let hi = group(1, 3.0, &[(2, 0.9), (1, 0.6), (1, 0.3)]);
        let m = vec![lo, hi];
        let alone = lift_from(&m);
        assert_eq!(lift_common_basis_from(&[m.clone(), m.clone()]), vec![alone, alone]);
    }

    #[test]
    fn common_basis_uses_smallest_exposure() {
        let a = vec![group(0, 0.5, &[(0, 0.5), (1, 0.5)]), group(1, 3.0, &[(2, 0.9), (1, 0.6), (1, 0.3)])];
        let b = vec![group(0, 0.5, &[(1, 0.4)]), group(1, 3.0, &[(1, 0.8), (3, 0.5)])];
        let out = lift_common_basis_from(&[a, b]);
        // basis 0.4: a takes (2, 0.9) over (0, 0.5); b takes (1, 0.8) over (1, 0.4).
        assert_eq!(out[0], None);
        assert_relative_eq!(out[1].unwrap(), (1.0 / 0.8) / (1.0 / 0.4), epsilon = 1e-12);
    }

    #[test]
    fn mean_sample_variance_of_indices() {
        let preds: Vec<Vec<f64>> = (1..=20).map(|k| vec![k as f64; 3]).collect();
        assert_relative_eq!(mean_sample_variance(&preds), 35.0, epsilon = 1e-12);
        let flat = vec![vec![0.3, 0.1]; 20];
        assert_eq!(mean_sample_variance(&flat), 0.0);
    }

    fn small_data() -> Dataset {
        let schema = CovariateSchema::new("claims", "exposure", vec![Variable::numeric("x")]).unwrap();
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let claims: Vec<u64> = (0..40).map(|i| if i < 20 { (i % 2) as u64 } else { 2 + (i % 3) as u64 }).collect();
        let exposure: Vec<f64> = (0..40).map(|i| 0.25 + 0.75 * ((i * 7 % 11) as f64 / 10.0)).collect();
        Dataset::new(schema, vec![Column::Numeric(x)], claims, exposure).unwrap()
    }

    #[test]
    fn stability_examples() {
        let data = small_data();
        let cfg = StabilityConfig::default();
        let constant = stability_assess(&data, &cfg, |_, test, _, _| Ok(vec![0.7; test.len()])).unwrap();
        assert_eq!(constant, 0.0);
        let index = stability_assess(&data, &cfg, |_, test, k, _| Ok(vec![k as f64; test.len()])).unwrap();
        assert_relative_eq!(index, 35.0, epsilon = 1e-12);
    }

    #[test]
    fn stability_subsamples_are_ninety_percent() {
        let data = small_data();
        let cfg = StabilityConfig::default();
        let mut sizes = Vec::new();
        stability_assess(&data, &cfg, |sub, test, _, _| {
            sizes.push(sub.len());
            Ok(vec![0.0; test.len()])
        })
        .unwrap();
        assert_eq!(sizes.len(), 20);
        assert!(sizes.iter().all(|&s| s == 29), "{sizes:?}");
    }

    fn split_tree(data: &Dataset) -> Tree {
        let t = Tree::root(data);
        let mut t = t.apply(&Edit::Grow { leaf: 0, rule: DecisionRule::Numeric { variable: 0, threshold: 19.5 } }, data, 1).unwrap();
        for (id, lambda) in [(1, 0.5), (2, 3.0)] {
            let post = Posterior { lambda: crate::family::GammaParams::new(lambda * 10.0, 10.0).unwrap(), mu: None, kappa: None };
            t.leaf_mut(id).posterior = Some(post);
        }
        finalize(&t)
    }

    #[test]
    fn tree_metrics_match_group_metrics() {
        let data = small_data();
        let t = split_tree(&data);
        let r = evaluate("p", &t, Family::Poisson, &data).unwrap();
        assert_eq!(r.leaves.iter().map(|l| l.m).sum::<usize>(), data.len());
        let mut expect_nll = 0.0;
        let mut expect_rss = 0.0;
        for i in 0..data.len() {
            let lambda = if i < 20 { 0.5 } else { 3.0 };
            let mean = lambda * data.exposure()[i];
            let n = data.claims()[i];
            expect_nll += mean - n as f64 * mean.ln() + statrs::function::gamma::ln_gamma(n as f64 + 1.0);
            expect_rss += (n as f64 - mean).powi(2);
        }
        assert_relative_eq!(r.nll, expect_nll, epsilon = 1e-9);
        assert_relative_eq!(r.rss_individual, expect_rss, epsilon = 1e-9);
        assert!(r.lift.unwrap() > 1.0);
    }

    #[test]
    fn poisson_nll_examples() {
        let p = NodeParams::poisson(1.0);
        assert_relative_eq!(-log_pmf(Family::Poisson, &p, 0, 1.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(-log_pmf(Family::Poisson, &p, 1, 1.0), 1.0, epsilon = 1e-15);
        let data = small_data();
        let t = split_tree(&data);
        assert_eq!(nll(&t, Family::Poisson, &data.subset(&[])).unwrap(), 0.0);
    }

    #[test]
    fn eval_table_layout() {
        let data = small_data();
        let t = split_tree(&data);
        let r = evaluate("P-BCART", &t, Family::Poisson, &data).unwrap();
        let mut buf = Vec::new();
        write_eval_table(&[r.clone()], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("model,rss_N,rss_Nv,nll,ds_Nv,lift\nP-BCART,"));
        let mut buf = Vec::new();
        write_leaf_table(&[r], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
