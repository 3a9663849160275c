//! Independent numerical oracles shared by the integration and acceptance
//! suites. Each returns the worst discrepancy it observed.

use bcart::data::Column;
use bcart::family::{augmented_log_marginal, log_pmf, poisson_log_marginal};
use bcart::mcmc::Sampler;
use bcart::prior::split_probability;
use bcart::{
    CovariateSchema, Dataset, Family, GammaParams, Latents, NodeParams, Priors, ProposalMix, SplitCandidates,
    TreePriorConfig, Variable,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn gp(shape: f64, rate: f64) -> GammaParams {
    GammaParams::new(shape, rate).unwrap()
}

/// Library Poisson-gamma marginal against quadrature of the integrand on
/// `count` random nodes (n ≤ 5, N ≤ 10). Returns the largest relative error.
pub fn conjugacy_max_rel_err(seed: u64, count: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = rng.random_range(1..=5);
        let claims: Vec<u64> = (0..n).map(|_| rng.random_range(0..=10)).collect();
        let expo: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..=1.0)).collect();
        let prior = gp(rng.random_range(0.5..5.0), rng.random_range(0.2..5.0));
        let data = node_data(&claims, &expo);
        let lib = poisson_log_marginal(&data, &all_rows(&data), &prior);
        let quad = log_integrate(|lam| {
            ln_gamma_pdf(lam, &prior) + claims.iter().zip(&expo).map(|(&c, &v)| ln_pois(c, lam * v)).sum::<f64>()
        });
        worst = worst.max(rel_err_log(lib, quad));
    }
    worst
}

/// Augmented density of one observation, written from its definition.
fn ln_augmented(family: Family, n: u64, v: f64, p: &NodeParams, xi: f64, delta: bool, phi: f64) -> f64 {
    let nf = n as f64;
    match family {
        Family::Nb1 | Family::Nb2 => {
            let k = p.kappa.unwrap();
            let size = if family == Family::Nb1 { k } else { k * v };
            nf * (p.lambda * v).ln() - xi * p.lambda * v + size * size.ln() + (size + nf - 1.0) * xi.ln()
                - xi * size
                - statrs::function::gamma::ln_gamma(size)
                - ln_fact(n)
        }
        Family::Zip1 | Family::Zip2 => {
            let mu = p.mu.unwrap();
            let (odds, mean) = if family == Family::Zip1 { (mu, p.lambda * v) } else { (mu * v, p.lambda) };
            let base = -phi * (1.0 + odds);
            if delta {
                base + odds.ln() + nf * mean.ln() - ln_fact(n) - mean
            } else {
                base
            }
        }
        Family::Poisson => unreachable!(),
    }
}

fn random_params<R: Rng>(family: Family, rng: &mut R) -> NodeParams {
    let lambda = rng.random_range(0.05..10.0);
    if family.is_nb() {
        NodeParams::nb(lambda, rng.random_range(0.2..20.0))
    } else {
        NodeParams::zip(rng.random_range(0.05..20.0), lambda)
    }
}

/// Library pmf against the augmented density with its latents integrated
/// out numerically, on `count` random (parameters, N, v). Largest relative error.
pub fn augmentation_max_rel_err(family: Family, seed: u64, count: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let p = random_params(family, &mut rng);
        let n = rng.random_range(0..=10u64);
        let v = rng.random_range(0.05..=1.0);
        let quad = if family.is_nb() {
            log_integrate(|xi| ln_augmented(family, n, v, &p, xi, true, 1.0))
        } else {
            let with = log_integrate(|phi| ln_augmented(family, n, v, &p, 1.0, true, phi));
            if n == 0 {
                let without = log_integrate(|phi| ln_augmented(family, n, v, &p, 1.0, false, phi));
                log_sum_exp(&[with, without])
            } else {
                with
            }
        };
        worst = worst.max(rel_err_log(log_pmf(family, &p, n, v), quad));
    }
    worst
}

/// Library integrated augmented likelihood of a one-row node, with its
/// latents integrated out numerically, against quadrature of the pmf against
/// the gamma priors. Largest relative error over `count` random points.
pub fn augmented_marginal_max_rel_err(family: Family, seed: u64, count: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = rng.random_range(0..=6u64);
        let v = rng.random_range(0.1..=1.0);
        let priors = Priors {
            lambda: gp(rng.random_range(0.8..4.0), rng.random_range(0.5..3.0)),
            mu: gp(rng.random_range(0.8..4.0), rng.random_range(0.5..3.0)),
            kappa_max: 1e6,
        };
        let data = node_data(&[n], &[v]);
        let rows = [0u32];
        let (lib, quad) = if family.is_nb() {
            let kappa = rng.random_range(0.5..10.0);
            let lib = log_integrate(|xi| {
                augmented_log_marginal(family, &data, &rows, &Latents::Nb { xi: vec![xi] }, Some(kappa), &priors)
            });
            let quad = log_integrate(|lam| {
                ln_gamma_pdf(lam, &priors.lambda) + log_pmf(family, &NodeParams::nb(lam, kappa), n, v)
            });
            (lib, quad)
        } else {
            let lat = |d: bool, phi: f64| Latents::Zip { delta: vec![d], phi: vec![phi] };
            let mut parts = vec![log_integrate(|phi| {
                augmented_log_marginal(family, &data, &rows, &lat(true, phi), None, &priors)
            })];
            if n == 0 {
                parts.push(log_integrate(|phi| {
                    augmented_log_marginal(family, &data, &rows, &lat(false, phi), None, &priors)
                }));
            }
            let quad = log_integrate_2d(|mu, lam| {
                ln_gamma_pdf(mu, &priors.mu)
                    + ln_gamma_pdf(lam, &priors.lambda)
                    + log_pmf(family, &NodeParams::zip(mu, lam), n, v)
            });
            (log_sum_exp(&parts), quad)
        };
        worst = worst.max(rel_err_log(lib, quad));
    }
    worst
}

/// Two-level categorical design for the enumerable tree spaces. Each of the
/// `vars` covariates is balanced and independent of the others; claims are
/// over-dispersed with extra zeros and a level effect on the first covariate.
pub fn small_design(vars: usize, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = ["a", "b", "c"];
    let schema = CovariateSchema::new(
        "claims",
        "exposure",
        (0..vars).map(|j| Variable::categorical(names[j], &["lo", "hi"])).collect(),
    )
    .unwrap();
    let cols: Vec<Vec<u32>> = (0..vars).map(|j| (0..n).map(|i| ((i >> j) & 1) as u32).collect()).collect();
    let mut claims = Vec::with_capacity(n);
    let mut expo = Vec::with_capacity(n);
    for i in 0..n {
        let v: f64 = rng.random_range(0.3..=1.0);
        let lam = if cols[0][i] == 1 { 1.8 } else { 1.0 };
        let shape = 1.5;
        let g: f64 = rand_distr::Distribution::sample(&rand_distr::Gamma::new(shape, lam * v / shape).unwrap(), &mut rng);
        let c = if rng.random::<f64>() < 0.25 { 0 } else { bcart::data::sample_poisson(g, &mut rng) };
        claims.push(c);
        expo.push(v);
    }
    Dataset::new(schema, cols.into_iter().map(Column::Categorical).collect(), claims, expo).unwrap()
}

/// The groups of the root and of every single split, as row lists.
pub fn design_groups(data: &Dataset) -> Vec<Vec<usize>> {
    let n = data.len();
    let mut groups = vec![(0..n).collect::<Vec<_>>()];
    for j in 0..data.schema().len() {
        let Column::Categorical(x) = data.column(j) else { unreachable!() };
        for level in 0..2 {
            groups.push((0..n).filter(|&i| x[i] == level).collect());
        }
    }
    groups
}

/// First design from `seed` on whose groups the NB dispersion estimates
/// differ by more than `ratio` (or are undefined, hence clamped) under both
/// estimators. Such designs move κ̂ sharply between the enumerated trees.
pub fn dissimilar_design(vars: usize, n: usize, seed: u64, ratio: f64) -> Dataset {
    for s in seed..seed + 1000 {
        let data = small_design(vars, n, s);
        let ok = [false, true].iter().all(|&nb2| {
            let ks: Vec<Option<f64>> = design_groups(&data)
                .iter()
                .map(|g| {
                    let c: Vec<u64> = g.iter().map(|&i| data.claims()[i]).collect();
                    let e: Vec<f64> = g.iter().map(|&i| data.exposure()[i]).collect();
                    kappa_moment(&c, &e, nb2)
                })
                .collect();
            let defined: Vec<f64> = ks.iter().flatten().copied().collect();
            let lo = defined.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = defined.iter().copied().fold(0.0, f64::max);
            ks[0].is_some() && (defined.len() < ks.len() || hi > ratio * lo)
        });
        if ok {
            return data;
        }
    }
    panic!("no dissimilar design near seed {seed}");
}

pub fn oracle_priors(data: &Dataset) -> Priors {
    let mut p = Priors::ratio_rule(data, 1.0).unwrap();
    p.mu = gp(1.5, 1.0);
    p
}

/// Exact log integrated likelihood of the rows of `data` selected by `keep`.
pub fn exact_leaf_log_marginal(family: Family, data: &Dataset, rows: &[usize], priors: &Priors) -> f64 {
    let claims: Vec<u64> = rows.iter().map(|&r| data.claims()[r]).collect();
    let expo: Vec<f64> = rows.iter().map(|&r| data.exposure()[r]).collect();
    let pairs: Vec<(u64, f64)> = claims.iter().copied().zip(expo.iter().copied()).collect();
    match family {
        Family::Poisson => log_integrate(|lam| {
            ln_gamma_pdf(lam, &priors.lambda) + pairs.iter().map(|&(c, v)| ln_pois(c, lam * v)).sum::<f64>()
        }),
        Family::Nb1 | Family::Nb2 => {
            let nb2 = family == Family::Nb2;
            let k = kappa_moment(&claims, &expo, nb2).map_or(priors.kappa_max, |k| k.min(priors.kappa_max));
            log_integrate(|lam| {
                ln_gamma_pdf(lam, &priors.lambda)
                    + pairs
                        .iter()
                        .map(|&(c, v)| if nb2 { ln_nb(c, k * v, lam * v) } else { ln_nb(c, k, lam * v) })
                        .sum::<f64>()
            })
        }
        Family::Zip1 | Family::Zip2 => log_integrate_2d(|mu, lam| {
            ln_gamma_pdf(mu, &priors.mu)
                + ln_gamma_pdf(lam, &priors.lambda)
                + pairs
                    .iter()
                    .map(|&(c, v)| if family == Family::Zip1 { ln_zip(c, mu, lam * v) } else { ln_zip(c, mu * v, lam) })
                    .sum::<f64>()
        }),
    }
}

/// Tree states of the enumerable spaces: root only, or one split on variable j.
pub fn state_of(tree: &bcart::Tree) -> usize {
    match tree.node(0).rule() {
        None => 0,
        Some(r) => 1 + r.variable(),
    }
}

pub struct ChainOracle {
    /// Exact posterior over (root, split on variable 0, split on variable 1, …).
    pub exact: Vec<f64>,
    pub visits: Vec<f64>,
    /// flows[i][j]: transitions from state i to state j.
    pub flows: Vec<Vec<u64>>,
    /// Iterations spent in trees outside the enumerated space.
    pub escapes: u64,
}

impl ChainOracle {
    pub fn total_variation(&self) -> f64 {
        0.5 * self.exact.iter().zip(&self.visits).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// Runs the chain on `small_design(vars, …)` with ρ large, so every tree with
/// a split below the root has negligible mass, and compares visit
/// frequencies with the exactly enumerated posterior over the root and the
/// `vars` single-split trees. γ is chosen to balance root against splits.
pub fn chain_oracle(family: Family, vars: usize, seed: u64, iterations: usize) -> ChainOracle {
    chain_oracle_on(family, &small_design(vars, 48, seed), seed, iterations)
}

/// [`chain_oracle`] on a given binary design.
pub fn chain_oracle_on(family: Family, data: &Dataset, seed: u64, iterations: usize) -> ChainOracle {
    let n = data.len();
    let vars = data.schema().len();
    let min_leaf = 5;
    let priors = oracle_priors(&data);
    let all: Vec<usize> = (0..n).collect();
    let root = exact_leaf_log_marginal(family, &data, &all, &priors);
    let split: Vec<f64> = (0..vars)
        .map(|j| {
            let Column::Categorical(x) = data.column(j) else { unreachable!() };
            let lo: Vec<usize> = all.iter().copied().filter(|&i| x[i] == 0).collect();
            let hi: Vec<usize> = all.iter().copied().filter(|&i| x[i] == 1).collect();
            exact_leaf_log_marginal(family, &data, &lo, &priors) + exact_leaf_log_marginal(family, &data, &hi, &priors)
        })
        .collect();
    // γ putting roughly 30% posterior mass on the root.
    let gain = log_sum_exp(&split) - (vars as f64).ln() - root;
    let gamma = (1.0 / (1.0 + 0.3 / 0.7 * gain.exp())).clamp(1e-6, 0.999);
    let cfg = TreePriorConfig { gamma, rho: 40.0, grid_size: 2, min_leaf };
    let p1 = split_probability(1, &cfg);
    let mut logp = vec![(1.0 - gamma).ln() + root];
    for s in &split {
        logp.push(gamma.ln() - (vars as f64).ln() + 2.0 * (1.0 - p1).ln() + s);
    }
    let z = log_sum_exp(&logp);
    let exact: Vec<f64> = logp.iter().map(|l| (l - z).exp()).collect();

    let candidates = SplitCandidates::from_data(data, cfg.grid_size);
    let sampler = Sampler::new(data, &candidates, family, priors, cfg, ProposalMix::default());
    let mut state = sampler.init_state(seed, 0);
    let burn = iterations / 50;
    let k = vars + 1;
    let mut counts = vec![0u64; k];
    let mut flows = vec![vec![0u64; k]; k];
    let mut escapes = 0;
    let mut prev = 0;
    for it in 0..iterations + burn {
        sampler.step(&mut state);
        if state.tree.n_leaves() > 2 {
            escapes += 1;
            continue;
        }
        let s = state_of(&state.tree);
        if it >= burn {
            counts[s] += 1;
            flows[prev][s] += 1;
        }
        prev = s;
    }
    let total = counts.iter().sum::<u64>().max(1) as f64;
    ChainOracle { exact, visits: counts.iter().map(|&c| c as f64 / total).collect(), flows, escapes }
}
