use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use bcart::family::{augmented_log_marginal, posterior, sample_latents};
use bcart::metrics::evaluate;
use bcart::selection::tree_dic;
use bcart::{run, simulate_scenario, ChainConfig, Family, Latents, Priors, Scenario, ScenarioConfig, SplitCandidates};
use rand::SeedableRng;

fn chessboard(n: usize) -> bcart::Dataset {
    simulate_scenario(&ScenarioConfig { scenario: Scenario::Chessboard, n, seed: 1 }).unwrap()
}

fn leaf_updates(c: &mut Criterion) {
    let data = chessboard(5000);
    let rows: Vec<u32> = (0..data.len() as u32).collect();
    let priors = Priors::ratio_rule(&data, 0.8).unwrap();
    let mut g = c.benchmark_group("leaf");
    g.bench_function("poisson_posterior_5000", |b| {
        b.iter(|| posterior(Family::Poisson, &data, black_box(&rows), &Latents::None, None, &priors))
    });
    for family in [Family::Nb2, Family::Zip1] {
        let lat = Latents::initial(family, data.len());
        let kappa = family.is_nb().then_some(2.0);
        g.bench_function(format!("{family}_marginal_5000"), |b| {
            b.iter(|| augmented_log_marginal(family, &data, black_box(&rows), &lat, kappa, &priors))
        });
        let post = posterior(family, &data, &rows, &lat, kappa, &priors);
        let params = post.mean();
        g.bench_function(format!("{family}_latents_5000"), |b| {
            b.iter_batched(
                || (Latents::initial(family, data.len()), rand_chacha::ChaCha8Rng::seed_from_u64(3)),
                |(mut lat, mut rng)| sample_latents(family, &params, &data, &rows, &mut lat, &mut rng),
                BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

fn chain(c: &mut Criterion) {
    let data = chessboard(5000);
    let priors = Priors::ratio_rule(&data, 0.8).unwrap();
    let mut g = c.benchmark_group("chain");
    g.sample_size(10);
    for family in [Family::Poisson, Family::Zip2] {
        let mut cfg = ChainConfig { family, seed: 2, iterations: 1000, burn_in: 200, restarts: 1, ..ChainConfig::default() };
        cfg.prior.gamma = 0.99;
        cfg.prior.rho = 15.0;
        let candidates = SplitCandidates::from_data(&data, cfg.prior.grid_size);
        g.bench_function(format!("{family}_1000_iterations"), |b| b.iter(|| run(&cfg, &data, &candidates, &priors).unwrap()));
    }
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let data = chessboard(5000);
    let priors = Priors::ratio_rule(&data, 0.8).unwrap();
    let mut cfg = ChainConfig { seed: 4, iterations: 2000, burn_in: 500, restarts: 1, ..ChainConfig::default() };
    cfg.prior.gamma = 0.99;
    cfg.prior.rho = 15.0;
    let candidates = SplitCandidates::from_data(&data, cfg.prior.grid_size);
    let out = run(&cfg, &data, &candidates, &priors).unwrap();
    let tree = bcart::selection::best_in_region(&out.archive).unwrap().tree.clone();
    let test = simulate_scenario(&ScenarioConfig { scenario: Scenario::Chessboard, n: 5000, seed: 9 }).unwrap();
    let fitted = bcart::selection::finalize(&tree);
    c.bench_function("tree_dic_5000", |b| b.iter(|| tree_dic(&tree, Family::Poisson, &data, &priors).unwrap()));
    c.bench_function("evaluate_5000", |b| b.iter(|| evaluate("bench", &fitted, Family::Poisson, &test).unwrap()));
}

criterion_group!(benches, leaf_updates, chain, scoring);
criterion_main!(benches);
