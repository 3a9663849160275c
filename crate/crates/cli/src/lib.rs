//! Command-line front end: simulate data, fit chains, select trees by DIC,
//! predict, evaluate and assess stability. Every command writes a manifest
//! next to its outputs that `bcart replay` runs again.

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bcart::mcmc::{acceptance_rates, write_trace, ArchiveEntry};
use bcart::metrics::{self, write_eval_table, write_leaf_table};
use bcart::selection::{
    best_in_region, calibrate_grid, finalize, grid_config, predict_row, three_step_select, write_dic_table, GridPoint,
    GridRun, Selection,
};
use bcart::{
    load_csv, run, simulate_scenario, stratified_split, CovariateSchema, Dataset, Family, NodeRecord, Priors,
    ScenarioConfig, SplitCandidates, StabilityConfig, Tree,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use config::{Manifest, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "bcart", version, about = "Bayesian CART for claim frequency")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (and optionally a train/test split).
    Simulate(Flags),
    /// Run the chain at one (gamma, rho) and write its trace and archive.
    Fit(Flags),
    /// Fit every grid point and pick the tree with the smallest DIC.
    Select(Flags),
    /// Per-row predictions of a fitted tree.
    Predict(Flags),
    /// Test-set metrics of one or more fitted trees.
    Evaluate(Flags),
    /// Mean prediction variance over refits on subsamples.
    Stability(Flags),
    /// Run a command again from its manifest.
    Replay {
        manifest: PathBuf,
        /// Write to this directory instead of the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Chessboard,
    ZeroInflated,
    ExposureZeroInflated,
}

/// Flags shared by all commands; each overrides the matching config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<Family>,
    /// `j:gamma:rho,...` or a leaf-count range `ms..me` for calibration.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fitted tree file; repeat to compare several.
    #[arg(long = "tree")]
    pub trees: Vec<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    /// Quantile grid size for numeric covariates.
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioArg>,
    #[arg(long)]
    pub p0: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

impl Flags {
    /// Defaults, then the config file, then the flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => config::load_config(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(self.seed => c.seed);
        set!(self.out => c.out);
        set!(self.family => c.family);
        set!(self.iterations => c.chain.iterations);
        set!(self.burn_in => c.chain.burn_in);
        set!(self.restarts => c.chain.restarts);
        set!(self.gamma => c.chain.gamma);
        set!(self.rho => c.chain.rho);
        set!(self.min_leaf => c.chain.min_leaf);
        set!(self.grid_size => c.chain.grid_size);
        set!(self.n => c.simulate.n);
        if self.data.is_some() {
            c.data = self.data.clone();
        }
        if self.test.is_some() {
            c.test = self.test.clone();
        }
        if self.schema.is_some() {
            c.schema = self.schema.clone();
        }
        if !self.trees.is_empty() {
            c.trees = self.trees.clone();
        }
        if let Some(g) = &self.grid {
            let (grid, range) = config::parse_grid(g)?;
            c.selection.grid = grid;
            c.selection.range = range;
        }
        if let Some(f) = self.train_fraction {
            c.simulate.train_fraction = Some(f);
            c.stability.train_fraction = f;
        }
        use bcart::Scenario as S;
        let scenario = self.scenario.map(|s| match s {
            ScenarioArg::Chessboard => S::Chessboard,
            ScenarioArg::ZeroInflated => S::ZeroInflated { p0: 0.05 },
            ScenarioArg::ExposureZeroInflated => S::ExposureZeroInflated { tau: 100.0 },
        });
        if let Some(s) = scenario {
            c.simulate.scenario = s;
        }
        match (&mut c.simulate.scenario, self.p0, self.tau) {
            (S::ZeroInflated { p0 }, Some(v), _) => *p0 = v,
            (S::ExposureZeroInflated { tau }, _, Some(v)) => *tau = v,
            (_, None, None) => {}
            _ => bail!("--p0 needs the zero-inflated scenario and --tau the exposure-zero-inflated one"),
        }
        Ok(c)
    }
}

pub fn run_cli(cli: Cli) -> Result<()> {
    let (name, flags) = match cli.command {
        Command::Replay { manifest, out } => {
            let mut m = Manifest::load(&manifest)?;
            if let Some(o) = out {
                m.config.out = config::absolute(&o)?;
            }
            return execute(&m.command, m.config);
        }
        Command::Simulate(f) => ("simulate", f),
        Command::Fit(f) => ("fit", f),
        Command::Select(f) => ("select", f),
        Command::Predict(f) => ("predict", f),
        Command::Evaluate(f) => ("evaluate", f),
        Command::Stability(f) => ("stability", f),
    };
    let mut config = flags.resolve()?;
    config.absolutize()?;
    execute(name, config)
}

/// Runs `command` with a fully resolved configuration, writing the manifest
/// first so a failed run can still be inspected and replayed.
pub fn execute(command: &str, config: RunConfig) -> Result<()> {
    fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    let manifest = Manifest { version: env!("CARGO_PKG_VERSION").to_string(), command: command.to_string(), config };
    fs::write(manifest.config.out.join("manifest.toml"), toml::to_string(&manifest)?)?;
    let c = &manifest.config;
    match command {
        "simulate" => simulate(c),
        "fit" => fit(c),
        "select" => select(c),
        "predict" => predict(c),
        "evaluate" => evaluate(c),
        "stability" => stability(c),
        other => bail!("unknown command `{other}`"),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

pub fn load_schema(path: &Path) -> Result<CovariateSchema> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let schema: CovariateSchema = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing schema {}", path.display()))?
    };
    schema.validate(false)?;
    Ok(schema)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().with_context(|| format!("missing {what} (set `{what}` or pass --{what})"))
}

/// Loads the training data with the declared schema.
pub fn load_training(c: &RunConfig) -> Result<Dataset> {
    let schema = load_schema(required(&c.schema, "schema")?)?;
    let path = required(&c.data, "data")?;
    load_csv(path, &schema).with_context(|| format!("loading {}", path.display()))
}

/// A fitted tree as written to disk: family, the schema it was fitted on and the nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    pub family: Family,
    pub schema: CovariateSchema,
    pub root: NodeRecord,
}

impl TreeFile {
    pub fn new(tree: &Tree, family: Family) -> TreeFile {
        TreeFile { family, schema: tree.schema().clone(), root: tree.to_record() }
    }

    pub fn load(path: &Path) -> Result<TreeFile> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing tree {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(w.flush()?)
    }

    /// Loads `path` with the fitted schema and routes it through the tree.
    pub fn tree_on(&self, path: &Path) -> Result<(Tree, Dataset)> {
        let data = load_csv(path, &self.schema).with_context(|| format!("loading {}", path.display()))?;
        Ok((Tree::from_record(&self.root, &data)?, data))
    }
}

fn simulate(c: &RunConfig) -> Result<()> {
    let s = &c.simulate;
    let data = simulate_scenario(&ScenarioConfig { scenario: s.scenario, n: s.n, seed: c.seed })?;
    data.save_csv(&c.out.join("data.csv"))?;
    fs::write(c.out.join("schema.toml"), toml::to_string(data.schema())?)?;
    if let Some(f) = s.train_fraction {
        let (train, test) = stratified_split(&data, f, c.seed)?;
        train.save_csv(&c.out.join("train.csv"))?;
        test.save_csv(&c.out.join("test.csv"))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ArchiveRecord<'a> {
    restart: usize,
    iteration: usize,
    log_data_lik: f64,
    log_marginal: f64,
    n_leaves: usize,
    usage: &'a [usize],
    tree: NodeRecord,
}

fn write_archive(archive: &[ArchiveEntry], path: &Path) -> Result<()> {
    let records: Vec<ArchiveRecord> = archive
        .iter()
        .map(|e| ArchiveRecord {
            restart: e.restart,
            iteration: e.iteration,
            log_data_lik: e.log_data_lik,
            log_marginal: e.log_marginal,
            n_leaves: e.n_leaves,
            usage: &e.usage,
            tree: e.tree.to_record(),
        })
        .collect();
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &records)?;
    writeln!(w)?;
    Ok(w.flush()?)
}

fn variable_names(data: &Dataset) -> Vec<String> {
    data.schema().variables.iter().map(|v| v.name.clone()).collect()
}

fn fit(c: &RunConfig) -> Result<()> {
    let data = load_training(c)?;
    let priors = c.priors.resolve(&data)?;
    let cfg = c.chain.chain_config(c.family, c.seed);
    cfg.validate()?;
    let candidates = SplitCandidates::from_data(&data, cfg.prior.grid_size);
    let out = run(&cfg, &data, &candidates, &priors)?;
    write_trace(&out.trace, &variable_names(&data), create(&c.out.join("trace.csv"))?)?;
    write_archive(&out.archive, &c.out.join("archive.json"))?;
    let mut w = csv::Writer::from_writer(create(&c.out.join("moves.csv"))?);
    w.write_record(["move", "proposed", "accepted", "rate"])?;
    for m in acceptance_rates(&out.trace) {
        w.write_record([m.kind.to_string(), m.proposed.to_string(), m.accepted.to_string(), m.rate().to_string()])?;
    }
    w.flush()?;
    if let Ok(best) = best_in_region(&out.archive) {
        TreeFile::new(&finalize(&best.tree), c.family).save(&c.out.join("tree.json"))?;
    }
    Ok(())
}

/// The grid of a run: explicit points, or pilot-calibrated ρ for each j in the range.
pub fn resolve_grid(c: &RunConfig, data: &Dataset, candidates: &SplitCandidates, priors: &Priors) -> Result<Vec<GridPoint>> {
    c.selection.validate()?;
    match c.selection.range {
        Some([lo, hi]) if c.selection.grid.is_empty() => {
            let base = c.chain.chain_config(c.family, c.seed);
            Ok(calibrate_grid(lo..=hi, &c.selection.calibration, &base, data, candidates, priors)?)
        }
        _ => Ok(c.selection.grid.clone()),
    }
}

/// The three-step selection on `data`; `trace_dir` receives one trace per grid point.
pub fn select_on(c: &RunConfig, data: &Dataset, trace_dir: Option<&Path>) -> Result<Selection> {
    let priors = c.priors.resolve(data)?;
    let base = c.chain.chain_config(c.family, c.seed);
    base.validate()?;
    let candidates = SplitCandidates::from_data(data, base.prior.grid_size);
    let grid = resolve_grid(c, data, &candidates, &priors)?;
    let mut runs = Vec::with_capacity(grid.len());
    for point in grid {
        let out = run(&grid_config(&base, point), data, &candidates, &priors)?;
        if let Some(dir) = trace_dir {
            let path = dir.join(format!("trace_j{}.csv", point.j));
            write_trace(&out.trace, &variable_names(data), create(&path)?)?;
        }
        runs.push(GridRun { point, archive: out.archive });
    }
    Ok(three_step_select(&runs, data, c.family, &priors)?)
}

fn select(c: &RunConfig) -> Result<()> {
    let data = load_training(c)?;
    let sel = select_on(c, &data, Some(&c.out))?;
    write_dic_table(&sel.rows, create(&c.out.join("dic_table.csv"))?)?;
    TreeFile::new(&sel.tree, c.family).save(&c.out.join("tree.json"))?;
    Ok(())
}

fn predict(c: &RunConfig) -> Result<()> {
    let [path] = &c.trees[..] else { bail!("predict takes exactly one tree") };
    let file = TreeFile::load(path)?;
    let (tree, data) = file.tree_on(required(&c.data, "data")?)?;
    let mut w = csv::Writer::from_writer(create(&c.out.join("predictions.csv"))?);
    w.write_record(["row_id", "expected_count", "node_id", "node_frequency"])?;
    for i in 0..data.len() {
        let (leaf, count, freq) = predict_row(&tree, file.family, &data, i)?;
        w.write_record([i.to_string(), count.to_string(), leaf.to_string(), freq.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Short unique model names from the tree paths.
fn model_names(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map_or("tree".into(), |s| s.to_string_lossy().into_owned());
            match p.parent().and_then(Path::file_name) {
                Some(dir) => format!("{}/{stem}", dir.to_string_lossy()),
                None => stem,
            }
        })
        .collect();
    stems
        .iter()
        .enumerate()
        .map(|(i, s)| if stems.iter().filter(|t| *t == s).count() > 1 { format!("{s}#{}", i + 1) } else { s.clone() })
        .collect()
}

fn evaluate(c: &RunConfig) -> Result<()> {
    if c.trees.is_empty() {
        bail!("evaluate needs at least one tree");
    }
    let test_path = c.test.as_deref().or(c.data.as_deref()).context("missing test (set `test` or pass --test)")?;
    let names = model_names(&c.trees);
    let mut loaded = Vec::new();
    for path in &c.trees {
        let file = TreeFile::load(path)?;
        let (tree, data) = file.tree_on(test_path)?;
        loaded.push((file.family, tree, data));
    }
    let mut reports = Vec::new();
    for (name, (family, tree, data)) in names.iter().zip(&loaded) {
        reports.push(metrics::evaluate(name, tree, *family, data)?);
    }
    if loaded.len() > 1 {
        let mut groups = Vec::new();
        for (family, tree, data) in &loaded {
            groups.push(metrics::leaf_groups(tree, *family, data)?);
        }
        for (r, lift) in reports.iter_mut().zip(metrics::lift_common_basis_from(&groups)) {
            r.lift = lift;
        }
    }
    write_eval_table(&reports, create(&c.out.join("metrics.csv"))?)?;
    write_leaf_table(&reports, create(&c.out.join("leaves.csv"))?)?;
    Ok(())
}

fn stability(c: &RunConfig) -> Result<()> {
    let data = load_training(c)?;
    let s = &c.stability;
    let cfg = StabilityConfig { repeats: s.repeats, subsample: s.subsample, train_fraction: s.train_fraction, seed: c.seed };
    let value = metrics::stability_assess(&data, &cfg, |sub, test, _k, seed| {
        let refit = RunConfig { seed, ..c.clone() };
        let sel = select_on(&refit, sub, None).map_err(|e| bcart::Error::Data(format!("{e:#}")))?;
        let tree = Tree::from_record(&sel.tree.to_record(), test)?;
        (0..test.len()).map(|i| predict_row(&tree, c.family, test, i).map(|p| p.1)).collect()
    })?;
    let mut w = csv::Writer::from_writer(create(&c.out.join("stability.csv"))?);
    w.write_record(["repeats", "subsample", "train_fraction", "mean_variance"])?;
    w.write_record([s.repeats.to_string(), s.subsample.to_string(), s.train_fraction.to_string(), value.to_string()])?;
    w.flush()?;
    Ok(())
}
