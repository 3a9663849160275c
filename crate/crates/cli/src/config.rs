//! Run configuration: a TOML file whose keys can be overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bcart::selection::{Calibration, GridPoint};
use bcart::{ChainConfig, Dataset, Family, GammaParams, Priors, ProposalMix, Scenario, TreePriorConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub family: Family,
    /// Training data, or the input of predict/evaluate.
    pub data: Option<PathBuf>,
    /// Held-out data for evaluate.
    pub test: Option<PathBuf>,
    /// Schema declaration (TOML or JSON).
    pub schema: Option<PathBuf>,
    /// Fitted trees for predict/evaluate.
    pub trees: Vec<PathBuf>,
    pub priors: PriorSettings,
    pub chain: ChainSettings,
    pub selection: SelectionSettings,
    pub simulate: SimulateSettings,
    pub stability: StabilitySettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            family: Family::Poisson,
            data: None,
            test: None,
            schema: None,
            trees: Vec::new(),
            priors: PriorSettings::default(),
            chain: ChainSettings::default(),
            selection: SelectionSettings::default(),
            simulate: SimulateSettings::default(),
            stability: StabilitySettings::default(),
        }
    }
}

/// Gamma hyper-parameters. Without an explicit `lambda`, the ratio rule
/// sets α/β to the portfolio frequency with rate `ratio_beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSettings {
    pub ratio_beta: f64,
    pub lambda: Option<GammaParams>,
    pub mu: GammaParams,
    pub kappa_max: f64,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            ratio_beta: 0.8,
            lambda: None,
            mu: GammaParams { shape: 1.0, rate: 1.0 },
            kappa_max: bcart::family::DEFAULT_KAPPA_MAX,
        }
    }
}

impl PriorSettings {
    pub fn resolve(&self, data: &Dataset) -> Result<Priors> {
        let lambda = match self.lambda {
            Some(g) => GammaParams::new(g.shape, g.rate)?,
            None => Priors::ratio_rule(data, self.ratio_beta)?.lambda,
        };
        if !(self.kappa_max > 0.0) {
            bail!("kappa_max must be positive");
        }
        Ok(Priors { lambda, mu: GammaParams::new(self.mu.shape, self.mu.rate)?, kappa_max: self.kappa_max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub restarts: usize,
    pub mix: ProposalMix,
    /// (γ, ρ) used by `fit`; `select` takes them from the grid.
    pub gamma: f64,
    pub rho: f64,
    pub min_leaf: usize,
    pub grid_size: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        let c = ChainConfig::default();
        ChainSettings {
            iterations: c.iterations,
            burn_in: c.burn_in,
            restarts: c.restarts,
            mix: c.mix,
            gamma: c.prior.gamma,
            rho: c.prior.rho,
            min_leaf: c.prior.min_leaf,
            grid_size: c.prior.grid_size,
        }
    }
}

impl ChainSettings {
    pub fn chain_config(&self, family: Family, seed: u64) -> ChainConfig {
        ChainConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            restarts: self.restarts,
            mix: self.mix,
            prior: TreePriorConfig { gamma: self.gamma, rho: self.rho, grid_size: self.grid_size, min_leaf: self.min_leaf },
            family,
            seed,
        }
    }
}

/// Either an explicit (j, γ, ρ) grid or a leaf-count range calibrated by pilot chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    pub grid: Vec<GridPoint>,
    pub range: Option<[usize; 2]>,
    pub calibration: Calibration,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        SelectionSettings { grid: Vec::new(), range: None, calibration: Calibration::default() }
    }
}

impl SelectionSettings {
    pub fn validate(&self) -> Result<()> {
        match (self.grid.is_empty(), self.range) {
            (true, None) => bail!("selection needs a grid or a leaf-count range"),
            (_, Some([lo, hi])) if lo < 1 || lo > hi => bail!("leaf-count range [{lo}, {hi}] is invalid"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSettings {
    #[serde(flatten)]
    pub scenario: Scenario,
    pub n: usize,
    /// When set, also writes a stratified train/test split.
    pub train_fraction: Option<f64>,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings { scenario: Scenario::Chessboard, n: 5000, train_fraction: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySettings {
    pub repeats: usize,
    pub subsample: f64,
    pub train_fraction: f64,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        let s = bcart::StabilityConfig::default();
        StabilitySettings { repeats: s.repeats, subsample: s.subsample, train_fraction: s.train_fraction }
    }
}

/// Everything needed to replay a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub config: RunConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Parses `j:γ:ρ,...` into grid points, or `a..b` into a calibration range.
pub fn parse_grid(s: &str) -> Result<(Vec<GridPoint>, Option<[usize; 2]>)> {
    if let Some((a, b)) = s.split_once("..") {
        let lo = a.trim().parse().with_context(|| format!("bad range start `{a}`"))?;
        let hi = b.trim().trim_start_matches('=').parse().with_context(|| format!("bad range end `{b}`"))?;
        return Ok((Vec::new(), Some([lo, hi])));
    }
    let mut points = Vec::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        let [j, g, r] = parts[..] else { bail!("grid point `{item}` is not j:gamma:rho") };
        points.push(GridPoint {
            j: j.parse().with_context(|| format!("bad leaf count in `{item}`"))?,
            gamma: g.parse().with_context(|| format!("bad gamma in `{item}`"))?,
            rho: r.parse().with_context(|| format!("bad rho in `{item}`"))?,
        });
    }
    if points.is_empty() {
        bail!("empty grid");
    }
    Ok((points, None))
}

/// Absolute form of `p` without requiring it to exist.
pub fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(if p.is_absolute() { p.to_path_buf() } else { std::env::current_dir()?.join(p) })
}

impl RunConfig {
    /// Makes every path absolute so a manifest replays from any directory.
    pub fn absolutize(&mut self) -> Result<()> {
        self.out = absolute(&self.out)?;
        for p in [&mut self.data, &mut self.test, &mut self.schema].into_iter().flatten() {
            *p = absolute(p)?;
        }
        for p in &mut self.trees {
            *p = absolute(p)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        let (g, r) = parse_grid("2:0.5:20, 3:0.95:17").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[1], GridPoint { j: 3, gamma: 0.95, rho: 17.0 });
        assert!(r.is_none());
        assert_eq!(parse_grid("2..8").unwrap().1, Some([2, 8]));
        assert_eq!(parse_grid("2..=8").unwrap().1, Some([2, 8]));
        assert!(parse_grid("2:0.5").is_err());
        assert!(parse_grid("").is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.family = Family::Zip2;
        c.selection.grid = vec![GridPoint { j: 4, gamma: 0.99, rho: 15.0 }];
        c.simulate.scenario = Scenario::ExposureZeroInflated { tau: 100.0 };
        c.priors.lambda = Some(GammaParams { shape: 2.0, rate: 1.0 });
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("family = \"nb2\"\n[chain]\niterations = 500\n").unwrap();
        assert_eq!(c.family, Family::Nb2);
        assert_eq!(c.chain.iterations, 500);
        assert_eq!(c.chain.burn_in, 2000);
        assert_eq!(c.chain.restarts, 3);
        assert!(toml::from_str::<RunConfig>("colour = 1").is_err());
    }

    #[test]
    fn selection_needs_grid_or_range() {
        let mut s = SelectionSettings::default();
        assert!(s.validate().is_err());
        s.range = Some([3, 2]);
        assert!(s.validate().is_err());
        s.range = Some([2, 8]);
        assert!(s.validate().is_ok());
    }
}
