//! Datasets, CSV ingestion, stratified splitting and the synthetic scenarios.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Kind of a covariate. Categorical levels are kept in declaration order,
/// which is also the tie-break order when levels are ranked by frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VariableKind {
    Numeric,
    Categorical {
        #[serde(default)]
        levels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
}

impl Variable {
    pub fn numeric(name: &str) -> Self {
        Variable { name: name.to_string(), kind: VariableKind::Numeric }
    }

    pub fn categorical<S: AsRef<str>>(name: &str, levels: &[S]) -> Self {
        Variable {
            name: name.to_string(),
            kind: VariableKind::Categorical {
                levels: levels.iter().map(|l| l.as_ref().to_string()).collect(),
            },
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, VariableKind::Numeric)
    }

    pub fn levels(&self) -> &[String] {
        match &self.kind {
            VariableKind::Categorical { levels } => levels,
            VariableKind::Numeric => &[],
        }
    }
}

/// Declared layout of a dataset: covariates plus the response and exposure columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub response: String,
    pub exposure: String,
    pub variables: Vec<Variable>,
}

impl CovariateSchema {
    pub fn new(response: &str, exposure: &str, variables: Vec<Variable>) -> Result<Self> {
        let schema = CovariateSchema {
            response: response.to_string(),
            exposure: exposure.to_string(),
            variables,
        };
        schema.validate(false)?;
        Ok(schema)
    }

    /// Checks name uniqueness; with `require_levels` every categorical must
    /// already carry a non-empty level set.
    pub fn validate(&self, require_levels: bool) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for name in self
            .variables
            .iter()
            .map(|v| v.name.as_str())
            .chain([self.response.as_str(), self.exposure.as_str()])
        {
            if !seen.insert(name) {
                return Err(Error::Config(format!("duplicate column name `{name}`")));
            }
        }
        for v in &self.variables {
            if let VariableKind::Categorical { levels } = &v.kind {
                let distinct: std::collections::HashSet<_> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(Error::Config(format!("duplicate level in `{}`", v.name)));
                }
                if require_levels && levels.is_empty() {
                    return Err(Error::Config(format!("`{}` has no levels", v.name)));
                }
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }
}

/// One covariate value supplied for routing a single observation.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariate {
    Numeric(f64),
    Level(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    /// Level indices into the schema's level list.
    Categorical(Vec<u32>),
}

/// Column-oriented claims dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: Arc<CovariateSchema>,
    columns: Vec<Column>,
    claims: Vec<u64>,
    exposure: Vec<f64>,
    ln_factorial: Vec<f64>,
    ln_exposure: Vec<f64>,
}

impl Dataset {
    pub fn new(
        schema: CovariateSchema,
        columns: Vec<Column>,
        claims: Vec<u64>,
        exposure: Vec<f64>,
    ) -> Result<Self> {
        schema.validate(true)?;
        let n = claims.len();
        if exposure.len() != n || columns.len() != schema.len() {
            return Err(Error::Data("column lengths disagree".into()));
        }
        for (j, (col, var)) in columns.iter().zip(&schema.variables).enumerate() {
            match (col, &var.kind) {
                (Column::Numeric(x), VariableKind::Numeric) => {
                    if x.len() != n {
                        return Err(Error::Data(format!("column `{}` has wrong length", var.name)));
                    }
                    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
                        return Err(Error::Data(format!(
                            "row {i}, column `{}`: non-finite value",
                            var.name
                        )));
                    }
                }
                (Column::Categorical(x), VariableKind::Categorical { levels }) => {
                    if x.len() != n {
                        return Err(Error::Data(format!("column `{}` has wrong length", var.name)));
                    }
                    if x.iter().any(|&k| k as usize >= levels.len()) {
                        return Err(Error::Data(format!("column `{}` level out of range", var.name)));
                    }
                }
                _ => return Err(Error::CovariateKind(schema.variables[j].name.clone())),
            }
        }
        for (i, &v) in exposure.iter().enumerate() {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Data(format!(
                    "row {i}, column `{}`: exposure {v} outside (0, 1]",
                    schema.exposure
                )));
            }
        }
        let ln_factorial = claims.iter().map(|&c| ln_gamma(c as f64 + 1.0)).collect();
        let ln_exposure = exposure.iter().map(|v| v.ln()).collect();
        Ok(Dataset {
            schema: Arc::new(schema),
            columns,
            claims,
            exposure,
            ln_factorial,
            ln_exposure,
        })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn column(&self, j: usize) -> &Column {
        &self.columns[j]
    }

    pub fn claims(&self) -> &[u64] {
        &self.claims
    }

    pub fn exposure(&self) -> &[f64] {
        &self.exposure
    }

    /// ln(N_i!) for every row.
    pub fn ln_factorial(&self) -> &[f64] {
        &self.ln_factorial
    }

    pub fn ln_exposure(&self) -> &[f64] {
        &self.ln_exposure
    }

    pub fn total_claims(&self) -> f64 {
        self.claims.iter().map(|&c| c as f64).sum()
    }

    pub fn total_exposure(&self) -> f64 {
        self.exposure.iter().sum()
    }

    /// Covariate vector of row `i` in the form accepted by routing.
    pub fn covariates(&self, i: usize) -> Vec<Covariate> {
        self.columns
            .iter()
            .zip(&self.schema.variables)
            .map(|(col, var)| match col {
                Column::Numeric(x) => Covariate::Numeric(x[i]),
                Column::Categorical(x) => Covariate::Level(var.levels()[x[i] as usize].clone()),
            })
            .collect()
    }

    /// Rows `idx` in the given order, sharing the schema.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                Column::Numeric(x) => Column::Numeric(idx.iter().map(|&i| x[i]).collect()),
                Column::Categorical(x) => Column::Categorical(idx.iter().map(|&i| x[i]).collect()),
            })
            .collect();
        Dataset {
            schema: Arc::clone(&self.schema),
            columns,
            claims: idx.iter().map(|&i| self.claims[i]).collect(),
            exposure: idx.iter().map(|&i| self.exposure[i]).collect(),
            ln_factorial: idx.iter().map(|&i| self.ln_factorial[i]).collect(),
            ln_exposure: idx.iter().map(|&i| self.ln_exposure[i]).collect(),
        }
    }

    /// Re-expresses this dataset's categorical codes against `target`'s level
    /// lists so it can be routed through a tree fitted on `target`.
    pub fn conform_to(&self, target: &CovariateSchema) -> Result<Dataset> {
        let mut columns = Vec::with_capacity(target.len());
        for tv in &target.variables {
            let j = self
                .schema
                .index_of(&tv.name)
                .ok_or_else(|| Error::Data(format!("missing column `{}`", tv.name)))?;
            let var = &self.schema.variables[j];
            match (&self.columns[j], &tv.kind) {
                (Column::Numeric(x), VariableKind::Numeric) => columns.push(Column::Numeric(x.clone())),
                (Column::Categorical(x), VariableKind::Categorical { levels }) => {
                    let lookup: HashMap<&str, u32> =
                        levels.iter().enumerate().map(|(k, l)| (l.as_str(), k as u32)).collect();
                    let map = var
                        .levels()
                        .iter()
                        .map(|l| lookup.get(l.as_str()).copied())
                        .collect::<Vec<_>>();
                    let mut out = Vec::with_capacity(x.len());
                    for &code in x {
                        match map[code as usize] {
                            Some(k) => out.push(k),
                            None => {
                                return Err(Error::UnknownLevel {
                                    variable: tv.name.clone(),
                                    level: var.levels()[code as usize].clone(),
                                })
                            }
                        }
                    }
                    columns.push(Column::Categorical(out));
                }
                _ => return Err(Error::CovariateKind(tv.name.clone())),
            }
        }
        let mut schema = target.clone();
        schema.response = self.schema.response.clone();
        schema.exposure = self.schema.exposure.clone();
        Dataset::new(schema, columns, self.claims.clone(), self.exposure.clone())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.schema.variables.iter().map(|v| v.name.as_str()).collect();
        header.push(&self.schema.response);
        header.push(&self.schema.exposure);
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self
                .columns
                .iter()
                .zip(&self.schema.variables)
                .map(|(c, v)| match c {
                    Column::Numeric(x) => format!("{}", x[i]),
                    Column::Categorical(x) => v.levels()[x[i] as usize].clone(),
                })
                .collect();
            rec.push(self.claims[i].to_string());
            rec.push(format!("{}", self.exposure[i]));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

/// Reads a CSV file using the declared schema.
pub fn load_csv(path: &Path, schema: &CovariateSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_csv(file, schema)
}

/// Parses CSV text with a header row. Extra columns are ignored. Categorical
/// levels declared in the schema are enforced; undeclared ones are collected in
/// order of first appearance.
pub fn read_csv<R: Read>(reader: R, schema: &CovariateSchema) -> Result<Dataset> {
    schema.validate(false)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column `{name}`")))
    };
    let var_pos = schema
        .variables
        .iter()
        .map(|v| find(&v.name))
        .collect::<Result<Vec<_>>>()?;
    let resp_pos = find(&schema.response)?;
    let expo_pos = find(&schema.exposure)?;

    let mut levels: Vec<Vec<String>> = schema.variables.iter().map(|v| v.levels().to_vec()).collect();
    let fixed: Vec<bool> = levels.iter().map(|l| !l.is_empty()).collect();
    let mut lookup: Vec<HashMap<String, u32>> = levels
        .iter()
        .map(|l| l.iter().enumerate().map(|(k, s)| (s.clone(), k as u32)).collect())
        .collect();
    let mut columns: Vec<Column> = schema
        .variables
        .iter()
        .map(|v| match v.kind {
            VariableKind::Numeric => Column::Numeric(Vec::new()),
            VariableKind::Categorical { .. } => Column::Categorical(Vec::new()),
        })
        .collect();
    let mut claims = Vec::new();
    let mut exposure = Vec::new();

    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = |pos: usize, name: &str| {
            rec.get(pos)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Data(format!("row {row}, column `{name}`: missing value")))
        };
        for (j, var) in schema.variables.iter().enumerate() {
            let raw = field(var_pos[j], &var.name)?;
            match &mut columns[j] {
                Column::Numeric(x) => {
                    let v: f64 = raw.parse().map_err(|_| {
                        Error::Data(format!("row {row}, column `{}`: `{raw}` is not numeric", var.name))
                    })?;
                    x.push(v);
                }
                Column::Categorical(x) => {
                    let code = match lookup[j].get(raw) {
                        Some(&k) => k,
                        None if fixed[j] => {
                            return Err(Error::UnknownLevel {
                                variable: var.name.clone(),
                                level: raw.to_string(),
                            })
                        }
                        None => {
                            let k = levels[j].len() as u32;
                            levels[j].push(raw.to_string());
                            lookup[j].insert(raw.to_string(), k);
                            k
                        }
                    };
                    x.push(code);
                }
            }
        }
        let raw = field(resp_pos, &schema.response)?;
        let n: u64 = raw.parse().map_err(|_| {
            Error::Data(format!(
                "row {row}, column `{}`: `{raw}` is not a non-negative integer",
                schema.response
            ))
        })?;
        claims.push(n);
        let raw = field(expo_pos, &schema.exposure)?;
        let v: f64 = raw.parse().map_err(|_| {
            Error::Data(format!("row {row}, column `{}`: `{raw}` is not numeric", schema.exposure))
        })?;
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::Data(format!(
                "row {row}, column `{}`: exposure {v} outside (0, 1]",
                schema.exposure
            )));
        }
        exposure.push(v);
    }

    let mut resolved = schema.clone();
    for (var, lv) in resolved.variables.iter_mut().zip(levels) {
        if let VariableKind::Categorical { levels } = &mut var.kind {
            if lv.is_empty() {
                return Err(Error::Data(format!("categorical `{}` has no observed levels", var.name)));
            }
            *levels = lv;
        }
    }
    Dataset::new(resolved, columns, claims, exposure)
}

/// Splits zero-claim and positive-claim rows independently so both parts keep
/// the zero/non-zero balance. Row order within each part follows the input.
pub fn stratified_split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for positive in [false, true] {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| (data.claims[i] > 0) == positive).collect();
        idx.shuffle(&mut rng);
        let k = (train_fraction * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}

/// The three synthetic designs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum Scenario {
    /// Poisson chessboard on (x1, x2) with six noise covariates and uniform exposure.
    Chessboard,
    /// Zero-inflated Poisson with constant zero mass `p0` and unit exposure.
    ZeroInflated { p0: f64 },
    /// Zero-inflated Poisson whose zero mass depends on exposure through `tau`.
    ExposureZeroInflated { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(flatten)]
    pub scenario: Scenario,
    pub n: usize,
    pub seed: u64,
}

const X1_LEVELS: [&str; 6] = ["-3", "-2", "-1", "1", "2", "3"];

/// Claim intensity of the scenario at (x1, x2).
pub fn scenario_intensity(scenario: &Scenario, x1: f64, x2: f64) -> f64 {
    let positive = x1 * x2 > 0.0;
    match scenario {
        Scenario::Chessboard => {
            if positive {
                7.0
            } else {
                1.0
            }
        }
        _ => {
            if positive {
                1.0
            } else {
                7.0
            }
        }
    }
}

/// Zero-mass probability of the exposure-dependent design.
pub fn exposure_zero_probability(exposure: f64, tau: f64) -> f64 {
    0.5 / (exposure.powf(tau) + 0.5)
}

/// A zero-inflated Poisson draw: zero with probability `p`, otherwise Poisson(`mean`).
pub fn sample_zip<R: Rng + ?Sized>(p: f64, mean: f64, rng: &mut R) -> u64 {
    if rng.random::<f64>() < p {
        return 0;
    }
    sample_poisson(mean, rng)
}

pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive Poisson mean");
    d.sample(rng) as u64
}

fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            return v;
        }
    }
}

pub fn simulate_scenario(config: &ScenarioConfig) -> Result<Dataset> {
    match config.scenario {
        Scenario::ZeroInflated { p0 } if !(p0 > 0.0 && p0 < 1.0) => {
            return Err(Error::Config(format!("p0 = {p0} outside (0, 1)")))
        }
        Scenario::ExposureZeroInflated { tau } if !(tau >= 0.0) => {
            return Err(Error::Config(format!("tau = {tau} must be non-negative")))
        }
        _ => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n;
    let mut claims = Vec::with_capacity(n);
    let mut exposure = Vec::with_capacity(n);
    match config.scenario {
        Scenario::Chessboard => {
            let mut cat = vec![Vec::with_capacity(n); 3];
            let mut num = vec![Vec::with_capacity(n); 5];
            for _ in 0..n {
                let x1 = rng.random_range(0..6u32);
                let x2: f64 = rng.sample(StandardNormal);
                let x3 = rng.random_range(-1.0..1.0);
                let x4 = rng.random_range(-1.0..1.0);
                let x5: f64 = rng.sample(StandardNormal);
                let x6: f64 = rng.sample(StandardNormal);
                let x7 = rng.random_range(0..6u32);
                let x8 = rng.random_range(0..6u32);
                let v = uniform_open(&mut rng);
                let x1v: f64 = X1_LEVELS[x1 as usize].parse().unwrap();
                let lambda = scenario_intensity(&config.scenario, x1v, x2);
                claims.push(sample_poisson(lambda * v, &mut rng));
                exposure.push(v);
                cat[0].push(x1);
                cat[1].push(x7);
                cat[2].push(x8);
                for (col, x) in num.iter_mut().zip([x2, x3, x4, x5, x6]) {
                    col.push(x);
                }
            }
            let mut num = num.into_iter();
            let mut cat = cat.into_iter();
            let mut columns = Vec::new();
            let mut variables = Vec::new();
            for k in 1..=8 {
                let name = format!("x{k}");
                if matches!(k, 1 | 7 | 8) {
                    variables.push(Variable::categorical(&name, &X1_LEVELS));
                    columns.push(Column::Categorical(cat.next().unwrap()));
                } else {
                    variables.push(Variable::numeric(&name));
                    columns.push(Column::Numeric(num.next().unwrap()));
                }
            }
            let schema = CovariateSchema::new("claims", "exposure", variables)?;
            Dataset::new(schema, columns, claims, exposure)
        }
        Scenario::ZeroInflated { .. } | Scenario::ExposureZeroInflated { .. } => {
            let mut x1s = Vec::with_capacity(n);
            let mut x2s = Vec::with_capacity(n);
            for _ in 0..n {
                let x1: f64 = rng.sample(StandardNormal);
                let x2: f64 = rng.sample(StandardNormal);
                let lambda = scenario_intensity(&config.scenario, x1, x2);
                let (p, v) = match config.scenario {
                    Scenario::ZeroInflated { p0 } => (p0, 1.0),
                    Scenario::ExposureZeroInflated { tau } => {
                        let v = uniform_open(&mut rng);
                        (exposure_zero_probability(v, tau), v)
                    }
                    Scenario::Chessboard => unreachable!(),
                };
                claims.push(sample_zip(p, lambda * v, &mut rng));
                exposure.push(v);
                x1s.push(x1);
                x2s.push(x2);
            }
            let schema = CovariateSchema::new(
                "claims",
                "exposure",
                vec![Variable::numeric("x1"), Variable::numeric("x2")],
            )?;
            Dataset::new(schema, vec![Column::Numeric(x1s), Column::Numeric(x2s)], claims, exposure)
        }
    }
}
