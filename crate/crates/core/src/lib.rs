//! Bayesian CART for claim-frequency data.
//!
//! Trees are explored with a Metropolis-Hastings chain over grow, prune,
//! change and swap moves. Leaf models are Poisson, negative binomial (two
//! parameterizations) or zero-inflated Poisson (two exposure embeddings);
//! the latter two are handled by data augmentation. Candidate trees are
//! compared by DIC and scored with a set of portfolio-level metrics.

pub mod data;
pub mod error;
pub mod mcmc;
pub mod metrics;
pub mod family;
pub mod prior;
pub mod selection;
pub mod tree;

pub use data::{load_csv, read_csv, simulate_scenario, stratified_split, Covariate, CovariateSchema, Dataset, Scenario, ScenarioConfig, Variable, VariableKind};
pub use error::{Error, Result};
pub use family::{Family, GammaParams, Latents, NodeParams, Posterior, Priors};
pub use prior::{SplitCandidates, TreePriorConfig};
pub use metrics::{evaluate, EvalReport, StabilityConfig};
pub use mcmc::{run, ChainConfig, MoveKind, ProposalMix, RunOutput, Sampler, TraceRecord};
pub use tree::{DecisionRule, Edit, NodeId, NodeRecord, Tree};
