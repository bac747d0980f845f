//! JSON config files. Every file carries a `schema_version` and unknown
//! keys are rejected so typos fail fast.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use fedunroll::error::Result as CoreResult;
use fedunroll::graph::{make_erdos_renyi, make_regular, make_star, Graph};
use fedunroll::train::TrainConfig;
use fedunroll::unroll::Mode;

use crate::{config_err, CliResult};

pub const SCHEMA_VERSION: u64 = 1;

/// Parse a config file, checking `schema_version` before the shape.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| config_err(format!("config {} is not valid JSON: {e}", path.display())))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(config_err(format!(
                "config {} has schema_version {v}, expected {SCHEMA_VERSION}",
                path.display()
            )))
        }
        None => {
            return Err(config_err(format!(
                "config {} is missing schema_version",
                path.display()
            )))
        }
    }
    serde_json::from_value(value)
        .map_err(|e| config_err(format!("config {}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub schema_version: u64,
    pub n: usize,
    pub p: usize,
    pub c: usize,
    pub m_train: usize,
    pub m_test: usize,
    pub q_train: usize,
    pub q_test: usize,
    pub alpha: f64,
    pub class_sep: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Regular,
    ErdosRenyi,
    Star,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub kind: GraphKind,
    #[serde(default)]
    pub degree: usize,
    #[serde(default)]
    pub edge_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GraphConfig {
    /// Build the topology over `n_agents` data-holding agents; a star
    /// adds the server as node 0.
    pub fn build(&self, n_agents: usize) -> CoreResult<Graph> {
        match self.kind {
            GraphKind::Regular => make_regular(n_agents, self.degree, self.seed),
            GraphKind::ErdosRenyi => make_erdos_renyi(n_agents, self.edge_prob, self.seed),
            GraphKind::Star => make_star(n_agents + 1),
        }
    }
}

fn default_mode() -> Mode {
    Mode::Decentralized
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_adam_eps() -> f64 {
    1e-8
}

fn default_true() -> bool {
    true
}

fn default_w0_std() -> f64 {
    0.3
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    pub schema_version: u64,
    pub l: usize,
    pub k: usize,
    pub epochs: usize,
    pub mu_theta: f64,
    pub mu_lambda: f64,
    pub epsilon: f64,
    pub b_count: usize,
    pub seed: u64,
    pub graph: GraphConfig,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_betas")]
    pub adam_betas: (f64, f64),
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_true")]
    pub constraints: bool,
    #[serde(default)]
    pub w0_mean: f64,
    #[serde(default = "default_w0_std")]
    pub w0_std: f64,
    #[serde(default = "default_one")]
    pub meta_batch: usize,
    #[serde(default = "default_true")]
    pub use_adam: bool,
}

impl TrainFileConfig {
    pub fn to_core(&self) -> TrainConfig {
        TrainConfig {
            l: self.l,
            k: self.k,
            epochs: self.epochs,
            mu_theta: self.mu_theta,
            mu_lambda: self.mu_lambda,
            epsilon: self.epsilon,
            b_count: self.b_count,
            seed: self.seed,
            mode: self.mode,
            adam_betas: self.adam_betas,
            adam_eps: self.adam_eps,
            constraints_enabled: self.constraints,
            w0_mean: self.w0_mean,
            w0_std: self.w0_std,
            meta_batch: self.meta_batch,
            use_adam: self.use_adam,
        }
    }
}

fn default_momentum() -> f64 {
    0.9
}

fn default_local_steps() -> usize {
    6
}

fn default_participants() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineFileConfig {
    pub schema_version: u64,
    pub beta: f64,
    pub t_rounds: usize,
    pub seed: u64,
    /// 0 selects the full local batch.
    #[serde(default)]
    pub batch_count: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    #[serde(default = "default_participants")]
    pub participants: usize,
    /// Required for the decentralized methods, ignored by fedavg-star.
    #[serde(default)]
    pub graph: Option<GraphConfig>,
}
