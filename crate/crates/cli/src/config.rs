//! Run configuration and the reproducibility manifest.
//!
//! Environment tables are strict: every field must be present, so a config
//! file cannot silently inherit a different problem from the defaults.
//! Training tables fall back to defaults field by field.

use std::path::{Path, PathBuf};

use log::LevelFilter;
use serde::{Deserialize, Serialize};
use stopbed::env::convdiff::ConvDiffConfig;
use stopbed::env::lingauss::LinGaussConfig;
use stopbed::mdp::CostFn;
use stopbed::train::TrainConfig;

use crate::error::{CliError, CliResult};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("STOPBED_GIT_DESCRIBE"), ")");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Lingauss(LinGaussConfig),
    Convdiff(ConvDiffConfig),
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Lingauss(_) => "lingauss",
            EnvConfig::Convdiff(_) => "convdiff",
        }
    }

    pub fn default_for(name: &str) -> CliResult<Self> {
        match name {
            "lingauss" => Ok(EnvConfig::Lingauss(LinGaussConfig::default())),
            "convdiff" => Ok(EnvConfig::Convdiff(ConvDiffConfig::default())),
            other => Err(CliError::Validation(format!(
                "env must be lingauss or convdiff, got {other}"
            ))),
        }
    }

    pub fn cost(&self) -> &CostFn {
        match self {
            EnvConfig::Lingauss(c) => &c.cost,
            EnvConfig::Convdiff(c) => &c.cost,
        }
    }

    pub fn set_cost(&mut self, cost: CostFn) {
        match self {
            EnvConfig::Lingauss(c) => c.cost = cost,
            EnvConfig::Convdiff(c) => c.cost = cost,
        }
    }

    pub fn set_horizon(&mut self, n: usize) {
        match self {
            EnvConfig::Lingauss(c) => c.horizon = n,
            EnvConfig::Convdiff(c) => c.horizon = n,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let r = match self {
            EnvConfig::Lingauss(c) => c.validate(),
            EnvConfig::Convdiff(c) => c.validate(),
        };
        r.map_err(|e| CliError::Validation(format!("env: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_cache: Option<PathBuf>,
    #[serde(default = "default_verbosity")]
    pub verbosity: String,
    pub env: EnvConfig,
    #[serde(default = "TrainConfig::desk")]
    pub train: TrainConfig,
}

fn default_verbosity() -> String {
    "info".into()
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("runs/default"),
            field_cache: None,
            verbosity: default_verbosity(),
            env: EnvConfig::Lingauss(LinGaussConfig::default()),
            train: TrainConfig::desk(),
        }
    }
}

/// Written next to every run; loading it as a config reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(config: &RunConfig) -> Self {
        Manifest {
            version: VERSION.into(),
            seed: config.train.seed,
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Validation(format!("cannot serialise manifest: {e}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.env.validate()?;
        self.train
            .validate()
            .map_err(|e| CliError::Validation(format!("train: {e}")))?;
        self.log_level()?;
        Ok(())
    }

    pub fn log_level(&self) -> CliResult<LevelFilter> {
        self.verbosity
            .parse()
            .map_err(|_| CliError::Validation(format!("unknown verbosity {:?}", self.verbosity)))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Validation(format!("cannot serialise config: {e}")))
    }

    /// Parses a config file or a run manifest.
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        if table.contains_key("config") && table.contains_key("version") {
            let m: Manifest = table
                .try_into()
                .map_err(|e: toml::de::Error| CliError::Validation(e.to_string()))?;
            Ok(m.config)
        } else {
            table
                .try_into()
                .map_err(|e: toml::de::Error| CliError::Validation(e.to_string()))
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
