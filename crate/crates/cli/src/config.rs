//! TOML configuration file. Every field is optional; command-line flags
//! override whatever the file sets.
//!
//! ```toml
//! schema_version = 1
//!
//! [dgp]
//! model = "loglinear"
//! t = 1000
//! sigma = 1.0
//! seed = 42
//!
//! [solver]
//! max_iterations = 3000
//! tol_stationarity = 1e-6
//!
//! [study]
//! estimator = "constrained"
//! sample_sizes = [100, 200]
//! replications = 200
//! ```

use std::path::Path;

use conduct_core::{InstrumentSpec, ParameterVector, SolverConfig, StartPoint};
use serde::Deserialize;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub dgp: DgpSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub study: StudySection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSection {
    pub model: Option<String>,
    pub t: Option<usize>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    pub with_errors: Option<bool>,
    pub truths: Option<ParameterVector>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub max_iterations: Option<usize>,
    pub tol_stationarity: Option<f64>,
    pub tol_constraint: Option<f64>,
    pub strict_slack: Option<f64>,
    /// Explicit start point; the default starts from the truths.
    pub start: Option<ParameterVector>,
    pub instruments: Option<InstrumentSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub preset: Option<String>,
    pub model: Option<String>,
    pub estimator: Option<String>,
    pub sample_sizes: Option<Vec<usize>>,
    pub sigma: Option<f64>,
    pub replications: Option<usize>,
    pub base_seed: Option<u64>,
    pub condition_on_convergence: Option<bool>,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: CliConfig = toml::from_str(text).map_err(|e| CliError::parse(anyhow::anyhow!("config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::parse(anyhow::anyhow!(
                "config: unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(CliConfig { schema_version: SCHEMA_VERSION, ..Default::default() }),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::io(anyhow::anyhow!("reading {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }
}

impl SolverSection {
    pub fn apply(&self, mut cfg: SolverConfig) -> SolverConfig {
        if let Some(v) = self.max_iterations {
            cfg.max_iterations = v;
        }
        if let Some(v) = self.tol_stationarity {
            cfg.tol_stationarity = v;
        }
        if let Some(v) = self.tol_constraint {
            cfg.tol_constraint = v;
        }
        if let Some(v) = self.strict_slack {
            cfg.strict_slack = v;
        }
        if let Some(p) = self.start {
            cfg.start = StartPoint::Explicit(p);
        }
        if let Some(i) = &self.instruments {
            cfg.instruments = i.clone();
        }
        cfg
    }
}
