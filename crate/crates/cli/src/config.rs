//! TOML run configuration.

use std::path::PathBuf;

use pca_debias::Scenario;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    #[default]
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub tail_dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub a: f64,
    pub sigma0_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundConfig {
    /// Sample sizes; each scenario's own `n` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<f64>>,
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub quiet: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_curve: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lowerbound: Option<LowerBoundConfig>,
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

/// 1-based line of the `k`-th `[[scenario]]` header, if present.
fn scenario_line(text: &str, k: usize) -> Option<usize> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.trim_start().starts_with("[[scenario]]"))
        .nth(k)
        .map(|(i, _)| i + 1)
}

fn positive(values: &[f64], key: &str) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(CliError::Config(format!("lowerbound.{key} must not be empty")));
    }
    if let Some(x) = values.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return Err(CliError::Config(format!("lowerbound.{key} entries must be positive, got {x}")));
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))?;
    if cfg.scenarios.is_empty() {
        return Err(CliError::Config("config defines no [[scenario]] table".into()));
    }
    for (k, s) in cfg.scenarios.iter().enumerate() {
        s.validate().map_err(|e| {
            let at = scenario_line(text, k).map(|l| format!(" (line {l})")).unwrap_or_default();
            CliError::Config(format!("scenario[{k}]{at}: {e}"))
        })?;
    }
    if cfg.jobs == Some(0) {
        return Err(CliError::Config("jobs must be at least 1".into()));
    }
    if let Some(sw) = &cfg.bias_curve {
        if sw.tail_dims.is_empty() || sw.tail_dims.contains(&0) {
            return Err(CliError::Config("bias_curve.tail_dims must be non-empty and positive".into()));
        }
    }
    if let Some(lb) = &cfg.lowerbound {
        positive(&lb.c, "c")?;
        if let Some(n) = &lb.n {
            positive(n, "n")?;
        }
        if let Some(cl) = &lb.class {
            if !(cl.a > 0.0 && cl.sigma0_sq > 0.0) {
                return Err(CliError::Config("lowerbound.class needs a > 0 and sigma0_sq > 0".into()));
            }
        }
    }
    Ok(cfg)
}

#[cfg(test)]
pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("run config serializes")
}
