//! Run configuration: one TOML file, overridden field by field by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stcar::confounding::FilterSpec;
use stcar::inference::{FitOptions, ModelSpec};
use stcar::pc_prior::PcTarget;
use stcar::simulate::SimConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory.
    pub output: PathBuf,
    pub data: DataPaths,
    pub model: ModelSpec,
    pub grid: FitOptions,
    /// Spatial+ filter applied before fitting.
    pub filter: Option<FilterSpec>,
    pub waic: WaicConfig,
    pub compare: CompareConfig,
    pub simulate: SimConfig,
    pub prior: PriorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output: PathBuf::from("stcar-out"),
            data: DataPaths::default(),
            model: ModelSpec::default(),
            grid: FitOptions::default(),
            filter: None,
            waic: WaicConfig::default(),
            compare: CompareConfig::default(),
            simulate: SimConfig::default(),
            prior: PriorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub counts: Option<PathBuf>,
    /// Area-level (time-constant) covariates.
    pub area: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaicConfig {
    /// Posterior draws; zero skips WAIC.
    pub draws: usize,
}

impl Default for WaicConfig {
    fn default() -> Self {
        Self { draws: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Number of eigenvectors removed in each Spatial+ column.
    pub k_values: Vec<usize>,
    /// Covariates to filter; empty means every covariate in the model.
    pub filter_covariates: Vec<String>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            k_values: vec![15, 20, 25],
            filter_covariates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub target: PcTarget,
    pub u: f64,
    pub alpha: f64,
    /// Areas, when no adjacency is given (only the AR(1) target uses it).
    pub n: usize,
    pub years: usize,
    pub points: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            target: PcTarget::Sigma,
            u: 0.5f64.sqrt(),
            alpha: 0.9,
            n: 100,
            years: 4,
            points: 200,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| CliError::ConfigParse {
            path: path.to_path_buf(),
            source: Box::new(source),
        })
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))
    }
}

/// Parses `U,ALPHA`.
pub fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected U,ALPHA, got {s:?}"))?;
    let u = a.trim().parse::<f64>().map_err(|e| format!("U in {s:?}: {e}"))?;
    let alpha = b.trim().parse::<f64>().map_err(|e| format!("ALPHA in {s:?}: {e}"))?;
    Ok((u, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 7
            [model]
            kind = "LCAR"
            xi_prior = { type = "uniform" }
            [filter]
            covariates = ["x1"]
            k = 20
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.kind, stcar::structures::StructureKind::Lcar);
        assert_eq!(cfg.filter.unwrap().k, 20);
        assert_eq!(cfg.grid, FitOptions::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 3").is_err());
    }

    #[test]
    fn pairs() {
        assert_eq!(parse_pair("0.5, 0.9"), Ok((0.5, 0.9)));
        assert!(parse_pair("0.5").is_err());
    }
}
