//! TOML run configuration. Every field is optional; command-line flags take
//! precedence over the file, and the file over built-in defaults.

use std::path::{Path, PathBuf};

use matchscore::de::DeConfig;
use matchscore::montecarlo::Profile;
use matchscore::{Model, SpecKind};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub market: MarketBlock,
    #[serde(default)]
    pub score: ScoreBlock,
    pub de: Option<DeBlock>,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub experiment: ExperimentBlock,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketBlock {
    pub n: Option<usize>,
    pub case: Option<SpecKind>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub kappa: Option<f64>,
    /// Observed market JSON (as written by `simulate`).
    pub market_file: Option<PathBuf>,
    pub outcome_file: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreBlock {
    pub model: Option<Model>,
    pub ir: Option<bool>,
    pub lambda: Option<f64>,
    pub ir_ignore_transfers: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeBlock {
    pub population: Option<usize>,
    pub max_generations: Option<usize>,
    pub differential_weight: Option<f64>,
    pub crossover_rate: Option<f64>,
    pub domain: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    /// `start:end:steps`
    pub beta1: Option<String>,
    pub beta2: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub profile: Option<Profile>,
    pub cases: Option<Vec<SpecKind>>,
    pub ns: Option<Vec<usize>>,
    pub beta1: Option<f64>,
    pub beta2: Option<Vec<f64>>,
    pub kappa: Option<f64>,
    pub models: Option<Vec<Model>>,
    pub ir: Option<Vec<bool>>,
    pub lambda: Option<f64>,
    pub replications: Option<usize>,
    pub lambdas: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
        toml::from_str(&text).map_err(|source| CliError::ConfigFile { path: path.to_owned(), source })
    }
}

/// Overlays optimizer knobs onto the defaults; flags win over the file.
pub fn merge_de(file: Option<&DeBlock>, flags: &DeConfigFlags) -> Result<DeConfig> {
    let d = DeConfig::default();
    let f = |pick: fn(&DeBlock) -> Option<f64>| file.and_then(pick);
    let cfg = DeConfig {
        population: flags.population.or(file.and_then(|b| b.population)).unwrap_or(d.population),
        max_generations: flags.generations.or(file.and_then(|b| b.max_generations)).unwrap_or(d.max_generations),
        differential_weight: flags
            .differential_weight
            .or(f(|b| b.differential_weight))
            .unwrap_or(d.differential_weight),
        crossover_rate: flags.crossover_rate.or(f(|b| b.crossover_rate)).unwrap_or(d.crossover_rate),
        domain: file.and_then(|b| b.domain.clone()).unwrap_or(d.domain),
        seed: 0,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Optimizer flags as parsed from the command line.
#[derive(Debug, Default, Clone)]
pub struct DeConfigFlags {
    pub population: Option<usize>,
    pub generations: Option<usize>,
    pub differential_weight: Option<f64>,
    pub crossover_rate: Option<f64>,
}
