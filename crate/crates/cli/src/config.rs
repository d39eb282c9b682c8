use std::fs;
use std::path::{Path, PathBuf};

use cfmi_core::diffusion::{BETA_MAX, BETA_MIN, DEFAULT_STEPS};
use cfmi_core::metrics::MetricConfig;
use cfmi_core::synth2d::Demo2dConfig;
use cfmi_core::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Mcar,
    Mar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cfmi,
    Csdi,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cfmi => "cfmi",
            Method::Csdi => "csdi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cfmi" => Some(Method::Cfmi),
            "csdi" => Some(Method::Csdi),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissingnessSpec {
    pub mechanism: Mechanism,
    pub rate: f64,
    pub seed: u64,
}

impl Default for MissingnessSpec {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::Mcar,
            rate: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputationSpec {
    pub copies: usize,
    /// Euler steps for the flow model; the diffusion model uses its schedule.
    pub n_steps: usize,
    pub seed: u64,
}

impl Default for ImputationSpec {
    fn default() -> Self {
        Self {
            copies: 5,
            n_steps: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSpec {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for DiffusionSpec {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            beta_min: BETA_MIN,
            beta_max: BETA_MAX,
        }
    }
}

/// Everything a run depends on. Every field has a default; the resolved
/// document is written to `<out>/config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub missingness: MissingnessSpec,
    pub method: Method,
    pub train: TrainConfig,
    pub diffusion: DiffusionSpec,
    pub imputation: ImputationSpec,
    pub metrics: MetricConfig,
    pub demo2d: Demo2dConfig,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            missingness: MissingnessSpec::default(),
            method: Method::Cfmi,
            train: TrainConfig::short(),
            diffusion: DiffusionSpec::default(),
            imputation: ImputationSpec::default(),
            metrics: MetricConfig::default(),
            demo2d: Demo2dConfig::default(),
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            fs::read_to_string(crate::require(path)?).map_err(|e| CliError::Other(e.into()))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn echo(&self, dir: &Path) -> anyhow::Result<()> {
        fs::write(
            dir.join("config.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}
