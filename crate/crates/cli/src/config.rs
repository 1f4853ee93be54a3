//! Experiment configuration files.
//!
//! A config file is TOML restricted to three flat sections:
//!
//! ```toml
//! [dgp]
//! model = "C1"          # C1 | C2 | C3
//! error = "scaled_t"    # normal | scaled_t | t | pareto | frechet | burr
//! n_train = 4096
//! n_test = 20000
//!
//! [experiment]
//! alphas = [0.1]
//! estimators = ["DES", "DRES"]
//! tau = "rule"          # rule | inf | <number>
//! tau_const = 1.0
//! reps = 20
//! seed = 2024
//!
//! [fit]
//! learning_rate = 1e-4
//! max_epochs = 200
//! ```
//!
//! Every key is optional; command-line flags override file values.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use deepes_core::experiment::Estimator;
use deepes_core::nn::{FitConfig, Truncation};
use deepes_core::simgen::{DistKind, ErrorDist, Model};
use deepes_core::tuning::TauRule;

/// Environment variable giving the default number of worker threads.
pub const PARALLELISM_ENV: &str = "DEEPES_PARALLELISM";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub dgp: DgpSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub fit: FitSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSection {
    pub model: Option<String>,
    pub error: Option<String>,
    pub df: Option<f64>,
    pub scale: Option<f64>,
    pub k: Option<f64>,
    pub s_min: Option<f64>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub standardized: Option<bool>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub noise_columns: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub alphas: Option<Vec<f64>>,
    pub estimators: Option<Vec<String>>,
    pub tau: Option<toml::Value>,
    pub tau_const: Option<f64>,
    pub tau_sweep: Option<Vec<f64>>,
    pub n_grid: Option<Vec<usize>>,
    pub reps: Option<usize>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub truncation: Option<toml::Value>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).transpose().map(Option::unwrap_or_default)
    }
}

pub fn parse_model(name: &str) -> Result<Model> {
    Ok(match name.trim().to_ascii_uppercase().as_str() {
        "C1" => Model::C1,
        "C2" => Model::C2,
        "C3" => Model::C3,
        other => bail!("unknown model {other:?}; expected C1, C2 or C3"),
    })
}

impl DgpSection {
    pub fn error_dist(&self) -> Result<ErrorDist> {
        let name = self.error.as_deref().unwrap_or("scaled_t").trim().to_ascii_lowercase();
        let need = |v: Option<f64>, key: &str| v.with_context(|| format!("error {name:?} needs `{key}`"));
        let kind = match name.as_str() {
            "normal" => DistKind::Normal,
            "scaled_t" if self.df.is_none() && self.scale.is_none() => return Ok(self.standardize(ErrorDist::scaled_t())),
            "scaled_t" | "t" => DistKind::ScaledT {
                df: need(self.df, "df")?,
                scale: self.scale.unwrap_or(1.0),
            },
            "pareto" => DistKind::Pareto {
                k: need(self.k, "k")?,
                s_min: self.s_min.unwrap_or(1.0),
            },
            "frechet" => DistKind::Frechet { k: need(self.k, "k")? },
            "burr" => DistKind::Burr {
                k1: need(self.k1, "k1")?,
                k2: need(self.k2, "k2")?,
            },
            other => bail!("unknown error distribution {other:?}"),
        };
        Ok(ErrorDist::new(kind, self.standardized.unwrap_or(true))?)
    }

    fn standardize(&self, d: ErrorDist) -> ErrorDist {
        ErrorDist {
            standardized: self.standardized.unwrap_or(d.standardized),
            ..d
        }
    }
}

/// Parses `rule`, `inf` or a positive number, combined with a rule multiplier.
pub fn parse_tau(spec: &str, tau_const: f64) -> Result<TauRule> {
    let rule = match spec.trim().to_ascii_lowercase().as_str() {
        "rule" => TauRule::Rule { tau_const },
        "inf" | "infinity" => TauRule::Infinite,
        v => TauRule::Fixed {
            value: v.parse().with_context(|| format!("tau must be rule, inf or a number, got {v:?}"))?,
        },
    };
    rule.validate()?;
    Ok(rule)
}

pub fn tau_value_to_string(v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Integer(i) => i.to_string(),
        other => bail!("tau must be a string or number, got {other}"),
    })
}

pub fn parse_truncation(spec: &str) -> Result<Truncation> {
    Ok(match spec.trim().to_ascii_lowercase().as_str() {
        "auto" => Truncation::Auto,
        "none" => Truncation::None,
        v => Truncation::Fixed(
            v.parse()
                .with_context(|| format!("truncation must be auto, none or a number, got {v:?}"))?,
        ),
    })
}

pub fn parse_estimators(names: &[String]) -> Result<Vec<Estimator>> {
    names.iter().map(|n| Ok(n.parse::<Estimator>()?)).collect()
}

impl FitSection {
    /// Applies file values on top of `base`.
    pub fn apply(&self, mut base: FitConfig) -> Result<FitConfig> {
        if let Some(v) = self.learning_rate {
            base.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            base.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            base.max_epochs = v;
        }
        if let Some(v) = self.validation_fraction {
            base.validation_fraction = v;
        }
        if let Some(v) = &self.hidden {
            base.hidden = v.clone();
        }
        if let Some(v) = &self.truncation {
            base.truncation = parse_truncation(&tau_value_to_string(v)?)?;
        }
        if let Some(v) = self.seed {
            base.seed = v;
        }
        Ok(base)
    }
}

/// Default parallelism from the environment, if set to a positive integer.
pub fn env_parallelism() -> Result<Option<usize>> {
    match std::env::var(PARALLELISM_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{PARALLELISM_ENV} must be a positive integer, got {v:?}"))?;
            if n == 0 {
                bail!("{PARALLELISM_ENV} must be at least 1");
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}
