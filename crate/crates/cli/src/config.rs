use std::path::{Path, PathBuf};

use djcm_core::channel::ChannelParams;
use djcm_core::constellation::build_spec;
use djcm_core::oracle::SourceKind;
use djcm_core::toy::TrainConfig;
use serde::Deserialize;

use crate::CliError;

/// Distribution-study settings.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub orders: Vec<u32>,
    pub snr_db: Vec<f64>,
    pub source: SourceKind,
    pub power: f64,
    /// Monte Carlo draws per chain and configuration.
    pub samples: usize,
    pub bins: usize,
    pub thresholds: Thresholds,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            orders: vec![64, 1024],
            snr_db: vec![10.0, 18.0],
            source: SourceKind::UniformClipped,
            power: 1.0,
            samples: 10_000_000,
            bins: 512,
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Allowed `|sum of level probabilities - 1|`.
    pub pmf_sum_tol: f64,
    /// Allowed Monte Carlo deviation in binomial standard errors.
    pub max_mc_sigma: f64,
    pub max_delta_inner: Option<f64>,
    pub max_delta_edge: Option<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            pmf_sum_tol: 1e-6,
            max_mc_sigma: 5.0,
            max_delta_inner: None,
            max_delta_edge: None,
        }
    }
}

/// Evaluation grid for training reports and sweeps.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub orders: Vec<u32>,
    pub snr_db: Vec<f64>,
    pub n_eval: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            orders: vec![4, 16, 64, 256, 1024],
            snr_db: vec![0.0, 4.0, 8.0, 13.0],
            n_eval: 1000,
            seed: 7,
        }
    }
}

/// Training settings; the seed comes from the top level of the config.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda: f64,
    pub phases: [usize; 3],
    pub learning_rates: [f64; 3],
    pub orders: Vec<u32>,
    pub snr_range: [f64; 2],
    pub eta1: f64,
    pub eta2: f64,
    pub power: f64,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            lambda: d.lambda,
            phases: d.phases,
            learning_rates: d.learning_rates,
            orders: d.orders,
            snr_range: d.snr_range,
            eta1: d.eta1,
            eta2: d.eta2,
            power: d.power,
            batch_size: d.batch_size,
        }
    }
}

impl TrainSection {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            phases: self.phases,
            learning_rates: self.learning_rates,
            orders: self.orders.clone(),
            snr_range: self.snr_range,
            eta1: self.eta1,
            eta2: self.eta2,
            power: self.power,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub oracle: OracleConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            oracle: OracleConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// 1-based line of the first occurrence of `"keys[last]"` after the
/// successive occurrences of the earlier keys.
fn anchor(text: &str, keys: &[&str]) -> usize {
    let mut from = 0;
    let mut found = 0;
    for key in keys {
        let quoted = format!("\"{key}\"");
        if let Some(pos) = text[from..].find(&quoted) {
            found = from + pos;
            from = found + quoted.len();
        }
    }
    text[..found].matches('\n').count() + 1
}

struct Checker<'a> {
    path: &'a Path,
    text: &'a str,
}

impl Checker<'_> {
    fn fail(&self, keys: &[&str], msg: impl std::fmt::Display) -> CliError {
        CliError::Config(format!("{}:{}: {msg}", self.path.display(), anchor(self.text, keys)))
    }

    fn orders(&self, keys: &[&str], orders: &[u32]) -> Result<(), CliError> {
        if orders.is_empty() {
            return Err(self.fail(keys, format!("{} must not be empty", keys.join("."))));
        }
        for m in orders {
            build_spec(*m, 1.0).map_err(|e| self.fail(keys, e))?;
        }
        Ok(())
    }

    fn snrs(&self, keys: &[&str], snrs: &[f64]) -> Result<(), CliError> {
        if snrs.is_empty() {
            return Err(self.fail(keys, format!("{} must not be empty", keys.join("."))));
        }
        for s in snrs {
            ChannelParams::awgn(*s, 1.0).map_err(|e| self.fail(keys, e))?;
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn parse(path: &Path, text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
        })?;
        let c = Checker { path, text };
        c.orders(&["oracle", "orders"], &cfg.oracle.orders)?;
        c.snrs(&["oracle", "snr_db"], &cfg.oracle.snr_db)?;
        if !(cfg.oracle.power.is_finite() && cfg.oracle.power > 0.0) {
            return Err(c.fail(&["oracle", "power"], "power must be finite and > 0"));
        }
        if cfg.oracle.samples < 10_000 {
            return Err(c.fail(&["oracle", "samples"], "samples must be >= 10000"));
        }
        if cfg.oracle.bins < 32 {
            return Err(c.fail(&["oracle", "bins"], "bins must be >= 32"));
        }
        cfg.train_config().validate().map_err(|e| {
            let key = match &e {
                djcm_core::Error::InvalidOrder(_) => "orders",
                djcm_core::Error::InvalidPower(_) => "power",
                djcm_core::Error::Config(m) => ["lambda", "phases", "learning_rates", "snr_range", "eta1", "batch_size"]
                    .into_iter()
                    .find(|k| m.contains(k))
                    .unwrap_or("train"),
                _ => "train",
            };
            c.fail(&["train", key], e)
        })?;
        c.orders(&["eval", "orders"], &cfg.eval.orders)?;
        c.snrs(&["eval", "snr_db"], &cfg.eval.snr_db)?;
        if cfg.eval.n_eval == 0 {
            return Err(c.fail(&["eval", "n_eval"], "n_eval must be >= 1"));
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.with_seed(self.seed)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(path, &text)
    }
}
