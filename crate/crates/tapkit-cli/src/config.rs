//! Layered run configuration: built-in defaults, then an optional TOML
//! file, then command-line flags, strongest last. The fully resolved
//! values are echoed into each run directory as `config.lock` so a run
//! can be reproduced from its artifacts alone.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Top-level config file. Every section is optional; unknown keys
/// anywhere are rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub synth: Option<SynthSection>,
    pub train_tap: Option<TrainSection>,
    pub train_enhancer: Option<EnhancerSection>,
    pub eval: Option<EvalSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub count: Option<usize>,
    pub duration_s: Option<f64>,
    pub snr_lo_db: Option<f64>,
    pub snr_hi_db: Option<f64>,
    pub seed: Option<u64>,
    pub channel: Option<String>,
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub bptt_chunk: Option<usize>,
    pub seed: Option<u64>,
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhancerSection {
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub bptt_chunk: Option<usize>,
    pub seed: Option<u64>,
    pub val_fraction: Option<f64>,
    pub lambda_tap: Option<f64>,
    pub base_loss: Option<String>,
    pub tap_target: Option<String>,
}

impl EnhancerSection {
    /// The training subset, for shared resolution with `train_tap`.
    pub fn train(&self) -> TrainSection {
        TrainSection {
            hidden: self.hidden,
            layers: self.layers,
            lr: self.lr,
            epochs: self.epochs,
            batch: self.batch,
            bptt_chunk: self.bptt_chunk,
            seed: self.seed,
            val_fraction: self.val_fraction,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub platform: Option<String>,
    pub receiver: Option<String>,
    pub denoise_mode: Option<String>,
    pub system: Option<String>,
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// First Some wins: CLI flag, then config file, then the default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Resolved hyperparameters shared by both training commands.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedTrain {
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub bptt_chunk: usize,
    pub seed: u64,
    pub val_fraction: f64,
}

/// Write the resolved config into the run directory.
pub fn write_lock<T: Serialize>(out_dir: &Path, resolved: &T) -> Result<()> {
    let text = toml::to_string_pretty(resolved).context("serializing config.lock")?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.lock"), text)?;
    Ok(())
}
