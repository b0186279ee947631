//! Command-line surface. Flags override config-file values; anything
//! left unset falls back to built-in defaults.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "tapkit", version)]
#[command(about = "Speech enhancement toolkit around temporal acoustic parameters")]
pub struct Cli {
    /// TOML config file; CLI flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Emit one JSON summary object on stdout instead of text
    #[arg(long, global = true)]
    pub json: bool,

    /// Worker threads for per-clip stages (results are identical for any value)
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Synthesize a noisy/clean corpus with a manifest
    Synth(SynthArgs),
    /// Extract acoustic-parameter trajectories for manifest clips
    Extract(ExtractArgs),
    /// Train the acoustic-parameter estimator
    TrainTap(TrainTapArgs),
    /// Train the mask enhancer with the joint objective
    TrainEnhancer(TrainEnhancerArgs),
    /// Run a trained enhancer over clips
    Enhance(EnhanceArgs),
    /// Score a system against clean references
    Eval(EvalArgs),
    /// Assemble evaluation records into a report
    Report(ReportArgs),
    /// Finite-difference checks of every analytic gradient
    Gradcheck(GradcheckArgs),
}

#[derive(clap::Args)]
pub struct SynthArgs {
    /// Directory of clean source WAVs
    #[arg(long)]
    pub clean_dir: PathBuf,
    /// Directory of noise WAVs
    #[arg(long)]
    pub noise_dir: PathBuf,
    /// Run directory; receives wavs/, manifest.jsonl, config.lock
    #[arg(long)]
    pub out: PathBuf,
    /// Number of mixture pairs
    #[arg(long)]
    pub count: Option<usize>,
    /// Clip length in seconds
    #[arg(long)]
    pub duration_s: Option<f64>,
    /// Lower edge of the uniform SNR range, dB
    #[arg(long)]
    pub snr_lo: Option<f64>,
    /// Upper edge of the uniform SNR range, dB
    #[arg(long)]
    pub snr_hi: Option<f64>,
    /// Channel profile applied to the noisy side (phone | cloud)
    #[arg(long)]
    pub channel: Option<String>,
    /// Fraction of entries labeled test
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(clap::Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory; receives taps/, stats.json, config.lock
    #[arg(long)]
    pub out: PathBuf,
    /// Which side of each pair to extract: clean | noisy
    #[arg(long, default_value = "clean")]
    pub which: String,
    /// Manifest split to process: train | test | all
    #[arg(long, default_value = "all")]
    pub split: String,
}

#[derive(clap::Args)]
pub struct TrainTapArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run directory; receives estimator.ckpt, history.csv, config.lock
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub bptt_chunk: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(clap::Args)]
pub struct TrainEnhancerArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Trained estimator checkpoint providing the acoustic loss
    #[arg(long)]
    pub estimator: PathBuf,
    /// Run directory; receives enhancer.ckpt, history.csv, config.lock
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub bptt_chunk: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Weight of the acoustic term in the joint objective
    #[arg(long)]
    pub lambda_tap: Option<f64>,
    /// l1_waveform | l2_spectral_magnitude
    #[arg(long)]
    pub base_loss: Option<String>,
    /// estimator_on_clean | extractor_on_clean
    #[arg(long)]
    pub tap_target: Option<String>,
}

#[derive(clap::Args)]
pub struct EnhanceArgs {
    /// Trained enhancer checkpoint
    #[arg(long)]
    pub enhancer: PathBuf,
    /// Single WAV to enhance (alternative to --manifest)
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Manifest whose noisy clips to enhance
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Manifest split to process: train | test | all
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Run directory; receives enhanced/, config.lock
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Estimator checkpoint; its stats define the standardized MAE space
    #[arg(long)]
    pub estimator: PathBuf,
    /// Run directory; receives eval.jsonl, config.lock
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest split to score: train | test | all
    #[arg(long, default_value = "test")]
    pub split: String,
    /// System label; 'source' scores the noisy clips themselves
    #[arg(long)]
    pub system: Option<String>,
    /// Directory of {clip_id}.wav system outputs (non-source systems)
    #[arg(long)]
    pub enhanced_dir: Option<PathBuf>,
    #[arg(long)]
    pub platform: Option<String>,
    #[arg(long)]
    pub receiver: Option<String>,
    /// low | auto
    #[arg(long)]
    pub denoise_mode: Option<String>,
    /// CSV of externally computed PESQ scores: clip_id,score
    #[arg(long)]
    pub pesq_csv: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct ReportArgs {
    /// Evaluation record files (JSONL); may repeat
    #[arg(long, required = true, num_args = 1..)]
    pub records: Vec<PathBuf>,
    /// Run directory; receives report.txt, report.json, config.lock
    #[arg(long)]
    pub out: PathBuf,
    /// Baseline system for the improvement table
    #[arg(long, default_value = "source")]
    pub baseline: String,
    /// Comparison system (defaults to the only non-baseline system)
    #[arg(long)]
    pub system: Option<String>,
}

#[derive(clap::Args)]
pub struct GradcheckArgs {
    /// all | dense | gru | mae | chain
    #[arg(long, default_value = "all")]
    pub scope: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
