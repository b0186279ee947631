//! Speech-enhancement research toolkit built around temporal acoustic
//! parameters (TAPs).
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`signal`] — WAV I/O, resampling, STFT/ISTFT (plus exact adjoints),
//!   SNR-controlled mixing, and a VoIP-style channel degrader.
//! * [`features`] — a reference frame-level acoustic parameter extractor
//!   (25 eGeMAPS-style low-level descriptors) and corpus statistics.
//! * [`neural`] — a minimal differentiable kernel: dense layer, GRU,
//!   BPTT, MAE loss, Adam, finite-difference gradient checking.
//! * [`estimator`] — the trainable recurrent TAP estimator mapping a
//!   complex spectrogram to the 25-parameter matrix.
//! * [`enhancer`] — TAPLoss with an exact waveform gradient through the
//!   frozen estimator, and a toy spectral-mask enhancer trained with a
//!   joint (base + acoustic) objective.
//! * [`metrics`] — STOI, per-parameter acoustic MAE, improvement tables,
//!   and table-shaped report assembly.
//! * [`corpus`] — manifest-driven noisy-corpus synthesis and splits.
//! * [`siggen`] — seeded synthetic test signals (tones, noise,
//!   speech-like harmonics) used by tests and desk experiments.
//!
//! All randomness is seeded and passed explicitly; repeated runs are
//! byte-identical.

pub mod corpus;
pub mod enhancer;
pub mod error;
pub mod estimator;
pub mod features;
pub mod mat;
pub mod metrics;
pub mod neural;
pub mod siggen;
pub mod signal;

pub use error::{Result, TapError};
pub use mat::Mat;

/// Canonical sample rate for the whole pipeline. Inputs at other rates
/// are resampled on ingest.
pub const SAMPLE_RATE: u32 = 16_000;

/// STFT size; fixes the one-sided bin count at 257.
pub const N_FFT: usize = 512;

/// STFT hop length.
pub const HOP: usize = 256;

/// One-sided spectrum bins: `N_FFT / 2 + 1`.
pub const N_BINS: usize = N_FFT / 2 + 1;

/// Number of acoustic parameters per frame.
pub const N_PARAMS: usize = 25;
