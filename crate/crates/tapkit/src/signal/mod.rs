//! Deterministic DSP substrate: audio I/O, resampling, STFT, mixing,
//! channel simulation.

mod channel;
mod mix;
mod resample;
pub(crate) mod stft;
mod wav;

pub use channel::{apply_channel, ChannelProfile};
pub use mix::{mix_at_snr, snr_db_between, MixOutput};
pub use resample::resample;
pub use stft::{istft, istft_adjoint, stft, stft_adjoint, ComplexSpectrogram, FrameGrid};
pub use wav::{load_wav, load_wav_with, save_wav, WavLoadOptions};

use crate::error::{Result, TapError};

/// Mono sampled audio with an explicit sample rate.
///
/// Samples are kept in f64 for the training math; file I/O is PCM 16-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Waveform { samples, sample_rate_hz }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean squared amplitude over the full clip.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Checks the type invariants: non-empty, all samples finite.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(TapError::InvalidInput("empty waveform".into()));
        }
        if !self.samples.iter().all(|s| s.is_finite()) {
            return Err(TapError::NonFinite("waveform samples".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}
