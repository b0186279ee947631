//! SNR-controlled mixing of clean speech with noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Waveform;
use crate::error::{Result, TapError};

/// Result of [`mix_at_snr`]. When the raw mixture peaks above 1.0 both
/// the mixture and the clean reference are rescaled by the same factor,
/// so the pair stays consistent for supervised training.
#[derive(Clone, Debug)]
pub struct MixOutput {
    pub noisy: Waveform,
    pub clean: Waveform,
    /// Gain applied to the noise before summing.
    pub noise_gain: f64,
    /// Joint rescale applied to both outputs (1.0 when no clipping risk).
    pub rescale: f64,
}

/// Mean-power SNR between two signals, in dB.
pub fn snr_db_between(signal: &Waveform, noise: &Waveform) -> Result<f64> {
    let ps = signal.power();
    let pn = noise.power();
    if ps <= 0.0 {
        return Err(TapError::ZeroPower("signal".into()));
    }
    if pn <= 0.0 {
        return Err(TapError::ZeroPower("noise".into()));
    }
    Ok(10.0 * (ps / pn).log10())
}

/// Mix `noise` into `clean` at `snr_db`, drawing the noise alignment from
/// `offset_seed`. Shorter noise is tiled cyclically from a seeded start
/// offset; longer noise is cropped at a seeded offset.
pub fn mix_at_snr(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    offset_seed: u64,
) -> Result<MixOutput> {
    clean.validate()?;
    noise.validate()?;
    if clean.sample_rate_hz != noise.sample_rate_hz {
        return Err(TapError::InvalidInput(format!(
            "sample rate mismatch: {} vs {}",
            clean.sample_rate_hz, noise.sample_rate_hz
        )));
    }
    if clean.is_empty() {
        return Err(TapError::InvalidInput("empty clean signal".into()));
    }
    if noise.is_empty() {
        return Err(TapError::InvalidInput("empty noise signal".into()));
    }
    if !snr_db.is_finite() {
        return Err(TapError::InvalidInput("snr must be finite".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(offset_seed);
    let n = clean.len();
    let m = noise.len();
    let aligned: Vec<f64> = if m >= n {
        let offset = rng.gen_range(0..=(m - n));
        noise.samples[offset..offset + n].to_vec()
    } else {
        let offset = rng.gen_range(0..m);
        (0..n).map(|i| noise.samples[(offset + i) % m]).collect()
    };

    let p_clean = clean.power();
    let p_noise = aligned.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if p_clean <= 0.0 {
        return Err(TapError::ZeroPower("clean".into()));
    }
    if p_noise <= 0.0 {
        return Err(TapError::ZeroPower("noise".into()));
    }

    let noise_gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut noisy: Vec<f64> = clean
        .samples
        .iter()
        .zip(aligned.iter())
        .map(|(c, v)| c + noise_gain * v)
        .collect();

    let peak = noisy.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let rescale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    let mut clean_out = clean.samples.clone();
    if rescale != 1.0 {
        for v in noisy.iter_mut() {
            *v *= rescale;
        }
        for v in clean_out.iter_mut() {
            *v *= rescale;
        }
    }

    Ok(MixOutput {
        noisy: Waveform::new(noisy, clean.sample_rate_hz),
        clean: Waveform::new(clean_out, clean.sample_rate_hz),
        noise_gain,
        rescale,
    })
}
