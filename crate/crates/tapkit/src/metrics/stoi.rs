//! Short-time objective intelligibility.
//!
//! Follows the published reference algorithm: both signals resampled to
//! 10 kHz, silent frames removed by the clean signal's energy profile,
//! a 256/128 Hann time-frequency decomposition zero-padded to 512 bins,
//! 15 one-third-octave bands from 150 Hz, and clipped correlation
//! coefficients over sliding 30-frame (384 ms) segments.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Result, TapError};
use crate::signal::{resample, Waveform};

const FS: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = 128;
const NFFT: usize = 512;
const N_BANDS: usize = 15;
const FIRST_CF_HZ: f64 = 150.0;
const SEG: usize = 30;
/// Silent frames sit more than this far below the loudest clean frame.
const DYN_RANGE_DB: f64 = 40.0;
/// -15 dB signal-to-distortion bound: clip at x * (1 + 10^(15/20)).
const CLIP_FACTOR: f64 = 6.623413251903491;

const EPS: f64 = 1e-20;

/// Symmetric Hann with nonzero endpoints, as the reference uses.
fn hanning(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let x = std::f64::consts::PI * 2.0 * (k + 1) as f64 / (n + 1) as f64;
            0.5 * (1.0 - x.cos())
        })
        .collect()
}

/// Keep only frames within `DYN_RANGE_DB` of the loudest clean frame and
/// overlap-add both signals back together with the same mask.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() < FRAME {
        return Err(TapError::SignalTooShort { need: FRAME, got: x.len() });
    }
    let w = hanning(FRAME);
    let starts: Vec<usize> = (0..=(x.len() - FRAME)).step_by(HOP).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..FRAME).map(|i| (x[s + i] * w[i]).powi(2)).sum();
            10.0 * (e / FRAME as f64).log10()
        })
        .collect();
    let max_e = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max_e.is_finite() {
        return Err(TapError::ZeroPower("clean signal is silent".into()));
    }
    let kept: Vec<usize> = starts
        .iter()
        .zip(energies.iter())
        .filter(|(_, &e)| e - max_e + DYN_RANGE_DB > 0.0)
        .map(|(&s, _)| s)
        .collect();
    let out_len = (kept.len() - 1) * HOP + FRAME;
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (c, &s) in kept.iter().enumerate() {
        let o = c * HOP;
        for i in 0..FRAME {
            xs[o + i] += x[s + i] * w[i];
            ys[o + i] += y[s + i] * w[i];
        }
    }
    Ok((xs, ys))
}

/// One-third-octave band edges snapped to FFT bins; returns per-band
/// half-open bin ranges.
fn third_octave_bands() -> [(usize, usize); N_BANDS] {
    let bin_hz = FS as f64 / NFFT as f64;
    let snap = |hz: f64| -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for b in 0..=(NFFT / 2) {
            let d = (b as f64 * bin_hz - hz).abs();
            if d < best_d {
                best_d = d;
                best = b;
            }
        }
        best
    };
    let mut bands = [(0usize, 0usize); N_BANDS];
    for (k, band) in bands.iter_mut().enumerate() {
        let lo = FIRST_CF_HZ * 2f64.powf((2.0 * k as f64 - 1.0) / 6.0);
        let hi = FIRST_CF_HZ * 2f64.powf((2.0 * k as f64 + 1.0) / 6.0);
        *band = (snap(lo), snap(hi));
    }
    bands
}

/// Band-magnitude matrix: frames x bands, each entry the L2 norm of the
/// FFT magnitudes inside the band.
fn band_spectrogram(sig: &[f64]) -> Vec<[f64; N_BANDS]> {
    let w = hanning(FRAME);
    let bands = third_octave_bands();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(NFFT);
    let mut out = Vec::new();
    let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
    let mut s = 0;
    while s + FRAME <= sig.len() {
        for i in 0..FRAME {
            buf[i] = Complex64::new(sig[s + i] * w[i], 0.0);
        }
        for v in buf[FRAME..].iter_mut() {
            *v = Complex64::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        let mut row = [0.0; N_BANDS];
        for (k, &(lo, hi)) in bands.iter().enumerate() {
            let e: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            row[k] = e.sqrt();
        }
        out.push(row);
        s += HOP;
    }
    out
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let xa = a - mx;
        let yb = b - my;
        num += xa * yb;
        dx += xa * xa;
        dy += yb * yb;
    }
    num / (dx * dy).sqrt().max(EPS)
}

/// Mean clipped correlation between a segment of the clean band envelope
/// and the gain-normalized processed envelope.
fn segment_score(xs: &[[f64; N_BANDS]], ys: &[[f64; N_BANDS]]) -> f64 {
    let j = xs.len();
    let mut total = 0.0;
    for band in 0..N_BANDS {
        let x: Vec<f64> = xs.iter().map(|r| r[band]).collect();
        let y: Vec<f64> = ys.iter().map(|r| r[band]).collect();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ey: f64 = y.iter().map(|v| v * v).sum();
        let alpha = (ex / (ey + EPS)).sqrt();
        let clipped: Vec<f64> = (0..j)
            .map(|i| f64::min(alpha * y[i], x[i] * (1.0 + CLIP_FACTOR)))
            .collect();
        total += correlation(&x, &clipped);
    }
    total / N_BANDS as f64
}

/// STOI of `processed` against `clean`. Inputs must share length and
/// sample rate; any rate is accepted and resampled internally.
pub fn stoi(clean: &Waveform, processed: &Waveform) -> Result<f64> {
    clean.validate()?;
    processed.validate()?;
    if clean.len() != processed.len() || clean.sample_rate_hz != processed.sample_rate_hz {
        return Err(TapError::ShapeMismatch(format!(
            "clean is {} samples at {} Hz, processed is {} at {}",
            clean.len(),
            clean.sample_rate_hz,
            processed.len(),
            processed.sample_rate_hz
        )));
    }
    let x10 = resample(clean, FS)?;
    let y10 = resample(processed, FS)?;
    let (xs, ys) = remove_silent_frames(&x10.samples, &y10.samples)?;
    let xb = band_spectrogram(&xs);
    let yb = band_spectrogram(&ys);

    let frames = xb.len();
    let score = if frames == 0 {
        return Err(TapError::SignalTooShort { need: FRAME, got: xs.len() });
    } else if frames < SEG {
        segment_score(&xb, &yb)
    } else {
        let mut acc = 0.0;
        let count = frames - SEG + 1;
        for m in 0..count {
            acc += segment_score(&xb[m..m + SEG], &yb[m..m + SEG]);
        }
        acc / count as f64
    };
    Ok(score.clamp(0.0, 1.0))
}
