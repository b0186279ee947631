//! Arbitrary-ratio windowed-sinc resampling (Kaiser window, 16 taps per
//! side). Used to bring signals onto the 10 kHz grid the intelligibility
//! metric expects and to normalize external material to 16 kHz.

use super::Waveform;
use crate::error::{Result, TapError};

const HALF_TAPS: usize = 16;
const KAISER_BETA: f64 = 8.0;
/// Transition-band margin below the theoretical cutoff.
const CUTOFF_SCALE: f64 = 0.945;

/// Zeroth-order modified Bessel function of the first kind, by its power
/// series. Converges quickly for the argument range a Kaiser window uses.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_x = x / 2.0;
    for k in 1..=30 {
        term *= (half_x / k as f64) * (half_x / k as f64);
        sum += term;
        if term < 1e-16 * sum {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resample to `target_rate_hz`. Output length is
/// `round(len * target / source)`; the filter is normalized per output
/// sample so DC passes at unit gain everywhere, including near the edges.
pub fn resample(w: &Waveform, target_rate_hz: u32) -> Result<Waveform> {
    w.validate()?;
    if target_rate_hz == 0 {
        return Err(TapError::InvalidInput("target sample rate must be positive".into()));
    }
    if target_rate_hz == w.sample_rate_hz {
        return Ok(w.clone());
    }
    let src = w.sample_rate_hz as f64;
    let dst = target_rate_hz as f64;
    let ratio = dst / src;
    let out_len = (w.samples.len() as f64 * ratio).round() as usize;
    if out_len == 0 {
        return Ok(Waveform::new(Vec::new(), target_rate_hz));
    }

    let cutoff = ratio.min(1.0) * CUTOFF_SCALE;
    let i0_beta = bessel_i0(KAISER_BETA);
    let half = HALF_TAPS as f64;

    let mut out = Vec::with_capacity(out_len);
    let n = w.samples.len() as isize;
    for j in 0..out_len {
        let center = j as f64 / ratio;
        let k_lo = (center - half).ceil() as isize;
        let k_hi = (center + half).floor() as isize;
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for k in k_lo..=k_hi {
            let u = k as f64 - center;
            let frac = u / half;
            let kaiser = bessel_i0(KAISER_BETA * (1.0 - frac * frac).max(0.0).sqrt()) / i0_beta;
            let weight = cutoff * sinc(cutoff * u) * kaiser;
            wsum += weight;
            if k >= 0 && k < n {
                acc += weight * w.samples[k as usize];
            }
        }
        out.push(if wsum.abs() > 1e-12 { acc / wsum } else { 0.0 });
    }
    Ok(Waveform::new(out, target_rate_hz))
}
