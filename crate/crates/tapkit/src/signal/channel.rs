//! Transmission-channel simulation: Butterworth band limiting (applied
//! zero-phase), mu-law requantization, and random 20 ms frame drops.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Result, TapError};

/// Samples per dropped frame: 20 ms at 16 kHz.
const DROP_FRAME: usize = 320;
/// Butterworth lowpass prototype order. The bandpass built from it is
/// twice this order digitally.
const PROTO_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub bit_depth: u32,
    pub frame_drop_prob: f64,
}

impl ChannelProfile {
    /// Narrowband telephone: 300-3400 Hz, 8-bit mu-law, 1% frame loss.
    pub fn phone() -> Self {
        ChannelProfile {
            band_low_hz: 300.0,
            band_high_hz: 3400.0,
            bit_depth: 8,
            frame_drop_prob: 0.01,
        }
    }

    /// Wideband conferencing: 50 Hz highpass, 16-bit, no loss.
    pub fn cloud() -> Self {
        ChannelProfile {
            band_low_hz: 50.0,
            band_high_hz: 8000.0,
            bit_depth: 16,
            frame_drop_prob: 0.0,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "phone" => Ok(Self::phone()),
            "cloud" => Ok(Self::cloud()),
            other => Err(TapError::InvalidInput(format!("unknown channel profile '{other}'"))),
        }
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        let nyquist = sample_rate_hz as f64 / 2.0;
        if !(self.band_low_hz.is_finite() && self.band_high_hz.is_finite()) {
            return Err(TapError::InvalidInput("band edges must be finite".into()));
        }
        if self.band_low_hz < 0.0 {
            return Err(TapError::InvalidInput("band_low_hz must be >= 0".into()));
        }
        if self.band_high_hz <= self.band_low_hz {
            return Err(TapError::InvalidInput("band_high_hz must exceed band_low_hz".into()));
        }
        if self.band_low_hz >= nyquist {
            return Err(TapError::InvalidInput("band_low_hz must be below Nyquist".into()));
        }
        if !(2..=16).contains(&self.bit_depth) {
            return Err(TapError::InvalidInput("bit_depth must be in 2..=16".into()));
        }
        if !(0.0..=1.0).contains(&self.frame_drop_prob) {
            return Err(TapError::InvalidInput("frame_drop_prob must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Run a signal through the channel. `seed` drives only the frame-drop
/// draws; the filter and quantizer are deterministic.
pub fn apply_channel(w: &Waveform, profile: &ChannelProfile, seed: u64) -> Result<Waveform> {
    w.validate()?;
    profile.validate(w.sample_rate_hz)?;
    if w.is_empty() {
        return Err(TapError::InvalidInput("empty signal".into()));
    }

    let nyquist = w.sample_rate_hz as f64 / 2.0;
    let fs = w.sample_rate_hz as f64;
    let mut samples = if profile.band_low_hz <= 0.0 && profile.band_high_hz >= nyquist {
        w.samples.clone()
    } else {
        let sos = if profile.band_low_hz <= 0.0 {
            design_lowpass(profile.band_high_hz, fs)
        } else if profile.band_high_hz >= nyquist {
            design_highpass(profile.band_low_hz, fs)
        } else {
            design_bandpass(profile.band_low_hz, profile.band_high_hz, fs)
        };
        filtfilt(&sos, &w.samples)
    };

    let mu = ((1u32 << profile.bit_depth) - 1) as f64;
    let levels = (1u64 << profile.bit_depth) as f64;
    let step = 2.0 / (levels - 1.0);
    let log1p_mu = (1.0 + mu).ln();
    for v in samples.iter_mut() {
        let x = v.clamp(-1.0, 1.0);
        let y = x.signum() * (1.0 + mu * x.abs()).ln() / log1p_mu;
        let q = (y / step).round() * step;
        *v = q.signum() * ((1.0 + mu).powf(q.abs()) - 1.0) / mu;
    }

    if profile.frame_drop_prob > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut start = 0;
        while start < samples.len() {
            let end = (start + DROP_FRAME).min(samples.len());
            if rng.gen::<f64>() < profile.frame_drop_prob {
                samples[start..end].iter_mut().for_each(|v| *v = 0.0);
            }
            start = end;
        }
    }

    Ok(Waveform::new(samples, w.sample_rate_hz))
}

#[derive(Clone, Copy, Debug)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

/// Left-half-plane poles of the unit Butterworth lowpass prototype.
fn prototype_poles() -> Vec<Complex64> {
    let n = PROTO_ORDER;
    (0..n)
        .map(|k| {
            let theta = std::f64::consts::PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            Complex64::new(theta.cos(), theta.sin())
        })
        .collect()
}

fn prewarp(f_hz: f64, fs: f64) -> f64 {
    2.0 * fs * (std::f64::consts::PI * f_hz / fs).tan()
}

fn bilinear_pole(s: Complex64, fs: f64) -> Complex64 {
    let two_fs = Complex64::new(2.0 * fs, 0.0);
    (two_fs + s) / (two_fs - s)
}

/// Group a conjugate-symmetric pole set into biquad denominators.
fn pair_poles(poles: &[Complex64]) -> Vec<(f64, f64)> {
    let mut complex: Vec<Complex64> = poles.iter().filter(|p| p.im > 1e-12).copied().collect();
    complex.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
    let mut real: Vec<f64> =
        poles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
    real.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut out = Vec::new();
    for p in complex {
        out.push((-2.0 * p.re, p.norm_sqr()));
    }
    for pair in real.chunks(2) {
        match pair {
            [r1, r2] => out.push((-(r1 + r2), r1 * r2)),
            [r] => out.push((-r, 0.0)),
            _ => unreachable!(),
        }
    }
    out
}

fn cascade_response(sections: &[Biquad], z: Complex64) -> Complex64 {
    let zi1 = z.inv();
    let zi2 = zi1 * zi1;
    sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
        acc * (s.b0 + s.b1 * zi1 + s.b2 * zi2) / (1.0 + s.a1 * zi1 + s.a2 * zi2)
    })
}

/// Distribute an overall gain so that |H| = 1 at `z_ref`.
fn normalize(mut sections: Vec<Biquad>, z_ref: Complex64) -> Vec<Biquad> {
    let h = cascade_response(&sections, z_ref).norm();
    let scale = (1.0 / h).powf(1.0 / sections.len() as f64);
    for s in sections.iter_mut() {
        s.b0 *= scale;
        s.b1 *= scale;
        s.b2 *= scale;
    }
    sections
}

fn design_lowpass(cut_hz: f64, fs: f64) -> Vec<Biquad> {
    let wc = prewarp(cut_hz, fs);
    let poles: Vec<Complex64> =
        prototype_poles().into_iter().map(|p| bilinear_pole(p * wc, fs)).collect();
    let sections: Vec<Biquad> = pair_poles(&poles)
        .into_iter()
        .map(|(a1, a2)| Biquad { b0: 1.0, b1: 2.0, b2: 1.0, a1, a2 })
        .collect();
    normalize(sections, Complex64::new(1.0, 0.0))
}

fn design_highpass(cut_hz: f64, fs: f64) -> Vec<Biquad> {
    let wc = prewarp(cut_hz, fs);
    let poles: Vec<Complex64> = prototype_poles()
        .into_iter()
        .map(|p| bilinear_pole(Complex64::new(wc, 0.0) / p, fs))
        .collect();
    let sections: Vec<Biquad> = pair_poles(&poles)
        .into_iter()
        .map(|(a1, a2)| Biquad { b0: 1.0, b1: -2.0, b2: 1.0, a1, a2 })
        .collect();
    normalize(sections, Complex64::new(-1.0, 0.0))
}

fn design_bandpass(low_hz: f64, high_hz: f64, fs: f64) -> Vec<Biquad> {
    let wl = prewarp(low_hz, fs);
    let wh = prewarp(high_hz, fs);
    let w0 = (wl * wh).sqrt();
    let bw = wh - wl;

    // Lowpass-to-bandpass: each prototype pole p solves
    // s^2 - bw*p*s + w0^2 = 0, giving two analog poles.
    let mut analog = Vec::with_capacity(2 * PROTO_ORDER);
    for p in prototype_poles() {
        let bp = p * bw;
        let disc = (bp * bp - Complex64::new(4.0 * w0 * w0, 0.0)).sqrt();
        analog.push((bp + disc) / 2.0);
        analog.push((bp - disc) / 2.0);
    }
    let poles: Vec<Complex64> = analog.into_iter().map(|s| bilinear_pole(s, fs)).collect();
    // Analog zeros sit at s = 0 and infinity, landing on z = +1 and -1.
    let sections: Vec<Biquad> = pair_poles(&poles)
        .into_iter()
        .map(|(a1, a2)| Biquad { b0: 1.0, b1: 0.0, b2: -1.0, a1, a2 })
        .collect();
    let w_center = 2.0 * (w0 / (2.0 * fs)).atan();
    normalize(sections, Complex64::new(w_center.cos(), w_center.sin()))
}

/// Initial biquad state that makes a constant input pass transient-free,
/// scaled by the first sample of the block being filtered.
fn steady_state_zi(s: &Biquad) -> (f64, f64) {
    let den = 1.0 + s.a1 + s.a2;
    let k = if den.abs() < 1e-12 { 0.0 } else { (s.b0 + s.b1 + s.b2) / den };
    (k - s.b0, s.b2 - s.a2 * k)
}

fn biquad_filter(s: &Biquad, x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let (zi1, zi2) = steady_state_zi(s);
    let mut z1 = zi1 * x[0];
    let mut z2 = zi2 * x[0];
    for v in x.iter_mut() {
        let xin = *v;
        let y = s.b0 * xin + z1;
        z1 = s.b1 * xin - s.a1 * y + z2;
        z2 = s.b2 * xin - s.a2 * y;
        *v = y;
    }
}

/// Zero-phase filtering: odd-reflection padding, forward pass, reversed
/// pass, unpad. The effective magnitude response is |H|^2.
fn filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let pad = (3 * (2 * sections.len() + 1) * 4).min(n.saturating_sub(1));
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }

    for s in sections {
        biquad_filter(s, &mut ext);
    }
    ext.reverse();
    for s in sections {
        biquad_filter(s, &mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}
