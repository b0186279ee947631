//! Frame-level spectral measures: mel filterbank energies, cepstra,
//! band-energy ratios, spectral slopes, flux, and harmonic peak search.

use std::sync::OnceLock;

use crate::{N_BINS, N_FFT, SAMPLE_RATE};

pub(crate) const N_MEL: usize = 26;
pub(crate) const EPS: f64 = 1e-10;

/// Hz covered by one FFT bin.
pub(crate) fn bin_hz() -> f64 {
    SAMPLE_RATE as f64 / N_FFT as f64
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over 0-8000 Hz, as bin weights per band.
fn mel_bank() -> &'static Vec<Vec<(usize, f64)>> {
    static BANK: OnceLock<Vec<Vec<(usize, f64)>>> = OnceLock::new();
    BANK.get_or_init(|| {
        let lo = hz_to_mel(0.0);
        let hi = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
        let edges: Vec<f64> = (0..N_MEL + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MEL + 1) as f64))
            .collect();
        (0..N_MEL)
            .map(|b| {
                let (f_lo, f_c, f_hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let mut weights = Vec::new();
                for k in 0..N_BINS {
                    let f = k as f64 * bin_hz();
                    let w = if f >= f_lo && f <= f_c {
                        (f - f_lo) / (f_c - f_lo)
                    } else if f > f_c && f <= f_hi {
                        (f_hi - f) / (f_hi - f_c)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        weights.push((k, w));
                    }
                }
                weights
            })
            .collect()
    })
}

/// Mel band energies from a one-sided power spectrum.
pub(crate) fn mel_energies(power: &[f64]) -> [f64; N_MEL] {
    let bank = mel_bank();
    let mut out = [0.0; N_MEL];
    for (b, weights) in bank.iter().enumerate() {
        out[b] = weights.iter().map(|&(k, w)| w * power[k]).sum();
    }
    out
}

/// Total mel loudness proxy: log10 of summed band energy, floored at -10.
pub(crate) fn loudness(mel: &[f64; N_MEL]) -> f64 {
    (EPS + mel.iter().sum::<f64>()).log10().max(-10.0)
}

/// First four cepstral coefficients of the log mel energies (DCT-II with
/// sqrt(2/N) scaling).
pub(crate) fn mfcc1_4(mel: &[f64; N_MEL]) -> [f64; 4] {
    let logs: Vec<f64> = mel.iter().map(|&e| (EPS + e).ln()).collect();
    let scale = (2.0 / N_MEL as f64).sqrt();
    let mut out = [0.0; 4];
    for (i, c) in out.iter_mut().enumerate() {
        let k = (i + 1) as f64;
        *c = scale
            * logs
                .iter()
                .enumerate()
                .map(|(b, &l)| l * (std::f64::consts::PI * k * (b as f64 + 0.5) / N_MEL as f64).cos())
                .sum::<f64>();
    }
    out
}

fn band_bins(lo_hz: f64, hi_hz: f64) -> impl Iterator<Item = usize> {
    let step = bin_hz();
    (0..N_BINS).filter(move |&k| {
        let f = k as f64 * step;
        f > lo_hz - 1e-9 && f <= hi_hz + 1e-9
    })
}

/// Low/high band energy ratio in dB: [50, 1000] over (1000, 5000].
pub(crate) fn alpha_ratio(power: &[f64]) -> f64 {
    let low: f64 = band_bins(50.0, 1000.0).map(|k| power[k]).sum();
    let high: f64 = band_bins(1000.0 + 1e-6, 5000.0).map(|k| power[k]).sum();
    10.0 * ((low + EPS) / (high + EPS)).log10()
}

/// Peak-magnitude ratio in dB: strongest bin in [0, 2000] over strongest
/// in (2000, 5000].
pub(crate) fn hammarberg_index(mags: &[f64]) -> f64 {
    let low = band_bins(0.0, 2000.0).map(|k| mags[k]).fold(0.0f64, f64::max);
    let high = band_bins(2000.0 + 1e-6, 5000.0).map(|k| mags[k]).fold(0.0f64, f64::max);
    20.0 * ((low + EPS) / (high + EPS)).log10()
}

/// Least-squares slope of the dB spectrum against frequency (dB per Hz)
/// over [lo_hz, hi_hz].
pub(crate) fn spectral_slope(mags: &[f64], lo_hz: f64, hi_hz: f64) -> f64 {
    let step = bin_hz();
    let pts: Vec<(f64, f64)> = band_bins(lo_hz, hi_hz)
        .map(|k| (k as f64 * step, 20.0 * (mags[k] + EPS).log10()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// L2 distance between successive L2-normalized magnitude spectra.
pub(crate) fn spectral_flux(prev: Option<&[f64]>, cur: &[f64]) -> f64 {
    let prev = match prev {
        Some(p) => p,
        None => return 0.0,
    };
    let norm = |v: &[f64]| -> f64 { v.iter().map(|x| x * x).sum::<f64>().sqrt() };
    let np = norm(prev);
    let nc = norm(cur);
    let mut acc = 0.0;
    for k in 0..cur.len() {
        let a = if np > 0.0 { prev[k] / np } else { 0.0 };
        let b = if nc > 0.0 { cur[k] / nc } else { 0.0 };
        acc += (b - a) * (b - a);
    }
    acc.sqrt()
}

/// Magnitude peak near `target_hz`: strongest bin within +-2 bins of the
/// target, refined by parabolic interpolation. Returns (freq_hz, mag).
pub(crate) fn harmonic_peak(mags: &[f64], target_hz: f64) -> Option<(f64, f64)> {
    let step = bin_hz();
    let center = (target_hz / step).round() as isize;
    let lo = (center - 2).max(1) as usize;
    let hi = ((center + 2) as usize).min(N_BINS - 2);
    if lo > hi {
        return None;
    }
    let k = (lo..=hi).max_by(|&a, &b| mags[a].partial_cmp(&mags[b]).unwrap())?;
    Some(refine_peak(mags, k))
}

/// Strongest local peak inside [lo_hz, hi_hz], parabolic-refined.
pub(crate) fn band_peak(mags: &[f64], lo_hz: f64, hi_hz: f64) -> Option<(f64, f64)> {
    let step = bin_hz();
    let lo = ((lo_hz / step).ceil() as usize).max(1);
    let hi = ((hi_hz / step).floor() as usize).min(N_BINS - 2);
    if lo > hi {
        return None;
    }
    let k = (lo..=hi).max_by(|&a, &b| mags[a].partial_cmp(&mags[b]).unwrap())?;
    Some(refine_peak(mags, k))
}

fn refine_peak(mags: &[f64], k: usize) -> (f64, f64) {
    let step = bin_hz();
    let (l, c, r) = (mags[k - 1], mags[k], mags[k + 1]);
    let den = l - 2.0 * c + r;
    if den.abs() < 1e-30 {
        return (k as f64 * step, c);
    }
    let delta = (0.5 * (l - r) / den).clamp(-0.5, 0.5);
    let mag = c - 0.25 * (l - r) * delta;
    ((k as f64 + delta) * step, mag.max(0.0))
}
