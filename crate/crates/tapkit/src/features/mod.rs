//! Temporal acoustic parameter extraction.
//!
//! Every waveform maps to a `frames x 25` matrix on the same frame grid
//! the STFT uses, so rows line up one-to-one with spectrogram frames.
//! The parameter set covers energy, spectral balance, cepstra, pitch,
//! voice quality, and the first three formants.

mod formants;
mod pitch;
mod spectral;

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};
use crate::signal::{stft, Waveform};
use crate::{Mat, HOP, N_FFT, N_PARAMS, SAMPLE_RATE};

use spectral::EPS;

/// Column order of the extracted parameter matrix.
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "loudness",
    "alphaRatio",
    "hammarbergIndex",
    "spectralSlope0_500",
    "spectralSlope500_1500",
    "spectralFlux",
    "mfcc1",
    "mfcc2",
    "mfcc3",
    "mfcc4",
    "F0semitone",
    "jitterLocal",
    "shimmerLocaldB",
    "HNRdBACF",
    "logRelF0_H1_H2",
    "logRelF0_H1_A3",
    "F1frequency",
    "F1bandwidth",
    "F1amplitudeLogRelF0",
    "F2frequency",
    "F2bandwidth",
    "F2amplitudeLogRelF0",
    "F3frequency",
    "F3bandwidth",
    "F3amplitudeLogRelF0",
];

/// Extract the 25 temporal acoustic parameters, one row per STFT frame.
/// Unvoiced frames report 0 for pitch-dependent parameters and -20 dB
/// for harmonicity.
pub fn extract_taps(w: &Waveform) -> Result<Mat> {
    let spec = stft(w)?;
    let fs = SAMPLE_RATE as f64;
    let mut out = Mat::zeros(spec.frames, N_PARAMS);

    let mut prev_mags: Option<Vec<f64>> = None;
    // Period (samples) and peak amplitude of the previous voiced frame.
    let mut prev_voiced: Option<(f64, f64)> = None;

    for t in 0..spec.frames {
        let raw = &w.samples[t * HOP..t * HOP + N_FFT];
        let mags: Vec<f64> = spec.frame(t).iter().map(|c| c.norm()).collect();
        let power: Vec<f64> = mags.iter().map(|m| m * m).collect();
        let mel = spectral::mel_energies(&power);
        let row = out.row_mut(t);

        row[0] = spectral::loudness(&mel);
        row[1] = spectral::alpha_ratio(&power);
        row[2] = spectral::hammarberg_index(&mags);
        row[3] = spectral::spectral_slope(&mags, 0.0, 500.0);
        row[4] = spectral::spectral_slope(&mags, 500.0, 1500.0);
        row[5] = spectral::spectral_flux(prev_mags.as_deref(), &mags);
        let ceps = spectral::mfcc1_4(&mel);
        row[6..10].copy_from_slice(&ceps);

        let p = pitch::analyze_frame(raw);
        let amp = raw.iter().fold(0.0f64, |a, &v| a.max(v.abs()));

        row[13] = pitch::hnr_db(&p);
        if p.voiced {
            row[10] = 12.0 * (p.f0_hz / 27.5).log2();
            let period = fs / p.f0_hz;
            if let Some((prev_period, prev_amp)) = prev_voiced {
                row[11] = (period - prev_period).abs() / ((period + prev_period) / 2.0);
                if amp > 0.0 && prev_amp > 0.0 {
                    row[12] = 20.0 * (amp / prev_amp).log10().abs();
                }
            }
            prev_voiced = Some((period, amp));
        } else {
            prev_voiced = None;
        }

        let fmts = formants::estimate_formants(raw);
        let h1 = if p.voiced { spectral::harmonic_peak(&mags, p.f0_hz) } else { None };
        if let Some((_, h1_mag)) = h1 {
            if let Some((_, h2_mag)) = spectral::harmonic_peak(&mags, 2.0 * p.f0_hz) {
                row[14] = 20.0 * ((h1_mag + EPS) / (h2_mag + EPS)).log10();
            }
            // Harmonic nearest the third formant; a fixed band stands in
            // when no third formant was found.
            let a3 = match fmts[2] {
                Some(f) => harmonic_near(&mags, p.f0_hz, f.freq_hz),
                None => spectral::band_peak(&mags, 2300.0, 3500.0),
            };
            if let Some((_, a3_mag)) = a3 {
                row[15] = 20.0 * ((h1_mag + EPS) / (a3_mag + EPS)).log10();
            }
        }

        for (i, fmt) in fmts.iter().enumerate() {
            if let Some(f) = fmt {
                row[16 + 3 * i] = f.freq_hz;
                row[17 + 3 * i] = f.bw_hz;
                if let Some((_, h1_mag)) = h1 {
                    if let Some((_, ak)) = harmonic_near(&mags, p.f0_hz, f.freq_hz) {
                        row[18 + 3 * i] = 20.0 * ((ak + EPS) / (h1_mag + EPS)).log10();
                    }
                }
            }
        }

        prev_mags = Some(mags);
    }
    Ok(out)
}

/// Peak of the harmonic closest to `target_hz` for a given fundamental.
fn harmonic_near(mags: &[f64], f0_hz: f64, target_hz: f64) -> Option<(f64, f64)> {
    if f0_hz <= 0.0 {
        return None;
    }
    let k = (target_hz / f0_hz).round().max(1.0);
    let harmonic_hz = k * f0_hz;
    if harmonic_hz > 7800.0 {
        return None;
    }
    spectral::harmonic_peak(mags, harmonic_hz)
}

/// Per-parameter population statistics used to put every parameter on a
/// comparable scale before training and scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TapStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl TapStats {
    /// Accumulate over matrices in the order given. Errors if any
    /// parameter never varies, since standardizing it would divide by
    /// (near) zero.
    pub fn compute(mats: &[Mat]) -> Result<TapStats> {
        let mut count = 0u64;
        let mut sum = [0.0f64; N_PARAMS];
        let mut sumsq = [0.0f64; N_PARAMS];
        for m in mats {
            if m.cols != N_PARAMS {
                return Err(TapError::ShapeMismatch(format!(
                    "expected {N_PARAMS} parameter columns, got {}",
                    m.cols
                )));
            }
            for t in 0..m.rows {
                let row = m.row(t);
                for p in 0..N_PARAMS {
                    sum[p] += row[p];
                    sumsq[p] += row[p] * row[p];
                }
            }
            count += m.rows as u64;
        }
        if count < 2 {
            return Err(TapError::InvalidInput("need at least two frames for statistics".into()));
        }
        let n = count as f64;
        let means: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let stds: Vec<f64> = sumsq
            .iter()
            .zip(means.iter())
            .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt())
            .collect();
        for (p, &s) in stds.iter().enumerate() {
            if s < 1e-12 {
                return Err(TapError::DegenerateParameter(PARAM_NAMES[p].to_string()));
            }
        }
        Ok(TapStats { means, stds })
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.len() != N_PARAMS || self.stds.len() != N_PARAMS {
            return Err(TapError::ShapeMismatch("statistics length".into()));
        }
        if self.stds.iter().any(|&s| s.is_nan() || s < 1e-12 || !s.is_finite()) {
            return Err(TapError::InvalidInput("non-positive parameter scale".into()));
        }
        Ok(())
    }

    pub fn standardize(&self, m: &Mat) -> Result<Mat> {
        self.apply(m, |v, mean, std| (v - mean) / std)
    }

    pub fn destandardize(&self, m: &Mat) -> Result<Mat> {
        self.apply(m, |v, mean, std| v * std + mean)
    }

    fn apply(&self, m: &Mat, f: impl Fn(f64, f64, f64) -> f64) -> Result<Mat> {
        self.validate()?;
        if m.cols != N_PARAMS {
            return Err(TapError::ShapeMismatch(format!(
                "expected {N_PARAMS} columns, got {}",
                m.cols
            )));
        }
        let mut out = m.clone();
        for t in 0..out.rows {
            let row = out.row_mut(t);
            for (p, v) in row.iter_mut().enumerate() {
                *v = f(*v, self.means[p], self.stds[p]);
            }
        }
        Ok(out)
    }
}

/// Write a parameter matrix as CSV with a fixed header. Values use the
/// shortest representation that round-trips, so a read-back is exact.
pub fn write_csv<W: Write>(m: &Mat, out: &mut W) -> Result<()> {
    if m.cols != N_PARAMS {
        return Err(TapError::ShapeMismatch(format!("expected {N_PARAMS} columns, got {}", m.cols)));
    }
    writeln!(out, "{}", PARAM_NAMES.join(","))?;
    for t in 0..m.rows {
        let row = m.row(t);
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Mat> {
    let mut lines = BufReader::new(input).lines();
    let header = lines
        .next()
        .ok_or_else(|| TapError::InvalidInput("empty parameter CSV".into()))??;
    if header != PARAM_NAMES.join(",") {
        return Err(TapError::InvalidInput("parameter CSV header mismatch".into()));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != N_PARAMS {
            return Err(TapError::InvalidInput(format!(
                "row {rows} has {} fields, expected {N_PARAMS}",
                fields.len()
            )));
        }
        for f in fields {
            data.push(
                f.parse::<f64>()
                    .map_err(|_| TapError::InvalidInput(format!("bad float '{f}'")))?,
            );
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(TapError::InvalidInput("parameter CSV has no rows".into()));
    }
    Ok(Mat::from_vec(rows, N_PARAMS, data))
}

pub fn save_csv(m: &Mat, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(m, &mut f)
}

pub fn load_csv(path: &Path) -> Result<Mat> {
    read_csv(std::fs::File::open(path)?)
}
