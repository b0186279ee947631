//! Forward/inverse STFT on the fixed 512/256 Hann grid, plus the exact
//! adjoints of both linear maps.
//!
//! The adjoints treat a one-sided complex spectrogram as a real vector
//! space over the (re, im) coordinates of its bins: for a scalar loss L,
//! a gradient spectrogram stores dL/d(re) + i*dL/d(im) per bin. Under
//! that pairing `stft_adjoint` satisfies
//! `<stft(x), G> == <x, stft_adjoint(G)>` exactly, which is what carries
//! TAPLoss gradients from spectrogram space back to the waveform.

use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Waveform;
use crate::error::{Result, TapError};
use crate::{HOP, N_BINS, N_FFT, SAMPLE_RATE};

/// Frame-grid descriptor baked into checkpoints so a model can refuse
/// spectrograms from an incompatible configuration.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FrameGrid {
    pub sample_rate_hz: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub window: String,
}

impl FrameGrid {
    pub fn canonical() -> Self {
        FrameGrid {
            sample_rate_hz: SAMPLE_RATE,
            n_fft: N_FFT,
            hop: HOP,
            window: "hann".into(),
        }
    }

    pub fn check_canonical(&self) -> Result<()> {
        if *self != FrameGrid::canonical() {
            return Err(TapError::GridMismatch(format!(
                "expected {:?}, got {:?}",
                FrameGrid::canonical(),
                self
            )));
        }
        Ok(())
    }
}

/// One-sided complex spectrogram on the canonical grid: `frames` x
/// [`N_BINS`] values, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
    pub grid: FrameGrid,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize) -> Self {
        ComplexSpectrogram {
            frames,
            bins: N_BINS,
            data: vec![Complex64::new(0.0, 0.0); frames * N_BINS],
            grid: FrameGrid::canonical(),
        }
    }

    #[inline]
    pub fn at(&self, t: usize, f: usize) -> Complex64 {
        self.data[t * self.bins + f]
    }

    #[inline]
    pub fn at_mut(&mut self, t: usize, f: usize) -> &mut Complex64 {
        &mut self.data[t * self.bins + f]
    }

    #[inline]
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    /// Number of frames the canonical grid produces for `len` samples.
    pub fn frames_for_len(len: usize) -> usize {
        if len < N_FFT {
            0
        } else {
            (len - N_FFT) / HOP + 1
        }
    }

    /// Longest signal length that still maps to `frames` frames.
    pub fn max_len_for_frames(frames: usize) -> usize {
        (frames - 1) * HOP + N_FFT + HOP - 1
    }
}

/// Periodic Hann window of length [`N_FFT`].
pub(crate) fn hann_window() -> &'static [f64] {
    static WIN: OnceLock<Vec<f64>> = OnceLock::new();
    WIN.get_or_init(|| {
        (0..N_FFT)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N_FFT as f64).cos())
            .collect()
    })
}

fn fft_forward_plan() -> Arc<dyn Fft<f64>> {
    static PLAN: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    PLAN.get_or_init(|| FftPlanner::new().plan_fft_forward(N_FFT)).clone()
}

fn fft_inverse_plan() -> Arc<dyn Fft<f64>> {
    static PLAN: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    PLAN.get_or_init(|| FftPlanner::new().plan_fft_inverse(N_FFT)).clone()
}

/// Hann-windowed, non-centered STFT with a one-sided 257-bin spectrum.
pub fn stft(w: &Waveform) -> Result<ComplexSpectrogram> {
    w.validate()?;
    if w.samples.len() < N_FFT {
        return Err(TapError::SignalTooShort { need: N_FFT, got: w.samples.len() });
    }
    let frames = ComplexSpectrogram::frames_for_len(w.samples.len());
    let win = hann_window();
    let plan = fft_forward_plan();
    let mut out = ComplexSpectrogram::zeros(frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); N_FFT];
    for t in 0..frames {
        let start = t * HOP;
        for n in 0..N_FFT {
            buf[n] = Complex64::new(w.samples[start + n] * win[n], 0.0);
        }
        plan.process(&mut buf);
        out.data[t * N_BINS..(t + 1) * N_BINS].copy_from_slice(&buf[..N_BINS]);
    }
    Ok(out)
}

/// Inverse STFT: conjugate-symmetric completion, inverse FFT, synthesis
/// Accumulated window energy is clamped below at [`NORM_FLOOR`] before
/// dividing. On the COLA interior the energy is at least 0.5, so
/// reconstruction there is exact; at the single-coverage clip edges the
/// clamp bounds the amplification of inconsistent (e.g. masked)
/// spectrograms, which a plain least-squares inverse would blow up by
/// 1/window at samples the analysis barely sees.
const NORM_FLOOR: f64 = 0.1;

/// Hann window, overlap-add, and per-sample window-square normalization
/// (clamped at [`NORM_FLOOR`]).
///
/// `out_len` may exceed the natural frame coverage by at most `HOP - 1`
/// samples; the tail is zero-padded, which matches any signal length that
/// produces this frame count.
pub fn istft(spec: &ComplexSpectrogram, out_len: usize) -> Result<Waveform> {
    spec.grid.check_canonical()?;
    if spec.bins != N_BINS {
        return Err(TapError::ShapeMismatch(format!("expected {N_BINS} bins, got {}", spec.bins)));
    }
    if spec.frames == 0 {
        return Err(TapError::InvalidInput("empty spectrogram".into()));
    }
    let max_len = ComplexSpectrogram::max_len_for_frames(spec.frames);
    if out_len > max_len {
        return Err(TapError::InvalidInput(format!(
            "out_len {out_len} exceeds representable length {max_len} for {} frames",
            spec.frames
        )));
    }

    let win = hann_window();
    let plan = fft_inverse_plan();
    let natural = (spec.frames - 1) * HOP + N_FFT;
    let mut acc = vec![0.0f64; natural];
    let mut norm = vec![0.0f64; natural];
    let mut buf = vec![Complex64::new(0.0, 0.0); N_FFT];

    for t in 0..spec.frames {
        let fr = spec.frame(t);
        buf[..N_BINS].copy_from_slice(fr);
        for f in N_BINS..N_FFT {
            buf[f] = fr[N_FFT - f].conj();
        }
        plan.process(&mut buf);
        let start = t * HOP;
        for n in 0..N_FFT {
            // Unnormalized inverse FFT; scale by 1/N and take the real part.
            acc[start + n] += win[n] * buf[n].re / N_FFT as f64;
            norm[start + n] += win[n] * win[n];
        }
    }

    let mut samples = vec![0.0f64; out_len];
    for i in 0..out_len.min(natural) {
        samples[i] = acc[i] / norm[i].max(NORM_FLOOR);
    }
    Ok(Waveform::new(samples, SAMPLE_RATE))
}

/// Exact adjoint of [`stft`] under the real (re, im) pairing.
///
/// `grad` holds dL/d(re) + i*dL/d(im) per one-sided bin; the result is
/// dL/dx for a signal of `out_len` samples.
pub fn stft_adjoint(grad: &ComplexSpectrogram, out_len: usize) -> Result<Waveform> {
    grad.grid.check_canonical()?;
    if grad.bins != N_BINS {
        return Err(TapError::ShapeMismatch(format!("expected {N_BINS} bins, got {}", grad.bins)));
    }
    let need_frames = ComplexSpectrogram::frames_for_len(out_len);
    if need_frames != grad.frames {
        return Err(TapError::ShapeMismatch(format!(
            "gradient has {} frames but a {out_len}-sample signal produces {need_frames}",
            grad.frames
        )));
    }

    let win = hann_window();
    let plan = fft_inverse_plan();
    let mut out = vec![0.0f64; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); N_FFT];

    for t in 0..grad.frames {
        // Zero-padded upper half: each one-sided bin is its own real
        // coordinate pair, so no conjugate doubling here.
        buf[..N_BINS].copy_from_slice(grad.frame(t));
        for v in buf[N_BINS..].iter_mut() {
            *v = Complex64::new(0.0, 0.0);
        }
        plan.process(&mut buf);
        let start = t * HOP;
        for n in 0..N_FFT {
            out[start + n] += win[n] * buf[n].re;
        }
    }
    Ok(Waveform::new(out, SAMPLE_RATE))
}

/// Exact adjoint of [`istft`]: maps a waveform gradient back to a
/// spectrogram gradient (same (re, im) pairing as [`stft_adjoint`]).
pub fn istft_adjoint(grad_wave: &[f64], frames: usize) -> Result<ComplexSpectrogram> {
    if frames == 0 {
        return Err(TapError::InvalidInput("zero frames".into()));
    }
    let max_len = ComplexSpectrogram::max_len_for_frames(frames);
    if grad_wave.len() > max_len {
        return Err(TapError::ShapeMismatch(format!(
            "waveform gradient of {} samples exceeds representable length {max_len}",
            grad_wave.len()
        )));
    }

    let win = hann_window();
    let natural = (frames - 1) * HOP + N_FFT;

    // Rebuild the same normalization the forward pass used.
    let mut norm = vec![0.0f64; natural];
    for t in 0..frames {
        let start = t * HOP;
        for n in 0..N_FFT {
            norm[start + n] += win[n] * win[n];
        }
    }
    let mut g = vec![0.0f64; natural];
    for i in 0..grad_wave.len().min(natural) {
        g[i] = grad_wave[i] / norm[i].max(NORM_FLOOR);
    }

    let plan = fft_forward_plan();
    let mut out = ComplexSpectrogram::zeros(frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); N_FFT];
    for t in 0..frames {
        let start = t * HOP;
        for n in 0..N_FFT {
            buf[n] = Complex64::new(win[n] * g[start + n], 0.0);
        }
        plan.process(&mut buf);
        let row = &mut out.data[t * N_BINS..(t + 1) * N_BINS];
        for f in 0..N_BINS {
            // Interior bins appear twice in the conjugate-symmetric
            // completion, DC and Nyquist once (and those two are
            // constrained real, so their imaginary gradient is 0).
            let c = if f == 0 || f == N_BINS - 1 { 1.0 } else { 2.0 };
            let v = buf[f] * (c / N_FFT as f64);
            row[f] = if f == 0 || f == N_BINS - 1 { Complex64::new(v.re, 0.0) } else { v };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_wave(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-0.9..0.9)).collect(), SAMPLE_RATE)
    }

    fn random_grad(frames: usize, seed: u64) -> ComplexSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = ComplexSpectrogram::zeros(frames);
        for v in g.data.iter_mut() {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        g
    }

    /// Real pairing over (re, im) coordinates of one-sided bins.
    fn spec_dot(a: &ComplexSpectrogram, b: &ComplexSpectrogram) -> f64 {
        a.data.iter().zip(b.data.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
    }

    #[test]
    fn dc_signal_concentrates_in_bin_zero() {
        let w = Waveform::new(vec![1.0; N_FFT], SAMPLE_RATE);
        let s = stft(&w).unwrap();
        assert_eq!(s.frames, 1);
        let win_sum: f64 = hann_window().iter().sum();
        assert!((s.at(0, 0).re - win_sum).abs() < 1e-9);
        assert!(s.at(0, 0).im.abs() < 1e-9);
        // Energy off DC is tiny relative to bin 0.
        for f in 2..N_BINS {
            assert!(s.at(0, f).norm() < 1e-6 * win_sum);
        }
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let freq = 1000.0;
        let n = SAMPLE_RATE as usize;
        let w = Waveform::new(
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
                .collect(),
            SAMPLE_RATE,
        );
        let s = stft(&w).unwrap();
        let t = s.frames / 2;
        let peak = (0..N_BINS)
            .max_by(|&a, &b| s.at(t, a).norm().partial_cmp(&s.at(t, b).norm()).unwrap())
            .unwrap();
        assert_eq!(peak, (freq * N_FFT as f64 / SAMPLE_RATE as f64).round() as usize);
        assert_eq!(peak, 32);
    }

    #[test]
    fn reconstruction_on_cola_interior() {
        for seed in 0..5 {
            let w = random_wave(SAMPLE_RATE as usize, seed);
            let s = stft(&w).unwrap();
            let rec = istft(&s, w.len()).unwrap();
            let lo = HOP;
            let hi = s.frames * HOP;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in lo..hi {
                num += (w.samples[i] - rec.samples[i]).powi(2);
                den += w.samples[i].powi(2);
            }
            assert!((num / den).sqrt() < 1e-6, "seed {seed}: rel err {}", (num / den).sqrt());
        }
    }

    #[test]
    fn zero_spectrogram_gives_zero_waveform() {
        let s = ComplexSpectrogram::zeros(4);
        let w = istft(&s, 4 * HOP + N_FFT - HOP).unwrap();
        assert!(w.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn windowed_impulse_recovered() {
        // An impulse inside the COLA interior of a two-frame signal.
        let len = N_FFT + HOP;
        let mut x = vec![0.0; len];
        x[HOP + 40] = 1.0;
        let w = Waveform::new(x.clone(), SAMPLE_RATE);
        let s = stft(&w).unwrap();
        let rec = istft(&s, len).unwrap();
        for (got, want) in rec.samples.iter().zip(&x).take(s.frames * HOP).skip(HOP) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn out_len_beyond_representable_is_rejected() {
        let s = ComplexSpectrogram::zeros(2);
        let max = ComplexSpectrogram::max_len_for_frames(2);
        assert!(istft(&s, max).is_ok());
        assert!(istft(&s, max + 1).is_err());
    }

    #[test]
    fn stft_adjoint_identity() {
        for seed in 0..100u64 {
            let len = N_FFT + (seed as usize % 7) * HOP + (seed as usize * 37) % HOP;
            let x = random_wave(len, seed);
            let s = stft(&x).unwrap();
            let g = random_grad(s.frames, seed + 1000);
            let adj = stft_adjoint(&g, len).unwrap();
            let lhs = spec_dot(&s, &g);
            let rhs: f64 = x.samples.iter().zip(adj.samples.iter()).map(|(a, b)| a * b).sum();
            let denom = lhs.abs().max(rhs.abs()).max(1e-12);
            assert!(
                ((lhs - rhs) / denom).abs() < 1e-8,
                "seed {seed}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn stft_adjoint_zero_grad() {
        let g = ComplexSpectrogram::zeros(3);
        let len = 2 * HOP + N_FFT;
        let out = stft_adjoint(&g, len).unwrap();
        assert!(out.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stft_adjoint_single_entry_support() {
        let mut g = ComplexSpectrogram::zeros(3);
        *g.at_mut(1, 10) = Complex64::new(1.0, 0.0);
        let len = 2 * HOP + N_FFT;
        let out = stft_adjoint(&g, len).unwrap();
        // Support is exactly frame 1's span.
        for (i, &v) in out.samples.iter().enumerate() {
            let in_frame = (HOP..HOP + N_FFT).contains(&i);
            if !in_frame {
                assert_eq!(v, 0.0, "sample {i} outside frame support");
            }
        }
        // Inside, it is a windowed sinusoid: nonzero somewhere.
        assert!(out.samples[HOP..HOP + N_FFT].iter().any(|&v| v.abs() > 1e-6));
    }

    #[test]
    fn istft_adjoint_identity() {
        for seed in 0..50u64 {
            let frames = 2 + (seed as usize % 4);
            let len = (frames - 1) * HOP + N_FFT + (seed as usize % HOP);
            let spec = random_grad(frames, seed);
            let y = istft(&spec, len).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 9000);
            let gw: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let gs = istft_adjoint(&gw, frames).unwrap();
            let lhs: f64 = y.samples.iter().zip(gw.iter()).map(|(a, b)| a * b).sum();
            let rhs = spec_dot(&spec, &gs);
            let denom = lhs.abs().max(rhs.abs()).max(1e-12);
            assert!(((lhs - rhs) / denom).abs() < 1e-8, "seed {seed}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn short_signal_is_rejected() {
        let w = Waveform::new(vec![0.1; N_FFT - 1], SAMPLE_RATE);
        assert!(matches!(stft(&w), Err(TapError::SignalTooShort { .. })));
    }
}
