//! Deterministic test-signal synthesis: tones, noise, vowels with known
//! formants, and speech-like harmonic material whose acoustic parameters
//! all move over time (so per-parameter statistics never degenerate).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::signal::Waveform;
use crate::SAMPLE_RATE;

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Pure sine at 16 kHz.
pub fn tone(freq_hz: f64, amp: f64, seconds: f64) -> Waveform {
    let fs = SAMPLE_RATE as f64;
    let n = (seconds * fs).round() as usize;
    Waveform::new((0..n).map(|i| amp * (TAU * freq_hz * i as f64 / fs).sin()).collect(), SAMPLE_RATE)
}

/// Uniform white noise in [-amp, amp], seeded.
pub fn white_noise(amp: f64, seconds: f64, seed: u64) -> Waveform {
    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..n).map(|_| rng.gen_range(-amp..amp)).collect(), SAMPLE_RATE)
}

/// Second-order resonator applied in place: poles at `freq_hz` with
/// bandwidth `bw_hz`.
fn resonate(samples: &mut [f64], freq_hz: f64, bw_hz: f64) {
    let fs = SAMPLE_RATE as f64;
    let r = (-std::f64::consts::PI * bw_hz / fs).exp();
    let theta = TAU * freq_hz / fs;
    let a1 = -2.0 * r * theta.cos();
    let a2 = r * r;
    let mut y1 = 0.0;
    let mut y2 = 0.0;
    for v in samples.iter_mut() {
        let y = *v - a1 * y1 - a2 * y2;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

fn normalize_peak(samples: &mut [f64], target: f64) {
    let peak = samples.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if peak > 0.0 {
        let g = target / peak;
        samples.iter_mut().for_each(|v| *v *= g);
    }
}

/// Glottal-style impulse train driven through a cascade of formant
/// resonators. The output is all-pole by construction, which makes it a
/// clean reference for formant estimation.
pub fn vowel(f0_hz: f64, formants: &[(f64, f64)], seconds: f64) -> Waveform {
    let fs = SAMPLE_RATE as f64;
    let n = (seconds * fs).round() as usize;
    let period = fs / f0_hz;
    let mut samples = vec![0.0f64; n];
    let mut next = 0.0f64;
    while (next as usize) < n {
        samples[next as usize] = 1.0;
        next += period;
    }
    for &(freq, bw) in formants {
        resonate(&mut samples, freq, bw);
    }
    normalize_peak(&mut samples, 0.5);
    Waveform::new(samples, SAMPLE_RATE)
}

/// Second-order resonator whose center frequency moves over time.
fn resonate_moving(samples: &mut [f64], freq_at: impl Fn(f64) -> f64, bw_hz: f64) {
    let fs = SAMPLE_RATE as f64;
    let r = (-std::f64::consts::PI * bw_hz / fs).exp();
    let a2 = r * r;
    let mut y1 = 0.0;
    let mut y2 = 0.0;
    for (i, v) in samples.iter_mut().enumerate() {
        let theta = TAU * freq_at(i as f64 / fs) / fs;
        let a1 = -2.0 * r * theta.cos();
        let y = *v - a1 * y1 - a2 * y2;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Fully voiced speech-like signal: a glottal-style pulse train with
/// vibrato, slow drift, per-pulse jitter and shimmer, driven through
/// three formant resonators whose centers wobble, plus tremolo and a low
/// noise floor. Every tracked acoustic parameter varies frame to frame.
pub fn speechlike(seconds: f64, seed: u64) -> Waveform {
    let fs = SAMPLE_RATE as f64;
    let n = (seconds * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let base_f0 = rng.gen_range(115.0..175.0);
    let vib_rate = rng.gen_range(4.5..6.5);
    let vib_depth = rng.gen_range(0.025..0.045);
    let drift_rate = rng.gen_range(0.4..0.9);
    let drift_depth = rng.gen_range(0.04..0.08);
    let am_rate = rng.gen_range(2.2..3.8);
    let am_depth = rng.gen_range(0.25..0.4);
    let am2_rate = rng.gen_range(0.5..1.1);
    let am2_depth = rng.gen_range(0.1..0.2);
    let jitter_frac = rng.gen_range(0.002..0.006);
    let shimmer_frac = rng.gen_range(0.03..0.08);
    let noise_amp = rng.gen_range(0.006..0.012);

    let centers =
        [rng.gen_range(630.0..770.0), rng.gen_range(1160.0..1340.0), rng.gen_range(2470.0..2690.0)];
    let bws = [rng.gen_range(90.0..120.0), rng.gen_range(110.0..150.0), rng.gen_range(150.0..200.0)];
    let wob_amp: [f64; 3] = std::array::from_fn(|_| rng.gen_range(30.0..60.0));
    let wob_rate: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.6..1.3));
    let wob_phase: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..TAU));

    let mut samples = vec![0.0f64; n];
    let mut pos = rng.gen_range(0.0..fs / base_f0);
    while (pos as usize) < n {
        let t = pos / fs;
        let f0 = base_f0
            * (1.0
                + vib_depth * (TAU * vib_rate * t).sin()
                + drift_depth * (TAU * drift_rate * t).sin());
        let amp = (1.0
            + am_depth * (TAU * am_rate * t).sin()
            + am2_depth * (TAU * am2_rate * t).sin())
            * (1.0 + shimmer_frac * rng.gen_range(-1.0..1.0));
        samples[pos as usize] = amp.max(0.05);
        let period = (fs / f0) * (1.0 + jitter_frac * rng.gen_range(-1.0..1.0));
        pos += period.max(fs / 500.0);
    }

    for i in 0..3 {
        let (c, wa, wr, wp) = (centers[i], wob_amp[i], wob_rate[i], wob_phase[i]);
        resonate_moving(&mut samples, move |t| c + wa * (TAU * wr * t + wp).sin(), bws[i]);
    }

    normalize_peak(&mut samples, 0.5);
    for v in samples.iter_mut() {
        *v += noise_amp * rng.gen_range(-0.5..0.5);
    }
    normalize_peak(&mut samples, 0.5);
    Waveform::new(samples, SAMPLE_RATE)
}
