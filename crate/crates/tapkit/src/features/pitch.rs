//! Per-frame pitch analysis via normalized cross-correlation.

use crate::SAMPLE_RATE;

/// Search range: 60 to 500 Hz.
const F0_MIN_HZ: f64 = 60.0;
const F0_MAX_HZ: f64 = 500.0;
/// A frame is voiced when its best correlation clears this.
const VOICING_THRESHOLD: f64 = 0.45;

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct PitchInfo {
    pub voiced: bool,
    pub f0_hz: f64,
    /// Normalized correlation at the chosen period, in [0, 1].
    pub acf_peak: f64,
}

/// Normalized cross-correlation at one lag. Both segment energies enter
/// the normalization, so amplitude drift inside the frame cancels.
fn nccf(frame: &[f64], lag: usize) -> f64 {
    let n = frame.len() - lag;
    let mut cross = 0.0;
    let mut e0 = 0.0;
    let mut e1 = 0.0;
    for i in 0..n {
        cross += frame[i] * frame[i + lag];
        e0 += frame[i] * frame[i];
        e1 += frame[i + lag] * frame[i + lag];
    }
    let den = (e0 * e1).sqrt();
    if den > 1e-30 {
        cross / den
    } else {
        0.0
    }
}

/// Analyze one raw frame. Among all local maxima within 90% of the
/// global best, the smallest lag wins; this keeps a strong subharmonic
/// from halving the pitch.
pub(crate) fn analyze_frame(frame: &[f64]) -> PitchInfo {
    let fs = SAMPLE_RATE as f64;
    let lag_min = (fs / F0_MAX_HZ).floor() as usize;
    let lag_max = (fs / F0_MIN_HZ).floor() as usize;
    if frame.len() <= lag_max + 1 {
        return PitchInfo::default();
    }

    let r: Vec<f64> = (lag_min..=lag_max).map(|lag| nccf(frame, lag)).collect();
    let (best_i, &best_r) =
        match r.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()) {
            Some(v) => v,
            None => return PitchInfo::default(),
        };
    if best_r <= VOICING_THRESHOLD {
        return PitchInfo::default();
    }

    let mut pick = best_i;
    for i in 1..r.len() - 1 {
        if r[i] >= r[i - 1] && r[i] >= r[i + 1] && r[i] >= 0.9 * best_r {
            pick = i;
            break;
        }
    }

    let lag = (lag_min + pick) as f64;
    let (lag_refined, peak) = if pick > 0 && pick < r.len() - 1 {
        let (l, c, rr) = (r[pick - 1], r[pick], r[pick + 1]);
        let den = l - 2.0 * c + rr;
        if den.abs() > 1e-30 {
            let delta = (0.5 * (l - rr) / den).clamp(-0.5, 0.5);
            (lag + delta, c - 0.25 * (l - rr) * delta)
        } else {
            (lag, c)
        }
    } else {
        (lag, r[pick])
    };

    PitchInfo { voiced: true, f0_hz: fs / lag_refined, acf_peak: peak.clamp(0.0, 1.0) }
}

/// Harmonicity in dB from the correlation peak, clamped to [-20, 40].
/// Unvoiced frames report the floor.
pub(crate) fn hnr_db(info: &PitchInfo) -> f64 {
    if !info.voiced {
        return -20.0;
    }
    let r = info.acf_peak.clamp(1e-6, 1.0 - 1e-6);
    (10.0 * (r / (1.0 - r)).log10()).clamp(-20.0, 40.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::N_FFT;

    fn tone_frame(freq: f64) -> Vec<f64> {
        (0..N_FFT)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
            .collect()
    }

    #[test]
    fn tone_pitch_within_two_hz() {
        for &f in &[110.0, 220.0, 330.0, 440.0] {
            let info = analyze_frame(&tone_frame(f));
            assert!(info.voiced, "{f} Hz should be voiced");
            assert!((info.f0_hz - f).abs() < 2.0, "{f} Hz detected as {}", info.f0_hz);
        }
    }

    #[test]
    fn noise_frame_is_unvoiced() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut unvoiced = 0;
        for _ in 0..20 {
            let frame: Vec<f64> = (0..N_FFT).map(|_| rng.gen_range(-0.5..0.5f64)).collect();
            let info = analyze_frame(&frame);
            if !info.voiced {
                unvoiced += 1;
            }
        }
        assert!(unvoiced >= 18, "only {unvoiced}/20 noise frames unvoiced");
    }

    #[test]
    fn tone_hnr_is_far_above_noise_hnr() {
        let tone_info = analyze_frame(&tone_frame(220.0));
        let silent = PitchInfo::default();
        assert!(hnr_db(&tone_info) - hnr_db(&silent) >= 10.0);
        assert!(hnr_db(&tone_info) > 20.0);
        assert_eq!(hnr_db(&silent), -20.0);
    }

    #[test]
    fn silence_is_unvoiced() {
        let frame = vec![0.0; N_FFT];
        let info = analyze_frame(&frame);
        assert!(!info.voiced);
        assert_eq!(info.f0_hz, 0.0);
    }
}
