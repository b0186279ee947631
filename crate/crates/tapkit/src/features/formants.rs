//! Formant estimation: pre-emphasis, order-12 linear prediction, and
//! pole extraction from the prediction polynomial.

use num_complex::Complex64;

use crate::signal::stft::hann_window;
use crate::SAMPLE_RATE;

const LPC_ORDER: usize = 12;
const PRE_EMPHASIS: f64 = 0.97;
/// Poles wider than this are spectral tilt, not resonances.
const MAX_BW_HZ: f64 = 600.0;
/// Poles below this are pitch or DC artifacts.
const MIN_FREQ_HZ: f64 = 90.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Formant {
    pub freq_hz: f64,
    pub bw_hz: f64,
}

/// Estimate up to three formants from one raw (unwindowed) frame.
/// Degenerate frames and non-converging root searches report no formants.
pub(crate) fn estimate_formants(frame: &[f64]) -> [Option<Formant>; 3] {
    let none = [None, None, None];
    let win = hann_window();
    if frame.len() != win.len() {
        return none;
    }

    let mut x = vec![0.0; frame.len()];
    x[0] = frame[0] * win[0];
    for i in 1..frame.len() {
        x[i] = (frame[i] - PRE_EMPHASIS * frame[i - 1]) * win[i];
    }

    let mut r = [0.0f64; LPC_ORDER + 1];
    for (lag, rv) in r.iter_mut().enumerate() {
        *rv = x.iter().zip(x[lag..].iter()).map(|(a, b)| a * b).sum();
    }
    if r[0] <= 0.0 {
        return none;
    }
    r[0] *= 1.0 + 1e-9; // tiny ridge keeps Levinson stable on pure tones

    let a = match levinson(&r) {
        Some(a) => a,
        None => return none,
    };
    let roots = match durand_kerner(&a) {
        Some(roots) => roots,
        None => return none,
    };

    let fs = SAMPLE_RATE as f64;
    let mut candidates: Vec<Formant> = roots
        .into_iter()
        .filter(|z| z.im > 1e-9)
        .filter_map(|z| {
            let mag = z.norm();
            if mag <= 0.0 || mag >= 1.0 {
                return None;
            }
            let freq = z.im.atan2(z.re) / (2.0 * std::f64::consts::PI) * fs;
            let bw = -(fs / std::f64::consts::PI) * mag.ln();
            if freq < MIN_FREQ_HZ || bw > MAX_BW_HZ {
                None
            } else {
                Some(Formant { freq_hz: freq, bw_hz: bw })
            }
        })
        .collect();
    candidates.sort_by(|a, b| a.freq_hz.partial_cmp(&b.freq_hz).unwrap());

    let mut out = none;
    for (slot, f) in out.iter_mut().zip(candidates) {
        *slot = Some(f);
    }
    out
}

/// Levinson-Durbin recursion; returns prediction coefficients a[1..=p]
/// for A(z) = 1 + a1 z^-1 + ... + ap z^-p.
fn levinson(r: &[f64]) -> Option<Vec<f64>> {
    let p = r.len() - 1;
    let mut a = vec![0.0f64; p + 1];
    a[0] = 1.0;
    let mut e = r[0];
    for i in 1..=p {
        let mut acc = r[i];
        for j in 1..i {
            acc += a[j] * r[i - j];
        }
        if e <= 0.0 || !e.is_finite() {
            return None;
        }
        let k = -acc / e;
        let prev = a.clone();
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        e *= 1.0 - k * k;
    }
    if e <= 0.0 || !e.is_finite() {
        return None;
    }
    Some(a)
}

/// All roots of z^p + a1 z^(p-1) + ... + ap via Durand-Kerner iteration.
fn durand_kerner(a: &[f64]) -> Option<Vec<Complex64>> {
    let p = a.len() - 1;
    let eval = |z: Complex64| -> Complex64 {
        let mut acc = Complex64::new(1.0, 0.0);
        for &c in &a[1..] {
            acc = acc * z + c;
        }
        acc
    };

    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..p).map(|i| seed.powu(i as u32 + 1)).collect();
    for _ in 0..200 {
        let mut max_step = 0.0f64;
        for i in 0..p {
            let mut den = Complex64::new(1.0, 0.0);
            for j in 0..p {
                if j != i {
                    den *= roots[i] - roots[j];
                }
            }
            if den.norm() < 1e-30 {
                return None;
            }
            let step = eval(roots[i]) / den;
            roots[i] -= step;
            max_step = max_step.max(step.norm());
        }
        if max_step < 1e-12 {
            return Some(roots);
        }
    }
    // Accept a slightly loose fixed point; reject anything unconverged.
    let residual = roots.iter().map(|&z| eval(z).norm()).fold(0.0f64, f64::max);
    if residual < 1e-8 {
        Some(roots)
    } else {
        None
    }
}
