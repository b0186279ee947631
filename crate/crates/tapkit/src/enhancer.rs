//! Acoustic loss through the frozen estimator, its waveform gradient,
//! and a small spectral-mask enhancer trained with the joint objective.
//!
//! The gradient chain is the point of the module: MAE over predicted
//! parameters, back through the estimator GRU to its input features,
//! through the signed-log featurization to the complex spectrogram, and
//! through the STFT adjoint to individual waveform samples. The enhancer
//! then composes that with the adjoint of its own mask-and-resynthesize
//! step, so the whole objective is differentiable in its parameters.

use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};
use crate::estimator::{featurize_grad, featurize_spectrogram, EstimatorModel, TrainConfig};
use crate::neural::{
    clip_global_norm, load_checkpoint, mae_loss, save_checkpoint, AdamState, ParamStore,
    SequenceModel,
};
use crate::signal::{istft, istft_adjoint, stft, stft_adjoint, ComplexSpectrogram, Waveform};
use crate::{Mat, N_BINS};

pub const MODEL_KIND: &str = "enhancer";

/// Acoustic-loss value against a standardized target matrix.
pub fn tap_loss(y_enh: &Waveform, a_clean: &Mat, est: &EstimatorModel) -> Result<f64> {
    let pred = est.predict(y_enh)?;
    if pred.rows != a_clean.rows || pred.cols != a_clean.cols {
        return Err(TapError::ShapeMismatch(format!(
            "prediction is {}x{}, target is {}x{}",
            pred.rows, pred.cols, a_clean.rows, a_clean.cols
        )));
    }
    Ok(mae_loss(&pred, a_clean)?.0)
}

/// Acoustic loss and its gradient with respect to every input sample.
/// The estimator's parameters receive no updates; only the input path
/// of its backward pass is used.
pub fn tap_loss_grad(
    y_enh: &Waveform,
    a_clean: &Mat,
    est: &EstimatorModel,
) -> Result<(f64, Vec<f64>)> {
    est.grid.check_canonical()?;
    let spec = stft(y_enh)?;
    let x = featurize_spectrogram(&spec);
    let (pred, _, cache) = est.net.forward(&est.params, &x, None)?;
    if pred.rows != a_clean.rows || pred.cols != a_clean.cols {
        return Err(TapError::ShapeMismatch(format!(
            "prediction is {}x{}, target is {}x{}",
            pred.rows, pred.cols, a_clean.rows, a_clean.cols
        )));
    }
    let (loss, gy) = mae_loss(&pred, a_clean)?;
    let mut frozen = est.params.zeros_like();
    let (gx, _) = est.net.backward(&est.params, &cache, &gy, None, &mut frozen)?;
    let gspec = featurize_grad(&spec, &gx)?;
    let gwave = stft_adjoint(&gspec, y_enh.len())?;
    Ok((loss, gwave.samples))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseLoss {
    L1Waveform,
    L2SpectralMagnitude,
}

impl FromStr for BaseLoss {
    type Err = TapError;
    fn from_str(s: &str) -> Result<BaseLoss> {
        match s {
            "l1_waveform" => Ok(BaseLoss::L1Waveform),
            "l2_spectral_magnitude" => Ok(BaseLoss::L2SpectralMagnitude),
            other => Err(TapError::InvalidInput(format!("unknown base loss '{other}'"))),
        }
    }
}

/// Where the per-clip acoustic target comes from during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapTarget {
    /// predict(clean): the estimator defines the target space.
    EstimatorOnClean,
    /// extract_taps(clean), standardized with the estimator's statistics.
    ExtractorOnClean,
}

impl FromStr for TapTarget {
    type Err = TapError;
    fn from_str(s: &str) -> Result<TapTarget> {
        match s {
            "estimator_on_clean" => Ok(TapTarget::EstimatorOnClean),
            "extractor_on_clean" => Ok(TapTarget::ExtractorOnClean),
            other => Err(TapError::InvalidInput(format!("unknown tap target '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointLossConfig {
    pub base_loss: BaseLoss,
    pub lambda_tap: f64,
    pub tap_target: TapTarget,
}

impl Default for JointLossConfig {
    fn default() -> Self {
        JointLossConfig {
            base_loss: BaseLoss::L1Waveform,
            lambda_tap: 1.0,
            tap_target: TapTarget::EstimatorOnClean,
        }
    }
}

impl JointLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda_tap.is_finite() || self.lambda_tap < 0.0 {
            return Err(TapError::InvalidInput("lambda_tap must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossComponents {
    pub l_base: f64,
    pub l_tap: f64,
    pub l_total: f64,
}

fn base_loss_value(y_enh: &Waveform, y_clean: &Waveform, kind: BaseLoss) -> Result<f64> {
    match kind {
        BaseLoss::L1Waveform => {
            let n = y_enh.len();
            let sum: f64 = y_enh
                .samples
                .iter()
                .zip(y_clean.samples.iter())
                .map(|(a, b)| (a - b).abs())
                .sum();
            Ok(sum / n as f64)
        }
        BaseLoss::L2SpectralMagnitude => {
            let se = stft(y_enh)?;
            let sc = stft(y_clean)?;
            let mut sum = 0.0;
            for (a, b) in se.data.iter().zip(sc.data.iter()) {
                let d = a.norm() - b.norm();
                sum += d * d;
            }
            Ok(sum / se.data.len() as f64)
        }
    }
}

/// Base loss and its gradient with respect to the enhanced waveform.
fn base_loss_grad(y_enh: &Waveform, y_clean: &Waveform, kind: BaseLoss) -> Result<(f64, Vec<f64>)> {
    match kind {
        BaseLoss::L1Waveform => {
            let n = y_enh.len();
            let scale = 1.0 / n as f64;
            let mut grad = vec![0.0; n];
            let mut sum = 0.0;
            for (i, (a, b)) in y_enh.samples.iter().zip(y_clean.samples.iter()).enumerate() {
                let d = a - b;
                sum += d.abs();
                grad[i] = if d > 0.0 {
                    scale
                } else if d < 0.0 {
                    -scale
                } else {
                    0.0
                };
            }
            Ok((sum * scale, grad))
        }
        BaseLoss::L2SpectralMagnitude => {
            let se = stft(y_enh)?;
            let sc = stft(y_clean)?;
            let count = se.data.len() as f64;
            let mut gspec = ComplexSpectrogram::zeros(se.frames);
            let mut sum = 0.0;
            for t in 0..se.frames {
                for f in 0..N_BINS {
                    let a = se.at(t, f);
                    let mag = a.norm();
                    let d = mag - sc.at(t, f).norm();
                    sum += d * d;
                    if mag > 0.0 {
                        let coef = 2.0 * d / (count * mag);
                        let g = gspec.at_mut(t, f);
                        g.re = coef * a.re;
                        g.im = coef * a.im;
                    }
                }
            }
            let gwave = stft_adjoint(&gspec, y_enh.len())?;
            Ok((sum / count, gwave.samples))
        }
    }
}

/// Joint objective L_base + lambda * L_tap with components reported
/// separately. `a_clean` is the standardized acoustic target.
pub fn joint_loss(
    y_enh: &Waveform,
    y_clean: &Waveform,
    a_clean: &Mat,
    cfg: &JointLossConfig,
    est: &EstimatorModel,
) -> Result<LossComponents> {
    cfg.validate()?;
    if y_enh.len() != y_clean.len() {
        return Err(TapError::ShapeMismatch(format!(
            "enhanced has {} samples, clean has {}",
            y_enh.len(),
            y_clean.len()
        )));
    }
    let l_base = base_loss_value(y_enh, y_clean, cfg.base_loss)?;
    let l_tap = tap_loss(y_enh, a_clean, est)?;
    Ok(LossComponents { l_base, l_tap, l_total: l_base + cfg.lambda_tap * l_tap })
}

#[derive(Clone, Debug)]
pub struct EnhancerModel {
    pub params: ParamStore,
    pub net: SequenceModel,
    pub hidden: usize,
    pub n_layers: usize,
    pub seed: u64,
}

impl EnhancerModel {
    pub fn new(hidden: usize, n_layers: usize, seed: u64) -> Result<EnhancerModel> {
        if hidden == 0 || n_layers == 0 {
            return Err(TapError::InvalidInput("enhancer needs at least one gru layer".into()));
        }
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = SequenceModel::new(&mut params, N_BINS, hidden, n_layers, N_BINS, &mut rng)?;
        Ok(EnhancerModel { params, net, hidden, n_layers, seed })
    }
}

pub fn save_enhancer(path: &Path, model: &EnhancerModel) -> Result<()> {
    let hyper = serde_json::json!({"hidden": model.hidden, "layers": model.n_layers});
    save_checkpoint(path, &model.params, MODEL_KIND, hyper, model.seed)
}

#[derive(Deserialize)]
struct EnhancerHyper {
    hidden: usize,
    layers: usize,
}

pub fn load_enhancer(path: &Path) -> Result<EnhancerModel> {
    let (header, params) = load_checkpoint(path)?;
    if header.model_kind != MODEL_KIND {
        return Err(TapError::Checkpoint(format!(
            "expected an {MODEL_KIND} checkpoint, found '{}'",
            header.model_kind
        )));
    }
    let hyper: EnhancerHyper = serde_json::from_value(header.hyper)
        .map_err(|e| TapError::Checkpoint(format!("bad hyperparameters: {e}")))?;
    let net = SequenceModel::attach(&params, N_BINS, hyper.hidden, hyper.layers, N_BINS)?;
    Ok(EnhancerModel {
        params,
        net,
        hidden: hyper.hidden,
        n_layers: hyper.layers,
        seed: header.rng_seed,
    })
}

fn log_mag_features(spec: &ComplexSpectrogram) -> Mat {
    let mut x = Mat::zeros(spec.frames, N_BINS);
    for t in 0..spec.frames {
        let row = x.row_mut(t);
        for (f, v) in row.iter_mut().enumerate() {
            *v = (1.0 + spec.at(t, f).norm()).ln();
        }
    }
    x
}

fn apply_mask(spec: &ComplexSpectrogram, logits: &Mat) -> (ComplexSpectrogram, Mat) {
    let mut masked = ComplexSpectrogram::zeros(spec.frames);
    let mut mask = Mat::zeros(spec.frames, N_BINS);
    for t in 0..spec.frames {
        for f in 0..N_BINS {
            let m = 1.0 / (1.0 + (-logits.at(t, f)).exp());
            *mask.at_mut(t, f) = m;
            *masked.at_mut(t, f) = spec.at(t, f) * m;
        }
    }
    (masked, mask)
}

/// Mask the noisy spectrogram and resynthesize with the noisy phase.
/// Output length equals input length exactly.
pub fn enhance(y_noisy: &Waveform, model: &EnhancerModel) -> Result<Waveform> {
    let spec = stft(y_noisy)?;
    let x = log_mag_features(&spec);
    let (logits, _, _) = model.net.forward(&model.params, &x, None)?;
    let (masked, _) = apply_mask(&spec, &logits);
    istft(&masked, y_noisy.len())
}

/// One epoch-history row; training and validation splits alternate.
#[derive(Clone, Debug, Serialize)]
pub struct EnhancerEpochStats {
    pub epoch: usize,
    pub split: &'static str,
    pub l_base: f64,
    pub l_tap: f64,
    pub l_total: f64,
}

pub fn write_enhancer_history_csv(path: &Path, history: &[EnhancerEpochStats]) -> Result<()> {
    let mut out = String::from("epoch,split,l_base,l_tap,l_total\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.epoch, h.split, h.l_base, h.l_tap, h.l_total
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct ClipData {
    spec: ComplexSpectrogram,
    feats: Mat,
    a_clean: Mat,
    clean: Waveform,
    noisy_len: usize,
}

/// Forward chain for one clip under the given parameter store; used by
/// the training loop and shared with gradient checks.
fn clip_loss_with(
    store: &ParamStore,
    net: &SequenceModel,
    clip: &ClipData,
    cfg: &JointLossConfig,
    est: &EstimatorModel,
) -> Result<LossComponents> {
    let (logits, _, _) = net.forward(store, &clip.feats, None)?;
    let (masked, _) = apply_mask(&clip.spec, &logits);
    let y_enh = istft(&masked, clip.noisy_len)?;
    joint_loss(&y_enh, &clip.clean, &clip.a_clean, cfg, est)
}

/// Loss for one clip plus gradient accumulation into `grads`, scaled by
/// `weight`. The chain: joint loss -> waveform gradient -> ISTFT adjoint
/// -> mask sigmoid -> GRU/head parameters.
fn clip_loss_and_grad(
    store: &ParamStore,
    net: &SequenceModel,
    clip: &ClipData,
    cfg: &JointLossConfig,
    est: &EstimatorModel,
    weight: f64,
    grads: &mut ParamStore,
) -> Result<LossComponents> {
    let (logits, _, cache) = net.forward(store, &clip.feats, None)?;
    let (masked, mask) = apply_mask(&clip.spec, &logits);
    let y_enh = istft(&masked, clip.noisy_len)?;

    let (l_base, mut g_wave) = base_loss_grad(&y_enh, &clip.clean, cfg.base_loss)?;
    let l_tap = if cfg.lambda_tap > 0.0 {
        let (l_tap, g_tap) = tap_loss_grad(&y_enh, &clip.a_clean, est)?;
        for (g, gt) in g_wave.iter_mut().zip(g_tap.iter()) {
            *g += cfg.lambda_tap * gt;
        }
        l_tap
    } else {
        tap_loss(&y_enh, &clip.a_clean, est)?
    };

    let g_masked = istft_adjoint(&g_wave, clip.spec.frames)?;
    let mut g_logits = Mat::zeros(clip.spec.frames, N_BINS);
    for t in 0..clip.spec.frames {
        for f in 0..N_BINS {
            let s = clip.spec.at(t, f);
            let gm = g_masked.at(t, f);
            let dmask = gm.re * s.re + gm.im * s.im;
            let m = mask.at(t, f);
            *g_logits.at_mut(t, f) = weight * dmask * m * (1.0 - m);
        }
    }
    net.backward(store, &cache, &g_logits, None, grads)?;
    Ok(LossComponents { l_base, l_tap, l_total: l_base + cfg.lambda_tap * l_tap })
}

/// Train the mask enhancer on aligned (noisy, clean) pairs with the
/// estimator frozen. Whole clips are short enough here that BPTT runs
/// over the full sequence; `cfg.bptt_chunk` is not used.
pub fn train_enhancer(
    pairs: &[(Waveform, Waveform)],
    hidden: usize,
    n_layers: usize,
    jcfg: &JointLossConfig,
    tcfg: &TrainConfig,
    est: &EstimatorModel,
) -> Result<(EnhancerModel, Vec<EnhancerEpochStats>)> {
    jcfg.validate()?;
    tcfg.validate()?;
    if pairs.is_empty() {
        return Err(TapError::InvalidInput("empty training pairs".into()));
    }

    let mut data: Vec<ClipData> = Vec::with_capacity(pairs.len());
    for (noisy, clean) in pairs {
        if noisy.len() != clean.len() {
            return Err(TapError::ShapeMismatch(format!(
                "pair lengths differ: noisy {} vs clean {}",
                noisy.len(),
                clean.len()
            )));
        }
        let a_clean = match jcfg.tap_target {
            TapTarget::EstimatorOnClean => est.predict(clean)?,
            TapTarget::ExtractorOnClean => {
                let raw = crate::features::extract_taps(clean)?;
                est.stats.standardize(&raw)?
            }
        };
        let spec = stft(noisy)?;
        let feats = log_mag_features(&spec);
        data.push(ClipData { spec, feats, a_clean, clean: clean.clone(), noisy_len: noisy.len() });
    }

    let mut model = EnhancerModel::new(hidden, n_layers, tcfg.seed)?;
    let mut opt = AdamState::new(&model.params, tcfg.lr);
    let mut order_rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut order_rng);
    let n_val = usize::max(1, (data.len() as f64 * tcfg.val_fraction).floor() as usize);
    if n_val >= data.len() {
        return Err(TapError::InsufficientSplit(format!(
            "{} pairs cannot give {n_val} validation pairs and a non-empty training set",
            data.len()
        )));
    }
    let val_idx = idx.split_off(data.len() - n_val);
    let train_idx = idx;

    let mut history = Vec::with_capacity(tcfg.epochs * 2);
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();

    let mut order = train_idx.clone();
    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut order_rng);
        let mut train_acc = LossComponents { l_base: 0.0, l_tap: 0.0, l_total: 0.0 };
        for batch in order.chunks(tcfg.batch) {
            let mut grads = model.params.zeros_like();
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let c = clip_loss_and_grad(
                    &model.params,
                    &model.net,
                    &data[i],
                    jcfg,
                    est,
                    weight,
                    &mut grads,
                )?;
                if !c.l_total.is_finite() {
                    return Err(TapError::NonFinite(format!(
                        "training loss at epoch {epoch}, pair {i}"
                    )));
                }
                train_acc.l_base += c.l_base;
                train_acc.l_tap += c.l_tap;
                train_acc.l_total += c.l_total;
            }
            clip_global_norm(&mut grads, 5.0);
            opt.step(&mut model.params, &grads)?;
        }
        let nt = train_idx.len() as f64;
        history.push(EnhancerEpochStats {
            epoch,
            split: "train",
            l_base: train_acc.l_base / nt,
            l_tap: train_acc.l_tap / nt,
            l_total: train_acc.l_total / nt,
        });

        let mut val_acc = LossComponents { l_base: 0.0, l_tap: 0.0, l_total: 0.0 };
        for &i in &val_idx {
            let c = clip_loss_with(&model.params, &model.net, &data[i], jcfg, est)?;
            val_acc.l_base += c.l_base;
            val_acc.l_tap += c.l_tap;
            val_acc.l_total += c.l_total;
        }
        let nv = val_idx.len() as f64;
        let val = EnhancerEpochStats {
            epoch,
            split: "val",
            l_base: val_acc.l_base / nv,
            l_tap: val_acc.l_tap / nv,
            l_total: val_acc.l_total / nv,
        };
        if val.l_total < best_val {
            best_val = val.l_total;
            best_params = model.params.clone();
        }
        history.push(val);
    }

    model.params = best_params;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::TapStats;
    use crate::siggen;
    use crate::signal::mix_at_snr;
    use crate::{HOP, N_FFT, N_PARAMS};
    use rand::Rng;

    fn flat_stats() -> TapStats {
        TapStats { means: vec![0.0; N_PARAMS], stds: vec![1.0; N_PARAMS] }
    }

    fn tiny_estimator(seed: u64) -> EstimatorModel {
        EstimatorModel::new(8, 1, flat_stats(), seed).unwrap()
    }

    #[test]
    fn tap_loss_composes_predict_and_mae() {
        let est = tiny_estimator(0);
        let y = siggen::speechlike(0.3, 1);
        let target = Mat::zeros(stft(&y).unwrap().frames, N_PARAMS);
        let loss = tap_loss(&y, &target, &est).unwrap();
        let pred = est.predict(&y).unwrap();
        let (expect, _) = mae_loss(&pred, &target).unwrap();
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn loss_at_own_prediction_is_zero_with_zero_gradient() {
        let est = tiny_estimator(1);
        let y = siggen::white_noise(0.4, 0.2, 2);
        let a = est.predict(&y).unwrap();
        let (loss, grad) = tap_loss_grad(&y, &a, &est).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_frame_single_deviation_example() {
        let est = tiny_estimator(2);
        // N_FFT + HOP samples make exactly two frames.
        let y = siggen::white_noise(0.4, (N_FFT + HOP) as f64 / 16_000.0, 3);
        let mut a = est.predict(&y).unwrap();
        assert_eq!(a.rows, 2);
        *a.at_mut(1, 13) += 1.0;
        let loss = tap_loss(&y, &a, &est).unwrap();
        assert!((loss - 0.02).abs() < 1e-12);
    }

    #[test]
    fn frame_count_mismatch_is_rejected() {
        let est = tiny_estimator(3);
        let y = siggen::white_noise(0.4, 0.2, 4);
        let a = Mat::zeros(3, N_PARAMS);
        assert!(tap_loss(&y, &a, &est).is_err());
    }

    #[test]
    fn waveform_gradient_matches_finite_differences() {
        // 0.25 s chain: MAE -> GRU -> featurization -> STFT adjoint.
        let est = tiny_estimator(4);
        let y = siggen::speechlike(0.25, 5);
        // Offset target keeps every |pred - target| away from its kink.
        let mut a = est.predict(&siggen::white_noise(0.3, 0.25, 6)).unwrap();
        for v in a.data_mut() {
            *v += 0.5;
        }
        let (_, grad) = tap_loss_grad(&y, &a, &est).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-4;
        let mut checked = 0;
        while checked < 80 {
            let i = rng.gen_range(0..y.len());
            let mut yp = y.clone();
            yp.samples[i] += h;
            let lp = tap_loss(&yp, &a, &est).unwrap();
            yp.samples[i] = y.samples[i] - h;
            let lm = tap_loss(&yp, &a, &est).unwrap();
            let num = (lp - lm) / (2.0 * h);
            let ana = grad[i];
            if ana.abs() + num.abs() < 1e-10 {
                continue; // sample outside any analysis frame's support
            }
            let rel = (ana - num).abs() / (ana.abs() + num.abs());
            assert!(rel < 1e-3, "sample {i}: analytic {ana} vs numeric {num}");
            checked += 1;
        }
    }

    #[test]
    fn saturated_mask_reconstructs_input() {
        let mut model = EnhancerModel::new(4, 1, 0).unwrap();
        // Zero the head weights and drive every logit to +60: mask = 1.
        let wi = model.net.head.w;
        model.params.get_mut(wi).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let bi = model.net.head.b;
        model.params.get_mut(bi).data_mut().iter_mut().for_each(|v| *v = 60.0);

        let y = siggen::speechlike(0.4, 8);
        let out = enhance(&y, &model).unwrap();
        assert_eq!(out.len(), y.len());
        let frames = stft(&y).unwrap().frames;
        for i in HOP..(frames * HOP) {
            assert!(
                (out.samples[i] - y.samples[i]).abs() < 1e-6,
                "sample {i} differs: {} vs {}",
                out.samples[i],
                y.samples[i]
            );
        }
    }

    #[test]
    fn zero_mask_gives_silence() {
        let mut model = EnhancerModel::new(4, 1, 0).unwrap();
        let wi = model.net.head.w;
        model.params.get_mut(wi).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let bi = model.net.head.b;
        model.params.get_mut(bi).data_mut().iter_mut().for_each(|v| *v = -60.0);
        let y = siggen::speechlike(0.3, 9);
        let out = enhance(&y, &model).unwrap();
        assert!(out.samples.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn enhance_is_deterministic_and_length_preserving() {
        let model = EnhancerModel::new(6, 1, 11).unwrap();
        let y = siggen::white_noise(0.5, 0.37, 12);
        let a = enhance(&y, &model).unwrap();
        let b = enhance(&y, &model).unwrap();
        assert_eq!(a.len(), y.len());
        for (x, z) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(x.to_bits(), z.to_bits());
        }
    }

    #[test]
    fn joint_loss_zero_for_identical_signals() {
        let est = tiny_estimator(5);
        let y = siggen::speechlike(0.3, 13);
        let a = est.predict(&y).unwrap();
        for kind in [BaseLoss::L1Waveform, BaseLoss::L2SpectralMagnitude] {
            let cfg = JointLossConfig { base_loss: kind, ..JointLossConfig::default() };
            let c = joint_loss(&y, &y, &a, &cfg, &est).unwrap();
            assert_eq!(c.l_base, 0.0);
            assert_eq!(c.l_tap, 0.0);
            assert_eq!(c.l_total, 0.0);
        }
    }

    #[test]
    fn zero_lambda_total_equals_base_exactly() {
        let est = tiny_estimator(6);
        let clean = siggen::speechlike(0.3, 14);
        let noisy = siggen::white_noise(0.3, 0.3, 15);
        let a = est.predict(&clean).unwrap();
        let cfg = JointLossConfig { lambda_tap: 0.0, ..JointLossConfig::default() };
        let c = joint_loss(&noisy, &clean, &a, &cfg, &est).unwrap();
        assert_eq!(c.l_total.to_bits(), c.l_base.to_bits());
    }

    #[test]
    fn joint_loss_matches_independent_recomputation() {
        let est = tiny_estimator(7);
        let clean = siggen::speechlike(0.3, 16);
        let noisy = siggen::white_noise(0.4, 0.3, 17);
        let a = est.predict(&clean).unwrap();
        let cfg = JointLossConfig {
            base_loss: BaseLoss::L2SpectralMagnitude,
            lambda_tap: 0.7,
            ..JointLossConfig::default()
        };
        let c = joint_loss(&noisy, &clean, &a, &cfg, &est).unwrap();

        let se = stft(&noisy).unwrap();
        let sc = stft(&clean).unwrap();
        let mut sum = 0.0;
        for (x, z) in se.data.iter().zip(sc.data.iter()) {
            sum += (x.norm() - z.norm()).powi(2);
        }
        let l_base = sum / se.data.len() as f64;
        let pred = est.predict(&noisy).unwrap();
        let mut abs = 0.0;
        for (p, t) in pred.data().iter().zip(a.data().iter()) {
            abs += (p - t).abs();
        }
        let l_tap = abs / pred.data().len() as f64;
        assert!((c.l_base - l_base).abs() < 1e-12);
        assert!((c.l_tap - l_tap).abs() < 1e-12);
        assert!((c.l_total - (l_base + 0.7 * l_tap)).abs() < 1e-12);
    }

    #[test]
    fn enhancer_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enh.ckpt");
        let model = EnhancerModel::new(4, 1, 18).unwrap();
        save_enhancer(&path, &model).unwrap();
        let loaded = load_enhancer(&path).unwrap();
        assert_eq!(loaded.hidden, 4);
        let y = siggen::white_noise(0.5, 0.25, 19);
        let a = enhance(&y, &model).unwrap();
        let b = enhance(&y, &loaded).unwrap();
        for (x, z) in a.samples.iter().zip(b.samples.iter()) {
            assert_eq!(x.to_bits(), z.to_bits());
        }
    }

    fn toy_pairs(n: usize, seconds: f64, seed: u64) -> Vec<(Waveform, Waveform)> {
        (0..n)
            .map(|i| {
                let clean = siggen::speechlike(seconds, seed + i as u64);
                let noise = siggen::white_noise(0.5, seconds + 0.1, seed + 1000 + i as u64);
                let mix = mix_at_snr(&clean, &noise, 5.0, seed + 2000 + i as u64).unwrap();
                (mix.noisy, mix.clean)
            })
            .collect()
    }

    #[test]
    fn lambda_zero_and_one_diverge_after_one_step() {
        let est = tiny_estimator(8);
        let pairs = toy_pairs(3, 0.25, 30);
        let tcfg = TrainConfig { epochs: 1, lr: 1e-3, val_fraction: 0.34, ..TrainConfig::default() };
        let j0 = JointLossConfig { lambda_tap: 0.0, ..JointLossConfig::default() };
        let j1 = JointLossConfig { lambda_tap: 1.0, ..JointLossConfig::default() };
        let (m0, _) = train_enhancer(&pairs, 4, 1, &j0, &tcfg, &est).unwrap();
        let (m1, _) = train_enhancer(&pairs, 4, 1, &j1, &tcfg, &est).unwrap();
        let differs = m0
            .params
            .iter()
            .zip(m1.params.iter())
            .any(|(a, b)| a.value.data() != b.value.data());
        assert!(differs);
    }

    #[test]
    fn same_seed_training_is_bit_identical() {
        let est = tiny_estimator(9);
        let pairs = toy_pairs(3, 0.25, 40);
        let tcfg = TrainConfig { epochs: 2, lr: 1e-3, val_fraction: 0.34, ..TrainConfig::default() };
        let jcfg = JointLossConfig::default();
        let (ma, ha) = train_enhancer(&pairs, 4, 1, &jcfg, &tcfg, &est).unwrap();
        let (mb, hb) = train_enhancer(&pairs, 4, 1, &jcfg, &tcfg, &est).unwrap();
        for (a, b) in ma.params.iter().zip(mb.params.iter()) {
            for (x, z) in a.value.data().iter().zip(b.value.data().iter()) {
                assert_eq!(x.to_bits(), z.to_bits());
            }
        }
        for (a, b) in ha.iter().zip(hb.iter()) {
            assert_eq!(a.l_total.to_bits(), b.l_total.to_bits());
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        // Full chain through enhance + joint loss, hidden-4 enhancer,
        // quarter-second clip, subset of parameters.
        let est = tiny_estimator(10);
        let clean = siggen::speechlike(0.25, 50);
        let noise = siggen::white_noise(0.5, 0.35, 51);
        let mix = mix_at_snr(&clean, &noise, 5.0, 52).unwrap();
        let model = EnhancerModel::new(4, 1, 53).unwrap();
        let jcfg = JointLossConfig {
            base_loss: BaseLoss::L2SpectralMagnitude,
            lambda_tap: 1.0,
            tap_target: TapTarget::EstimatorOnClean,
        };
        let a_clean = est.predict(&mix.clean).unwrap();
        let spec = stft(&mix.noisy).unwrap();
        let clip = ClipData {
            feats: log_mag_features(&spec),
            spec,
            a_clean,
            clean: mix.clean.clone(),
            noisy_len: mix.noisy.len(),
        };

        let mut grads = model.params.zeros_like();
        clip_loss_and_grad(&model.params, &model.net, &clip, &jcfg, &est, 1.0, &mut grads)
            .unwrap();

        let mut store = model.params.clone();
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        for _ in 0..60 {
            let pi = rng.gen_range(0..store.len());
            let count = store.get(pi).data().len();
            let i = rng.gen_range(0..count);
            let orig = store.get(pi).data()[i];
            store.get_mut(pi).data_mut()[i] = orig + h;
            let lp = clip_loss_with(&store, &model.net, &clip, &jcfg, &est).unwrap().l_total;
            store.get_mut(pi).data_mut()[i] = orig - h;
            let lm = clip_loss_with(&store, &model.net, &clip, &jcfg, &est).unwrap().l_total;
            store.get_mut(pi).data_mut()[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            let ana = grads.get(pi).data()[i];
            let rel = (ana - num).abs() / f64::max(1e-8, ana.abs() + num.abs());
            assert!(
                rel < 1e-3,
                "param {} elem {i}: analytic {ana} vs numeric {num}",
                store.name_of(pi)
            );
        }
    }

    #[test]
    fn trained_model_improves_snr_on_held_out_mix() {
        let est = tiny_estimator(11);
        let pairs = toy_pairs(8, 0.4, 60);
        let tcfg = TrainConfig {
            epochs: 12,
            lr: 3e-3,
            val_fraction: 0.2,
            seed: 2,
            ..TrainConfig::default()
        };
        let jcfg = JointLossConfig { lambda_tap: 0.0, ..JointLossConfig::default() };
        let (model, history) = train_enhancer(&pairs, 8, 1, &jcfg, &tcfg, &est).unwrap();
        let first = &history[0];
        let last = history.iter().rev().find(|h| h.split == "train").unwrap();
        assert!(
            last.l_total < first.l_total,
            "training loss went {} -> {}",
            first.l_total,
            last.l_total
        );

        // Held-out mixture: output should sit closer to the clean signal
        // than the input does.
        let clean = siggen::speechlike(0.4, 99);
        let noise = siggen::white_noise(0.5, 0.5, 98);
        let mix = mix_at_snr(&clean, &noise, 5.0, 97).unwrap();
        let out = enhance(&mix.noisy, &model).unwrap();
        let err_in: f64 = mix
            .noisy
            .samples
            .iter()
            .zip(mix.clean.samples.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let err_out: f64 = out
            .samples
            .iter()
            .zip(mix.clean.samples.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        assert!(
            err_out < err_in,
            "residual energy grew: {err_out} vs {err_in}"
        );
    }
}
