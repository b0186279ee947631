//! Recurrent estimator mapping a complex spectrogram to the 25 acoustic
//! parameters, with its training loop and checkpoint plumbing.
//!
//! Features are the real and imaginary parts of each frame, concatenated
//! and log-compressed with sign(v) * ln(1 + |v|). Predictions live in
//! standardized parameter space; the standardization statistics travel
//! inside the checkpoint so downstream code can invert them.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};
use crate::features::{extract_taps, TapStats};
use crate::neural::{
    clip_global_norm, load_checkpoint, mae_loss, save_checkpoint, AdamState, ParamStore,
    SequenceModel,
};
use crate::signal::{stft, ComplexSpectrogram, FrameGrid, Waveform};
use crate::{Mat, N_BINS, N_PARAMS};

/// 257 real + 257 imaginary parts per frame.
pub const FEAT_DIM: usize = 2 * N_BINS;

pub const MODEL_KIND: &str = "tap-estimator";

#[inline]
fn signed_log(v: f64) -> f64 {
    v.signum() * (1.0 + v.abs()).ln()
}

/// d/dv of signed_log. Continuous at 0 with value 1.
#[inline]
pub(crate) fn signed_log_deriv(v: f64) -> f64 {
    1.0 / (1.0 + v.abs())
}

/// Frame-wise feature matrix [re_0..re_256, im_0..im_256], log-compressed.
pub fn featurize_spectrogram(spec: &ComplexSpectrogram) -> Mat {
    let mut x = Mat::zeros(spec.frames, FEAT_DIM);
    for t in 0..spec.frames {
        let row = x.row_mut(t);
        for f in 0..N_BINS {
            let c = spec.at(t, f);
            row[f] = signed_log(c.re);
            row[N_BINS + f] = signed_log(c.im);
        }
    }
    x
}

pub fn featurize(y: &Waveform) -> Result<Mat> {
    Ok(featurize_spectrogram(&stft(y)?))
}

/// Pull a feature-space gradient back to spectrogram space. The result
/// holds d/d(re) and d/d(im) in its re/im slots, ready for stft_adjoint.
pub fn featurize_grad(spec: &ComplexSpectrogram, grad_x: &Mat) -> Result<ComplexSpectrogram> {
    if grad_x.rows != spec.frames || grad_x.cols != FEAT_DIM {
        return Err(TapError::ShapeMismatch(format!(
            "feature gradient {}x{} against {} frames",
            grad_x.rows, grad_x.cols, spec.frames
        )));
    }
    let mut out = ComplexSpectrogram::zeros(spec.frames);
    for t in 0..spec.frames {
        let row = grad_x.row(t);
        for f in 0..N_BINS {
            let c = spec.at(t, f);
            let g = out.at_mut(t, f);
            g.re = row[f] * signed_log_deriv(c.re);
            g.im = row[N_BINS + f] * signed_log_deriv(c.im);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct EstimatorModel {
    pub params: ParamStore,
    pub net: SequenceModel,
    pub stats: TapStats,
    pub grid: FrameGrid,
    pub hidden: usize,
    pub n_layers: usize,
    pub seed: u64,
}

impl EstimatorModel {
    pub fn new(hidden: usize, n_layers: usize, stats: TapStats, seed: u64) -> Result<EstimatorModel> {
        if hidden == 0 || n_layers == 0 {
            return Err(TapError::InvalidInput("estimator needs at least one gru layer".into()));
        }
        stats.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = SequenceModel::new(&mut params, FEAT_DIM, hidden, n_layers, N_PARAMS, &mut rng)?;
        Ok(EstimatorModel {
            params,
            net,
            stats,
            grid: FrameGrid::canonical(),
            hidden,
            n_layers,
            seed,
        })
    }

    /// Standardized parameter predictions, one row per frame.
    pub fn predict(&self, y: &Waveform) -> Result<Mat> {
        self.grid.check_canonical()?;
        let x = featurize(y)?;
        let (pred, _, _) = self.net.forward(&self.params, &x, None)?;
        Ok(pred)
    }

    fn hyper_json(&self) -> serde_json::Value {
        serde_json::json!({
            "hidden": self.hidden,
            "layers": self.n_layers,
            "stats": self.stats,
            "grid": self.grid,
        })
    }
}

pub fn save_estimator(path: &Path, model: &EstimatorModel) -> Result<()> {
    save_checkpoint(path, &model.params, MODEL_KIND, model.hyper_json(), model.seed)
}

#[derive(Deserialize)]
struct EstimatorHyper {
    hidden: usize,
    layers: usize,
    stats: TapStats,
    grid: FrameGrid,
}

/// Rebuild a model from a checkpoint. Architecture comes entirely from
/// the file; callers holding a different requested size should compare
/// against the returned model and warn, not fail.
pub fn load_estimator(path: &Path) -> Result<EstimatorModel> {
    let (header, params) = load_checkpoint(path)?;
    if header.model_kind != MODEL_KIND {
        return Err(TapError::Checkpoint(format!(
            "expected a {MODEL_KIND} checkpoint, found '{}'",
            header.model_kind
        )));
    }
    let hyper: EstimatorHyper = serde_json::from_value(header.hyper)
        .map_err(|e| TapError::Checkpoint(format!("bad hyperparameters: {e}")))?;
    hyper.grid.check_canonical()?;
    hyper.stats.validate()?;
    let net = SequenceModel::attach(&params, FEAT_DIM, hyper.hidden, hyper.layers, N_PARAMS)?;
    Ok(EstimatorModel {
        params,
        net,
        stats: hyper.stats,
        grid: hyper.grid,
        hidden: hyper.hidden,
        n_layers: hyper.layers,
        seed: header.rng_seed,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Clips per optimizer step.
    pub batch: usize,
    /// Truncated-BPTT window in frames; hidden state carries across
    /// windows within a clip, gradients do not.
    pub bptt_chunk: usize,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 30,
            batch: 1,
            bptt_chunk: 128,
            seed: 0,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(TapError::InvalidInput("learning rate must be finite and >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(TapError::InvalidInput("epochs must be >= 1".into()));
        }
        if self.batch == 0 || self.bptt_chunk == 0 {
            return Err(TapError::InvalidInput("batch and bptt_chunk must be >= 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(TapError::InvalidInput("validation fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
}

pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,train_mae,val_mae\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.epoch, h.train_mae, h.val_mae));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Deterministic train/validation index split. At least one clip lands
/// in validation; errors when that would empty the training side.
fn split_indices(n: usize, val_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = usize::max(1, (n as f64 * val_fraction).floor() as usize);
    if n_val >= n {
        return Err(TapError::InsufficientSplit(format!(
            "{n} clips cannot give {n_val} validation clips and a non-empty training set"
        )));
    }
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

/// Full-corpus MAE of the model against precomputed standardized targets.
fn eval_mae(model: &EstimatorModel, data: &[(Mat, Mat)], indices: &[usize]) -> Result<f64> {
    let mut abs_sum = 0.0;
    let mut count = 0usize;
    for &i in indices {
        let (x, target) = &data[i];
        let (pred, _, _) = model.net.forward(&model.params, x, None)?;
        for (p, t) in pred.data().iter().zip(target.data().iter()) {
            abs_sum += (p - t).abs();
        }
        count += pred.data().len();
    }
    Ok(abs_sum / count as f64)
}

/// Train an estimator against the reference extractor. Targets are
/// extract_taps output standardized with statistics pooled over the whole
/// corpus; those statistics ship inside the returned model.
pub fn train_estimator(
    corpus: &[Waveform],
    hidden: usize,
    n_layers: usize,
    cfg: &TrainConfig,
) -> Result<(EstimatorModel, Vec<EpochStats>)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TapError::InvalidInput("empty corpus".into()));
    }
    // Split feasibility is cheap; fail before extracting anything.
    let n_val = usize::max(1, (corpus.len() as f64 * cfg.val_fraction).floor() as usize);
    if n_val >= corpus.len() {
        return Err(TapError::InsufficientSplit(format!(
            "{} clips cannot give {n_val} validation clips and a non-empty training set",
            corpus.len()
        )));
    }

    // Reference targets first: features and raw parameters per clip.
    let mut feats: Vec<Mat> = Vec::with_capacity(corpus.len());
    let mut taps: Vec<Mat> = Vec::with_capacity(corpus.len());
    for y in corpus {
        feats.push(featurize(y)?);
        taps.push(extract_taps(y)?);
    }
    let stats = TapStats::compute(&taps)?;
    let mut data: Vec<(Mat, Mat)> = Vec::with_capacity(corpus.len());
    for (x, t) in feats.into_iter().zip(taps.iter()) {
        data.push((x, stats.standardize(t)?));
    }

    let mut model = EstimatorModel::new(hidden, n_layers, stats, cfg.seed)?;
    let mut opt = AdamState::new(&model.params, cfg.lr);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let (train_idx, val_idx) = split_indices(data.len(), cfg.val_fraction, &mut order_rng)?;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();

    let mut order = train_idx.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut abs_sum = 0.0;
        let mut count = 0usize;
        for batch in order.chunks(cfg.batch) {
            let mut grads = model.params.zeros_like();
            for &i in batch {
                let (x, target) = &data[i];
                let t_clip = x.rows;
                let mut h = None;
                let mut t0 = 0;
                while t0 < t_clip {
                    let t1 = usize::min(t0 + cfg.bptt_chunk, t_clip);
                    let xw = Mat::from_fn(t1 - t0, x.cols, |r, c| x.at(t0 + r, c));
                    let tw = Mat::from_fn(t1 - t0, target.cols, |r, c| target.at(t0 + r, c));
                    let (yw, h_next, cache) = model.net.forward(&model.params, &xw, h.as_deref())?;
                    let (loss_w, mut gy) = mae_loss(&yw, &tw)?;
                    if !loss_w.is_finite() {
                        return Err(TapError::NonFinite(format!(
                            "training loss at epoch {epoch}, clip {i}, frame {t0}"
                        )));
                    }
                    // mae_loss normalizes per window; rescale so each
                    // window contributes its share of the clip MAE.
                    let w = (t1 - t0) as f64 / t_clip as f64;
                    for g in gy.data_mut() {
                        *g *= w / batch.len() as f64;
                    }
                    model.net.backward(&model.params, &cache, &gy, None, &mut grads)?;
                    abs_sum += loss_w * (t1 - t0) as f64 * target.cols as f64;
                    count += (t1 - t0) * target.cols;
                    h = Some(h_next);
                    t0 = t1;
                }
            }
            clip_global_norm(&mut grads, 5.0);
            opt.step(&mut model.params, &grads)?;
        }
        let train_mae = abs_sum / count as f64;
        let val_mae = eval_mae(&model, &data, &val_idx)?;
        if val_mae < best_val {
            best_val = val_mae;
            best_params = model.params.clone();
        }
        history.push(EpochStats { epoch, train_mae, val_mae });
    }

    model.params = best_params;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siggen;
    use crate::{HOP, N_FFT, SAMPLE_RATE};
    use num_complex::Complex64;
    use rand::Rng;

    fn flat_stats() -> TapStats {
        TapStats { means: vec![0.0; N_PARAMS], stds: vec![1.0; N_PARAMS] }
    }

    #[test]
    fn zero_signal_gives_zero_features() {
        let y = Waveform::new(vec![0.0; N_FFT + 3 * HOP], SAMPLE_RATE);
        let x = featurize(&y).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_frames_match_stft_frames() {
        let y = siggen::white_noise(0.7, 0.3, 11);
        let x = featurize(&y).unwrap();
        let spec = stft(&y).unwrap();
        assert_eq!(x.rows, spec.frames);
        assert_eq!(x.cols, FEAT_DIM);
    }

    #[test]
    fn dc_signal_has_silent_imaginary_half() {
        let y = Waveform::new(vec![0.25; SAMPLE_RATE as usize / 4], SAMPLE_RATE);
        let x = featurize(&y).unwrap();
        for t in 0..x.rows {
            for f in 0..N_BINS {
                assert!(
                    x.at(t, N_BINS + f).abs() < 1e-10,
                    "imag feature {f} at frame {t} is {}",
                    x.at(t, N_BINS + f)
                );
            }
        }
    }

    #[test]
    fn featurize_grad_matches_finite_differences() {
        let y = siggen::white_noise(0.3, 0.1, 5);
        let spec = stft(&y.scaled(0.3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gx = Mat::from_fn(spec.frames, FEAT_DIM, |_, _| rng.gen_range(-1.0..1.0));
        let gspec = featurize_grad(&spec, &gx).unwrap();

        // loss = dot(featurize(spec), gx); perturb a few entries.
        let h = 1e-6;
        for &(t, f, imag) in &[(0usize, 3usize, false), (1, 100, true), (0, 256, false), (1, 0, true)] {
            let mut sp = spec.clone();
            let dot = |s: &ComplexSpectrogram| {
                featurize_spectrogram(s)
                    .data()
                    .iter()
                    .zip(gx.data().iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let c = sp.at(t, f);
            let bump = if imag { Complex64::new(0.0, h) } else { Complex64::new(h, 0.0) };
            *sp.at_mut(t, f) = c + bump;
            let lp = dot(&sp);
            *sp.at_mut(t, f) = c - bump;
            let lm = dot(&sp);
            let num = (lp - lm) / (2.0 * h);
            let g = gspec.at(t, f);
            let ana = if imag { g.im } else { g.re };
            assert!(
                (ana - num).abs() / f64::max(1e-8, ana.abs() + num.abs()) < 1e-4,
                "t {t} f {f} imag {imag}: {ana} vs {num}"
            );
        }
    }

    #[test]
    fn fresh_model_predicts_finite_correct_shape() {
        let model = EstimatorModel::new(8, 1, flat_stats(), 0).unwrap();
        let y = siggen::white_noise(0.5, 0.2, 3);
        let pred = model.predict(&y).unwrap();
        assert_eq!(pred.cols, N_PARAMS);
        assert_eq!(pred.rows, stft(&y).unwrap().frames);
        assert!(pred.all_finite());
        let again = model.predict(&y).unwrap();
        for (a, b) in pred.data().iter().zip(again.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn save_load_round_trip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("est.ckpt");
        let model = EstimatorModel::new(8, 2, flat_stats(), 3).unwrap();
        save_estimator(&path, &model).unwrap();
        let loaded = load_estimator(&path).unwrap();
        assert_eq!(loaded.hidden, 8);
        assert_eq!(loaded.n_layers, 2);
        assert_eq!(loaded.stats, model.stats);
        let y = siggen::tone(440.0, 0.4, 0.25);
        let a = model.predict(&y).unwrap();
        let b = loaded.predict(&y).unwrap();
        for (x, z) in a.data().iter().zip(b.data().iter()) {
            assert_eq!(x.to_bits(), z.to_bits());
        }
    }

    #[test]
    fn shapes_come_from_the_file_not_the_caller() {
        // A checkpoint written at hidden 32 loads as hidden 32 regardless
        // of what any surrounding config wants; the mismatch is the
        // caller's to detect and warn about.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("est32.ckpt");
        let model = EstimatorModel::new(32, 1, flat_stats(), 7).unwrap();
        save_estimator(&path, &model).unwrap();
        let loaded = load_estimator(&path).unwrap();
        assert_eq!(loaded.hidden, 32);
        assert_eq!(loaded.n_layers, 1);
        assert!(loaded.predict(&siggen::white_noise(0.4, 0.2, 9)).is_ok());
    }

    #[test]
    fn single_clip_split_is_insufficient() {
        let corpus = vec![siggen::white_noise(0.5, 0.2, 0)];
        let cfg = TrainConfig { val_fraction: 0.5, epochs: 1, ..TrainConfig::default() };
        match train_estimator(&corpus, 8, 1, &cfg) {
            Err(TapError::InsufficientSplit(_)) => {}
            other => panic!("expected insufficient split, got {other:?}"),
        }
    }

    #[test]
    fn zero_learning_rate_keeps_history_flat() {
        let corpus: Vec<Waveform> = (0..4)
            .map(|i| siggen::speechlike(0.5, 100 + i))
            .collect();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 3,
            val_fraction: 0.25,
            ..TrainConfig::default()
        };
        let (_, history) = train_estimator(&corpus, 8, 1, &cfg).unwrap();
        for h in &history[1..] {
            assert!((h.train_mae - history[0].train_mae).abs() < 1e-12);
            assert!((h.val_mae - history[0].val_mae).abs() < 1e-12);
        }
    }

    #[test]
    fn short_training_run_reduces_loss_and_is_deterministic() {
        let corpus: Vec<Waveform> = (0..6)
            .map(|i| match i % 3 {
                0 => siggen::speechlike(0.6, 200 + i as u64),
                1 => siggen::tone(180.0 + 40.0 * i as f64, 0.4, 0.6),
                _ => siggen::white_noise(0.6, 0.25, 300 + i as u64),
            })
            .collect();
        let cfg = TrainConfig {
            lr: 1e-3,
            epochs: 6,
            val_fraction: 0.2,
            seed: 1,
            ..TrainConfig::default()
        };
        let (model, history) = train_estimator(&corpus, 8, 1, &cfg).unwrap();
        let first = history.first().unwrap();
        let last = history.last().unwrap();
        assert!(
            last.train_mae < first.train_mae,
            "train MAE went {} -> {}",
            first.train_mae,
            last.train_mae
        );
        // Standardization round trip through the embedded stats.
        let pred = model.predict(&corpus[0]).unwrap();
        let raw = model.stats.destandardize(&pred).unwrap();
        let back = model.stats.standardize(&raw).unwrap();
        for (a, b) in pred.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        let (_, history2) = train_estimator(&corpus, 8, 1, &cfg).unwrap();
        for (a, b) in history.iter().zip(history2.iter()) {
            assert_eq!(a.train_mae.to_bits(), b.train_mae.to_bits());
            assert_eq!(a.val_mae.to_bits(), b.val_mae.to_bits());
        }
    }

    #[test]
    fn history_csv_has_expected_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hist.csv");
        let history = vec![
            EpochStats { epoch: 1, train_mae: 0.5, val_mae: 0.6 },
            EpochStats { epoch: 2, train_mae: 0.4, val_mae: 0.55 },
        ];
        write_history_csv(&path, &history).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("epoch,train_mae,val_mae"));
        assert_eq!(lines.next(), Some("1,0.5,0.6"));
    }
}
