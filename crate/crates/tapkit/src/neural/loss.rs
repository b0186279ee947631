//! Mean absolute error over a frame-by-parameter matrix.

use crate::error::{Result, TapError};
use crate::Mat;

/// MAE and its subgradient, averaged over every entry. The gradient at
/// exact ties is 0, so each entry is one of {-1/(T*P), 0, 1/(T*P)}.
pub fn mae_loss(pred: &Mat, target: &Mat) -> Result<(f64, Mat)> {
    pred.check_same_shape(target, "loss input")?;
    let count = pred.data().len();
    if count == 0 {
        return Err(TapError::InvalidInput("empty loss input".into()));
    }
    let scale = 1.0 / count as f64;
    let mut grad = Mat::zeros(pred.rows, pred.cols);
    let mut sum = 0.0;
    for ((&p, &t), g) in pred
        .data()
        .iter()
        .zip(target.data().iter())
        .zip(grad.data_mut().iter_mut())
    {
        let d = p - t;
        sum += d.abs();
        *g = if d > 0.0 {
            scale
        } else if d < 0.0 {
            -scale
        } else {
            0.0
        };
    }
    Ok((sum * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_inputs_give_zero() {
        let a = Mat::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        let (loss, grad) = mae_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn one_entry_off_by_one_over_fifty_entries() {
        let target = Mat::zeros(2, 25);
        let mut pred = Mat::zeros(2, 25);
        *pred.at_mut(1, 7) = 1.0;
        let (loss, _) = mae_loss(&pred, &target).unwrap();
        assert!((loss - 0.02).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let rows = rng.gen_range(1..6);
            let cols = rng.gen_range(1..9);
            let a = Mat::from_fn(rows, cols, |_, _| rng.gen_range(-3.0..3.0));
            let b = Mat::from_fn(rows, cols, |_, _| rng.gen_range(-3.0..3.0));
            let (loss, _) = mae_loss(&a, &b).unwrap();
            let mut acc = 0.0;
            for r in 0..rows {
                for c in 0..cols {
                    acc += (a.at(r, c) - b.at(r, c)).abs();
                }
            }
            let expect = acc / (rows * cols) as f64;
            assert!((loss - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_entries_are_scaled_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Mat::from_fn(4, 5, |_, _| rng.gen_range(-1.0..1.0));
        let mut b = Mat::from_fn(4, 5, |_, _| rng.gen_range(-1.0..1.0));
        *b.at_mut(2, 2) = a.at(2, 2); // force one exact tie
        let (_, grad) = mae_loss(&a, &b).unwrap();
        let unit = 1.0 / 20.0;
        for (i, &g) in grad.data().iter().enumerate() {
            assert!(
                g == unit || g == -unit || g == 0.0,
                "entry {i} has unexpected gradient {g}"
            );
        }
        assert_eq!(grad.at(2, 2), 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Mat::zeros(2, 3);
        let b = Mat::zeros(3, 2);
        assert!(mae_loss(&a, &b).is_err());
    }
}
