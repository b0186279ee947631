//! Affine layer y = Wx + b with exact backward.

use rand_chacha::ChaCha8Rng;

use super::{init_uniform, matvec, matvec_t_acc, outer_acc, ParamStore};
use crate::error::{Result, TapError};
use crate::Mat;

#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    /// Register freshly initialized parameters under `prefix`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Dense> {
        let w = store.add(&format!("{prefix}.w"), init_uniform(out_dim, in_dim, in_dim, rng))?;
        let b = store.add(&format!("{prefix}.b"), Mat::zeros(1, out_dim))?;
        Ok(Dense { w, b, in_dim, out_dim })
    }

    /// Bind to parameters that already exist in the store (checkpoint
    /// load path); validates shapes.
    pub fn attach(store: &ParamStore, prefix: &str, in_dim: usize, out_dim: usize) -> Result<Dense> {
        let w = store.index_of(&format!("{prefix}.w"))?;
        let b = store.index_of(&format!("{prefix}.b"))?;
        let wm = store.get(w);
        let bm = store.get(b);
        if wm.rows != out_dim || wm.cols != in_dim || bm.rows != 1 || bm.cols != out_dim {
            return Err(TapError::ShapeMismatch(format!("dense '{prefix}'")));
        }
        Ok(Dense { w, b, in_dim, out_dim })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], y: &mut [f64]) {
        matvec(store.get(self.w), x, y);
        for (v, b) in y.iter_mut().zip(store.get(self.b).data().iter()) {
            *v += b;
        }
    }

    /// Accumulates parameter gradients into `grads` and the input
    /// gradient into `grad_x`.
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &[f64],
        grad_y: &[f64],
        grad_x: &mut [f64],
        grads: &mut ParamStore,
    ) {
        matvec_t_acc(store.get(self.w), grad_y, grad_x);
        outer_acc(grads.get_mut(self.w), grad_y, x);
        for (g, &gy) in grads.get_mut(self.b).data_mut().iter_mut().zip(grad_y.iter()) {
            *g += gy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dense::new(&mut store, "head", 3, 3, &mut rng).unwrap();
        let eye = Mat::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        *store.get_mut(d.w) = eye;
        let x = [0.3, -1.5, 2.0];
        let mut y = [0.0; 3];
        d.forward(&store, &x, &mut y);
        assert_eq!(y, x);
    }

    #[test]
    fn bias_gradient_equals_output_gradient() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::new(&mut store, "head", 4, 2, &mut rng).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        let gy = [1.5, -2.5];
        let mut gx = [0.0; 4];
        let mut grads = store.zeros_like();
        d.backward(&store, &x, &gy, &mut gx, &mut grads);
        assert_eq!(grads.get(d.b).data(), &gy);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..20u64 {
            let mut store = ParamStore::new();
            let mut lrng = ChaCha8Rng::seed_from_u64(seed);
            let d = Dense::new(&mut store, "head", 5, 3, &mut lrng).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let gy: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();

            // Scalar loss: dot(y, gy), so dL/dy = gy.
            let loss = |s: &ParamStore, xv: &[f64]| -> f64 {
                let mut y = vec![0.0; 3];
                d.forward(s, xv, &mut y);
                y.iter().zip(gy.iter()).map(|(a, b)| a * b).sum()
            };

            let mut gx = vec![0.0; 5];
            let mut grads = store.zeros_like();
            d.backward(&store, &x, &gy, &mut gx, &mut grads);

            let h = 1e-4;
            for idx in [d.w, d.b] {
                for i in 0..store.get(idx).data().len() {
                    let orig = store.get(idx).data()[i];
                    store.get_mut(idx).data_mut()[i] = orig + h;
                    let lp = loss(&store, &x);
                    store.get_mut(idx).data_mut()[i] = orig - h;
                    let lm = loss(&store, &x);
                    store.get_mut(idx).data_mut()[i] = orig;
                    let num = (lp - lm) / (2.0 * h);
                    let ana = grads.get(idx).data()[i];
                    let rel = (ana - num).abs() / f64::max(1e-8, ana.abs() + num.abs());
                    assert!(rel < 1e-4, "param {idx} elem {i}: {ana} vs {num}");
                }
            }
            let mut xp = x.clone();
            for i in 0..x.len() {
                xp[i] = x[i] + h;
                let lp = loss(&store, &xp);
                xp[i] = x[i] - h;
                let lm = loss(&store, &xp);
                xp[i] = x[i];
                let num = (lp - lm) / (2.0 * h);
                let rel = (gx[i] - num).abs() / f64::max(1e-8, gx[i].abs() + num.abs());
                assert!(rel < 1e-4, "input elem {i}");
            }
        }
    }
}
