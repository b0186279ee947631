//! Adam optimizer and global-norm gradient clipping.

use super::ParamStore;
use crate::error::{Result, TapError};

/// Adam with bias correction, applied in place. Moment buffers mirror
/// the parameter layout exactly.
pub struct AdamState {
    m: ParamStore,
    v: ParamStore,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> AdamState {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        params.check_same_layout(grads)?;
        params.check_same_layout(&self.m)?;
        if !grads.all_finite() {
            return Err(TapError::NonFinite("gradient".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for pi in 0..params.len() {
            let g = grads.get(pi).data();
            let m = self.m.get_mut(pi).data_mut();
            for (mv, &gv) in m.iter_mut().zip(g.iter()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
            }
            let v = self.v.get_mut(pi).data_mut();
            for (vv, &gv) in v.iter_mut().zip(g.iter()) {
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
            }
            let m = self.m.get(pi).data();
            let v = self.v.get(pi).data();
            let p = params.get_mut(pi).data_mut();
            for i in 0..p.len() {
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat;

    fn scalar_store(val: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Mat::from_vec(1, 1, vec![val])).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = scalar_store(0.7);
        let grads = params.zeros_like();
        let mut opt = AdamState::new(&params, 1e-3);
        opt.step(&mut params, &grads).unwrap();
        assert_eq!(params.get(0).data()[0], 0.7);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_is_signed_lr_for_scalar() {
        // With bias correction, the first update is lr * g / (|g| + eps).
        for &g in &[0.3, -2.0, 1e-6] {
            let mut params = scalar_store(0.0);
            let mut grads = params.zeros_like();
            grads.get_mut(0).data_mut()[0] = g;
            let mut opt = AdamState::new(&params, 0.01);
            opt.step(&mut params, &grads).unwrap();
            let expect = -0.01 * g / (g.abs() + 1e-8);
            assert!((params.get(0).data()[0] - expect).abs() < 1e-9, "g = {g}");
        }
    }

    #[test]
    fn zero_learning_rate_is_bit_identical() {
        let mut params = scalar_store(0.123456789);
        let mut grads = params.zeros_like();
        grads.get_mut(0).data_mut()[0] = 5.0;
        let mut opt = AdamState::new(&params, 0.0);
        for _ in 0..10 {
            opt.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params.get(0).data()[0].to_bits(), 0.123456789f64.to_bits());
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut params = scalar_store(1.0);
        let mut grads = params.zeros_like();
        grads.get_mut(0).data_mut()[0] = f64::NAN;
        let mut opt = AdamState::new(&params, 1e-3);
        assert!(opt.step(&mut params, &grads).is_err());
        // Parameters must be untouched after a rejected step.
        assert_eq!(params.get(0).data()[0], 1.0);
    }

    #[test]
    fn clip_preserves_direction_and_reports_norm() {
        let mut grads = ParamStore::new();
        grads.add("a", Mat::from_vec(1, 2, vec![3.0, 0.0])).unwrap();
        grads.add("b", Mat::from_vec(1, 1, vec![4.0])).unwrap();
        let norm = clip_global_norm(&mut grads, 2.5);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((grads.global_norm() - 2.5).abs() < 1e-12);
        assert!((grads.get(0).data()[0] - 1.5).abs() < 1e-12);
        assert!((grads.get(1).data()[0] - 2.0).abs() < 1e-12);

        let mut small = ParamStore::new();
        small.add("a", Mat::from_vec(1, 1, vec![0.5])).unwrap();
        let norm = clip_global_norm(&mut small, 2.5);
        assert!((norm - 0.5).abs() < 1e-12);
        assert_eq!(small.get(0).data()[0], 0.5);
    }
}
