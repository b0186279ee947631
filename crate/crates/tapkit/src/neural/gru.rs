//! GRU cell, stacked recurrent layers, and backpropagation through time.
//!
//! Cell equations (update gate z, reset gate r, candidate n):
//!   z = sigmoid(Wz x + Uz h + bz)
//!   r = sigmoid(Wr x + Ur h + br)
//!   n = tanh(Wn x + Un (r .* h) + bn)
//!   h' = (1 - z) .* n + z .* h
//! so a saturated update gate (z = 1) passes the previous state through.

use rand_chacha::ChaCha8Rng;

use super::{init_uniform, matvec, matvec_t_acc, outer_acc, sigmoid, Dense, ParamStore};
use crate::error::{Result, TapError};
use crate::Mat;

/// Hidden state of one layer.
pub type LayerState = Vec<f64>;

#[derive(Clone, Copy, Debug)]
pub struct GruLayer {
    wz: usize,
    wr: usize,
    wn: usize,
    uz: usize,
    ur: usize,
    un: usize,
    bz: usize,
    br: usize,
    bn: usize,
    pub in_dim: usize,
    pub hidden: usize,
}

/// Everything one backward step needs from the forward pass.
#[derive(Clone, Debug)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

impl GruLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<GruLayer> {
        let w = |store: &mut ParamStore, name: &str, rows: usize, cols: usize, fan: usize, rng: &mut ChaCha8Rng| {
            store.add(&format!("{prefix}.{name}"), init_uniform(rows, cols, fan, rng))
        };
        let wz = w(store, "wz", hidden, in_dim, in_dim, rng)?;
        let wr = w(store, "wr", hidden, in_dim, in_dim, rng)?;
        let wn = w(store, "wn", hidden, in_dim, in_dim, rng)?;
        let uz = w(store, "uz", hidden, hidden, hidden, rng)?;
        let ur = w(store, "ur", hidden, hidden, hidden, rng)?;
        let un = w(store, "un", hidden, hidden, hidden, rng)?;
        let bz = store.add(&format!("{prefix}.bz"), Mat::zeros(1, hidden))?;
        let br = store.add(&format!("{prefix}.br"), Mat::zeros(1, hidden))?;
        let bn = store.add(&format!("{prefix}.bn"), Mat::zeros(1, hidden))?;
        Ok(GruLayer { wz, wr, wn, uz, ur, un, bz, br, bn, in_dim, hidden })
    }

    pub fn attach(
        store: &ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Result<GruLayer> {
        let idx = |name: &str| store.index_of(&format!("{prefix}.{name}"));
        let layer = GruLayer {
            wz: idx("wz")?,
            wr: idx("wr")?,
            wn: idx("wn")?,
            uz: idx("uz")?,
            ur: idx("ur")?,
            un: idx("un")?,
            bz: idx("bz")?,
            br: idx("br")?,
            bn: idx("bn")?,
            in_dim,
            hidden,
        };
        for (i, rows, cols) in [
            (layer.wz, hidden, in_dim),
            (layer.wr, hidden, in_dim),
            (layer.wn, hidden, in_dim),
            (layer.uz, hidden, hidden),
            (layer.ur, hidden, hidden),
            (layer.un, hidden, hidden),
            (layer.bz, 1, hidden),
            (layer.br, 1, hidden),
            (layer.bn, 1, hidden),
        ] {
            let m = store.get(i);
            if m.rows != rows || m.cols != cols {
                return Err(TapError::ShapeMismatch(format!("gru '{prefix}'")));
            }
        }
        Ok(layer)
    }

    fn forward_step(
        &self,
        store: &ParamStore,
        x: &[f64],
        h_prev: &[f64],
        h_out: &mut [f64],
    ) -> StepCache {
        let hdim = self.hidden;
        let mut z = vec![0.0; hdim];
        let mut r = vec![0.0; hdim];
        let mut n = vec![0.0; hdim];
        let mut tmp = vec![0.0; hdim];

        matvec(store.get(self.wz), x, &mut z);
        matvec(store.get(self.uz), h_prev, &mut tmp);
        for ((zv, &t), &b) in z.iter_mut().zip(tmp.iter()).zip(store.get(self.bz).data()) {
            *zv = sigmoid(*zv + t + b);
        }
        matvec(store.get(self.wr), x, &mut r);
        matvec(store.get(self.ur), h_prev, &mut tmp);
        for ((rv, &t), &b) in r.iter_mut().zip(tmp.iter()).zip(store.get(self.br).data()) {
            *rv = sigmoid(*rv + t + b);
        }
        let rh: Vec<f64> = r.iter().zip(h_prev.iter()).map(|(a, b)| a * b).collect();
        matvec(store.get(self.wn), x, &mut n);
        matvec(store.get(self.un), &rh, &mut tmp);
        for ((nv, &t), &b) in n.iter_mut().zip(tmp.iter()).zip(store.get(self.bn).data()) {
            *nv = (*nv + t + b).tanh();
        }
        for i in 0..hdim {
            h_out[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
        }
        StepCache { x: x.to_vec(), h_prev: h_prev.to_vec(), z, r, n, rh }
    }

    /// Backward through one step. `grad_h` is dL/dh'. Input gradient is
    /// accumulated into `grad_x`; dL/dh_prev overwrites `grad_h_prev`.
    fn backward_step(
        &self,
        store: &ParamStore,
        cache: &StepCache,
        grad_h: &[f64],
        grad_x: &mut [f64],
        grad_h_prev: &mut [f64],
        grads: &mut ParamStore,
    ) {
        let hdim = self.hidden;
        let (z, r, n, h_prev) = (&cache.z, &cache.r, &cache.n, &cache.h_prev);

        // Pre-activation gradients for the three gates.
        let mut dz = vec![0.0; hdim];
        let mut dn = vec![0.0; hdim];
        for i in 0..hdim {
            dz[i] = grad_h[i] * (h_prev[i] - n[i]) * z[i] * (1.0 - z[i]);
            dn[i] = grad_h[i] * (1.0 - z[i]) * (1.0 - n[i] * n[i]);
        }
        let mut m = vec![0.0; hdim];
        matvec_t_acc(store.get(self.un), &dn, &mut m);
        let mut dr = vec![0.0; hdim];
        for i in 0..hdim {
            dr[i] = m[i] * h_prev[i] * r[i] * (1.0 - r[i]);
        }

        for i in 0..hdim {
            grad_h_prev[i] = grad_h[i] * z[i] + m[i] * r[i];
        }
        matvec_t_acc(store.get(self.uz), &dz, grad_h_prev);
        matvec_t_acc(store.get(self.ur), &dr, grad_h_prev);

        matvec_t_acc(store.get(self.wz), &dz, grad_x);
        matvec_t_acc(store.get(self.wr), &dr, grad_x);
        matvec_t_acc(store.get(self.wn), &dn, grad_x);

        outer_acc(grads.get_mut(self.wz), &dz, &cache.x);
        outer_acc(grads.get_mut(self.wr), &dr, &cache.x);
        outer_acc(grads.get_mut(self.wn), &dn, &cache.x);
        outer_acc(grads.get_mut(self.uz), &dz, h_prev);
        outer_acc(grads.get_mut(self.ur), &dr, h_prev);
        outer_acc(grads.get_mut(self.un), &dn, &cache.rh);
        for (g, &d) in grads.get_mut(self.bz).data_mut().iter_mut().zip(dz.iter()) {
            *g += d;
        }
        for (g, &d) in grads.get_mut(self.br).data_mut().iter_mut().zip(dr.iter()) {
            *g += d;
        }
        for (g, &d) in grads.get_mut(self.bn).data_mut().iter_mut().zip(dn.iter()) {
            *g += d;
        }
    }
}

/// Forward caches for one (possibly truncated) BPTT window.
pub struct SeqCache {
    steps: Vec<Vec<StepCache>>,
    head_in: Mat,
}

/// Stacked GRU layers with a per-frame dense head. Zero layers reduce
/// the model to a frame-wise affine map.
#[derive(Clone, Debug)]
pub struct SequenceModel {
    pub layers: Vec<GruLayer>,
    pub head: Dense,
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
}

impl SequenceModel {
    pub fn new(
        store: &mut ParamStore,
        input_dim: usize,
        hidden: usize,
        n_layers: usize,
        output_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<SequenceModel> {
        let mut layers = Vec::with_capacity(n_layers);
        for li in 0..n_layers {
            let in_dim = if li == 0 { input_dim } else { hidden };
            layers.push(GruLayer::new(store, &format!("gru{li}"), in_dim, hidden, rng)?);
        }
        let head_in = if n_layers == 0 { input_dim } else { hidden };
        let head = Dense::new(store, "head", head_in, output_dim, rng)?;
        Ok(SequenceModel { layers, head, input_dim, hidden, output_dim })
    }

    pub fn attach(
        store: &ParamStore,
        input_dim: usize,
        hidden: usize,
        n_layers: usize,
        output_dim: usize,
    ) -> Result<SequenceModel> {
        let mut layers = Vec::with_capacity(n_layers);
        for li in 0..n_layers {
            let in_dim = if li == 0 { input_dim } else { hidden };
            layers.push(GruLayer::attach(store, &format!("gru{li}"), in_dim, hidden)?);
        }
        let head_in = if n_layers == 0 { input_dim } else { hidden };
        let head = Dense::attach(store, "head", head_in, output_dim)?;
        Ok(SequenceModel { layers, head, input_dim, hidden, output_dim })
    }

    pub fn zero_state(&self) -> Vec<LayerState> {
        self.layers.iter().map(|l| vec![0.0; l.hidden]).collect()
    }

    /// Run the model over `x` (T x input_dim). `h0` carries hidden state
    /// across truncated-BPTT windows; `None` starts from zeros.
    pub fn forward(
        &self,
        store: &ParamStore,
        x: &Mat,
        h0: Option<&[LayerState]>,
    ) -> Result<(Mat, Vec<LayerState>, SeqCache)> {
        if x.cols != self.input_dim {
            return Err(TapError::ShapeMismatch(format!(
                "expected input dim {}, got {}",
                self.input_dim, x.cols
            )));
        }
        if x.rows == 0 {
            return Err(TapError::InvalidInput("empty sequence".into()));
        }
        let mut h: Vec<LayerState> = match h0 {
            Some(s) => {
                if s.len() != self.layers.len()
                    || s.iter().any(|v| v.len() != self.hidden)
                {
                    return Err(TapError::ShapeMismatch("hidden state".into()));
                }
                s.to_vec()
            }
            None => self.zero_state(),
        };

        let t_len = x.rows;
        let mut y = Mat::zeros(t_len, self.output_dim);
        let head_dim = self.head.in_dim;
        let mut head_in = Mat::zeros(t_len, head_dim);
        let mut steps: Vec<Vec<StepCache>> = self.layers.iter().map(|_| Vec::with_capacity(t_len)).collect();

        let mut cur = vec![0.0; self.input_dim.max(self.hidden)];
        for t in 0..t_len {
            let mut cur_len = self.input_dim;
            cur[..cur_len].copy_from_slice(x.row(t));
            for (li, layer) in self.layers.iter().enumerate() {
                let mut h_new = vec![0.0; layer.hidden];
                let cache = layer.forward_step(store, &cur[..cur_len], &h[li], &mut h_new);
                steps[li].push(cache);
                cur[..layer.hidden].copy_from_slice(&h_new);
                cur_len = layer.hidden;
                h[li] = h_new;
            }
            head_in.row_mut(t).copy_from_slice(&cur[..cur_len]);
            self.head.forward(store, &cur[..cur_len], y.row_mut(t));
        }
        Ok((y, h, SeqCache { steps, head_in }))
    }

    /// Backward through the cached window. Returns (grad_x, grad_h0);
    /// `grad_h_final` injects gradient arriving at the window's final
    /// hidden state (zero when the window is last, or truncated away).
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &SeqCache,
        grad_y: &Mat,
        grad_h_final: Option<&[LayerState]>,
        grads: &mut ParamStore,
    ) -> Result<(Mat, Vec<LayerState>)> {
        let t_len = cache.head_in.rows;
        if grad_y.rows != t_len || grad_y.cols != self.output_dim {
            return Err(TapError::ShapeMismatch("output gradient".into()));
        }
        let mut dh: Vec<LayerState> = match grad_h_final {
            Some(s) => s.to_vec(),
            None => self.zero_state(),
        };
        let mut grad_x = Mat::zeros(t_len, self.input_dim);

        for t in (0..t_len).rev() {
            let mut gtop = vec![0.0; self.head.in_dim];
            self.head.backward(store, cache.head_in.row(t), grad_y.row(t), &mut gtop, grads);
            if self.layers.is_empty() {
                for (o, g) in grad_x.row_mut(t).iter_mut().zip(gtop.iter()) {
                    *o += g;
                }
                continue;
            }
            // Walk layers top-down inside the timestep; gtop holds the
            // gradient flowing into the current layer's output.
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                for (g, d) in gtop.iter_mut().zip(dh[li].iter()) {
                    *g += d;
                }
                let mut gx_below = vec![0.0; layer.in_dim];
                let mut gh_prev = vec![0.0; layer.hidden];
                layer.backward_step(
                    store,
                    &cache.steps[li][t],
                    &gtop,
                    &mut gx_below,
                    &mut gh_prev,
                    grads,
                );
                dh[li] = gh_prev;
                if li == 0 {
                    for (o, g) in grad_x.row_mut(t).iter_mut().zip(gx_below.iter()) {
                        *o += g;
                    }
                } else {
                    gtop = gx_below;
                }
            }
        }
        Ok((grad_x, dh))
    }
}
