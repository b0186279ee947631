//! Minimal differentiable-compute kernel: named parameter storage, a
//! dense layer, GRU cells stacked into a sequence model, MAE loss, Adam,
//! finite-difference checking, and a checkpoint format.
//!
//! Everything is double precision and hand-differentiated; every
//! backward pass is validated against central differences in tests.

mod adam;
mod checkpoint;
mod dense;
mod gradcheck;
mod gru;
mod loss;

pub use adam::{clip_global_norm, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, ParamShape};
pub use dense::Dense;
pub use gradcheck::{central_diff_check, GradReport};
pub use gru::{GruLayer, LayerState, SeqCache, SequenceModel};
pub use loss::mae_loss;

use std::collections::HashMap;

use crate::error::{Result, TapError};
use crate::Mat;

/// One named parameter array.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Mat,
}

/// Flat, insertion-ordered collection of named parameters. Layers keep
/// indices into the store, so forward/backward passes borrow the store
/// immutably and write gradients into a separate zeros-like store.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Mat) -> Result<usize> {
        if self.by_name.contains_key(name) {
            return Err(TapError::InvalidInput(format!("duplicate parameter '{name}'")));
        }
        let idx = self.params.len();
        self.by_name.insert(name.to_string(), idx);
        self.params.push(Param { name: name.to_string(), value });
        Ok(idx)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| TapError::InvalidInput(format!("missing parameter '{name}'")))
    }

    #[inline]
    pub fn get(&self, idx: usize) -> &Mat {
        &self.params[idx].value
    }

    pub fn name_of(&self, idx: usize) -> &str {
        &self.params[idx].name
    }

    #[inline]
    pub fn get_mut(&mut self, idx: usize) -> &mut Mat {
        &mut self.params[idx].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Same names and shapes, all values zero. Gradient accumulators and
    /// optimizer moments start here.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Mat::zeros(p.value.rows, p.value.cols),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    pub fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(TapError::ShapeMismatch("parameter count".into()));
        }
        for (a, b) in self.params.iter().zip(other.params.iter()) {
            if a.name != b.name || !a.value.same_shape(&b.value) {
                return Err(TapError::ShapeMismatch(format!("parameter '{}'", a.name)));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for p in self.params.iter_mut() {
            for v in p.value.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn zero(&mut self) {
        for p in self.params.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Element-wise accumulate: self += other. Layouts must match.
    pub fn accumulate(&mut self, other: &ParamStore) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.params.iter_mut().zip(other.params.iter()) {
            for (x, y) in a.value.data_mut().iter_mut().zip(b.value.data().iter()) {
                *x += y;
            }
        }
        Ok(())
    }
}

/// y = W x (no accumulation).
pub(crate) fn matvec(w: &Mat, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, y.len());
    for (r, out) in y.iter_mut().enumerate() {
        let row = w.row(r);
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x.iter()) {
            acc += a * b;
        }
        *out = acc;
    }
}

/// out += W^T g.
pub(crate) fn matvec_t_acc(w: &Mat, g: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.rows, g.len());
    debug_assert_eq!(w.cols, out.len());
    for (r, &gv) in g.iter().enumerate() {
        if gv == 0.0 {
            continue;
        }
        let row = w.row(r);
        for (o, &wv) in out.iter_mut().zip(row.iter()) {
            *o += wv * gv;
        }
    }
}

/// gw += g x^T.
pub(crate) fn outer_acc(gw: &mut Mat, g: &[f64], x: &[f64]) {
    debug_assert_eq!(gw.rows, g.len());
    debug_assert_eq!(gw.cols, x.len());
    for (r, &gv) in g.iter().enumerate() {
        if gv == 0.0 {
            continue;
        }
        let row = gw.row_mut(r);
        for (o, &xv) in row.iter_mut().zip(x.iter()) {
            *o += gv * xv;
        }
    }
}

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
pub(crate) fn init_uniform(
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Mat {
    use rand::Rng;
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut m = Mat::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
    m
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
