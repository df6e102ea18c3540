//! Central parameter store.
//!
//! Every trainable tensor lives in one [`Params`] arena and is addressed by
//! [`ParamId`]. Layers hold ids, not tensors, which keeps values immutable
//! and shareable during forward/backward (gradients go to a separate
//! [`Grads`] buffer aligned by index) and makes checkpointing, optimizer
//! state, and finite-difference checks uniform.

use alloc::string::String;
use alloc::vec::Vec;

use crate::mat::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default)]
pub struct Params {
    names: Vec<String>,
    vals: Vec<Mat>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let id = ParamId(self.vals.len());
        self.names.push(name.into());
        self.vals.push(value);
        id
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Mat {
        &self.vals[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.vals[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn total_scalars(&self) -> usize {
        self.vals.iter().map(|m| m.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(|s| s.as_str()).zip(self.vals.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.vals.len()).map(ParamId)
    }
}

/// Gradient buffer aligned with a [`Params`] arena.
#[derive(Clone, Debug)]
pub struct Grads {
    g: Vec<Mat>,
}

impl Grads {
    pub fn zeros_like(params: &Params) -> Self {
        Grads {
            g: params.vals.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect(),
        }
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Mat {
        &self.g[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.g[id.0]
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// `self += other`, used to reduce per-example gradients in a fixed order.
    pub fn accumulate(&mut self, other: &Grads) {
        debug_assert_eq!(self.g.len(), other.g.len());
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.g {
            g.scale_inplace(s);
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.g {
            g.map_inplace(|_| 0.0);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.g.iter().fold(0.0f64, |m, g| m.max(g.max_abs()))
    }
}
