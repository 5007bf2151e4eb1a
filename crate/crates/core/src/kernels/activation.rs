//! ReLU and the per-pixel channel softmax.

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug)]
pub struct ReluCtx {
    active: Vec<bool>,
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, ReluCtx) {
    let mut out = input.clone();
    let mut active = Vec::with_capacity(input.len());
    for v in out.data_mut() {
        let on = *v > T::zero();
        active.push(on);
        if !on {
            *v = T::zero();
        }
    }
    (out, ReluCtx { active })
}

impl ReluCtx {
    /// Passes the gradient where the input was strictly positive.
    pub fn backward<T: Scalar>(self, mut grad_out: Tensor<T>) -> Tensor<T> {
        assert_eq!(grad_out.len(), self.active.len(), "relu backward length");
        for (g, &on) in grad_out.data_mut().iter_mut().zip(&self.active) {
            if !on {
                *g = T::zero();
            }
        }
        grad_out
    }
}

pub fn softmax_channels_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let p = s.plane();
    let mut out = Tensor::zeros(s);
    let mut scratch = vec![T::zero(); s.c];
    for b in 0..s.n {
        let x = input.item(b);
        let y = out.item_mut(b);
        for i in 0..p {
            let mut max = T::neg_infinity();
            for c in 0..s.c {
                max = max.max(x[c * p + i]);
            }
            let mut sum = T::zero();
            for c in 0..s.c {
                let e = (x[c * p + i] - max).exp();
                scratch[c] = e;
                sum += e;
            }
            for c in 0..s.c {
                y[c * p + i] = scratch[c] / sum;
            }
        }
    }
    out
}

#[derive(Debug)]
pub struct SoftmaxCtx<T> {
    probs: Tensor<T>,
}

pub fn softmax_channels<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, SoftmaxCtx<T>) {
    let probs = softmax_channels_forward(input);
    (probs.clone(), SoftmaxCtx { probs })
}

impl<T: Scalar> SoftmaxCtx<T> {
    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }

    /// dz_c = p_c * (dp_c - sum_k dp_k p_k) per pixel.
    pub fn backward(self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        softmax_backward(&self.probs, grad_out)
    }
}

pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let s = probs.shape();
    grad_out.ensure_shape(s, "softmax backward grad")?;
    let p = s.plane();
    let mut dz = Tensor::zeros(s);
    for b in 0..s.n {
        let pr = probs.item(b);
        let g = grad_out.item(b);
        let d = dz.item_mut(b);
        for i in 0..p {
            let mut dot = T::zero();
            for c in 0..s.c {
                dot += g[c * p + i] * pr[c * p + i];
            }
            for c in 0..s.c {
                d[c * p + i] = pr[c * p + i] * (g[c * p + i] - dot);
            }
        }
    }
    Ok(dz)
}
