//! Per-channel batch normalisation.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Running mean and (unbiased) variance. Empty until populated.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn empty() -> Self {
        RunningStats {
            mean: Vec::new(),
            var: Vec::new(),
        }
    }

    /// Mean 0 and variance 1 for `channels` channels.
    pub fn identity(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty() || self.var.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        }
    }
}

#[derive(Debug)]
pub struct BatchNormCtx<T> {
    mode: Mode,
    xhat: Tensor<T>,
    /// 1/sqrt(var + eps) per channel (batch variance in train mode, running
    /// variance in infer mode).
    inv_std: Vec<T>,
    gamma: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Infer-mode normalisation with the running statistics; never mutates them.
pub fn batch_norm_infer<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running: &RunningStats<T>,
    cfg: BatchNormConfig,
) -> Result<(Tensor<T>, BatchNormCtx<T>)> {
    let s = input.shape();
    if gamma.len() != s.c || beta.len() != s.c {
        return Err(Error::Shape(format!(
            "batch_norm: {} channels but gamma/beta have {}/{} entries",
            s.c,
            gamma.len(),
            beta.len()
        )));
    }
    if running.is_empty() {
        return Err(Error::MissingRunningStats);
    }
    if running.mean.len() != s.c || running.var.len() != s.c {
        return Err(Error::Shape(format!(
            "batch_norm: running stats sized {} for {} channels",
            running.mean.len(),
            s.c
        )));
    }
    let eps = T::of(cfg.eps);
    let mut out = Tensor::zeros(s);
    let mut xhat = Tensor::zeros(s);
    let mut inv_std = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mean = running.mean[c];
        let inv = T::one() / (running.var[c] + eps).sqrt();
        inv_std[c] = inv;
        for b in 0..s.n {
            let src = input.plane(b, c);
            let xh = xhat.plane_mut(b, c);
            for (d, &x) in xh.iter_mut().zip(src) {
                *d = (x - mean) * inv;
            }
            let xh = xhat.plane(b, c);
            let dst = out.plane_mut(b, c);
            for (d, &v) in dst.iter_mut().zip(xh) {
                *d = gamma[c] * v + beta[c];
            }
        }
    }
    Ok((
        out,
        BatchNormCtx {
            mode: Mode::Infer,
            xhat,
            inv_std,
            gamma: gamma.to_vec(),
        },
    ))
}

pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mode: Mode,
    running: &mut RunningStats<T>,
    cfg: BatchNormConfig,
) -> Result<(Tensor<T>, BatchNormCtx<T>)> {
    let s = input.shape();
    if gamma.len() != s.c || beta.len() != s.c {
        return Err(Error::Shape(format!(
            "batch_norm: {} channels but gamma/beta have {}/{} entries",
            s.c,
            gamma.len(),
            beta.len()
        )));
    }
    let count = s.n * s.plane();
    let eps = T::of(cfg.eps);
    let mut out = Tensor::zeros(s);
    let mut xhat = Tensor::zeros(s);
    let mut inv_std = vec![T::zero(); s.c];

    match mode {
        Mode::Train => {
            if count == 0 {
                return Err(Error::Shape("batch_norm: empty batch".into()));
            }
            if running.is_empty() {
                *running = RunningStats::identity(s.c);
            } else if running.mean.len() != s.c || running.var.len() != s.c {
                return Err(Error::Shape(format!(
                    "batch_norm: running stats sized {} for {} channels",
                    running.mean.len(),
                    s.c
                )));
            }
            let m = T::of(cfg.momentum);
            let inv_count = T::one() / T::of(count as f64);
            for c in 0..s.c {
                let mut sum = T::zero();
                for b in 0..s.n {
                    sum += input.plane(b, c).iter().copied().sum::<T>();
                }
                let mean = sum * inv_count;
                let mut sq = T::zero();
                for b in 0..s.n {
                    for &x in input.plane(b, c) {
                        let d = x - mean;
                        sq += d * d;
                    }
                }
                let var = sq * inv_count;
                let inv = T::one() / (var + eps).sqrt();
                inv_std[c] = inv;
                for b in 0..s.n {
                    let src = input.plane(b, c);
                    let xh = xhat.plane_mut(b, c);
                    for (d, &x) in xh.iter_mut().zip(src) {
                        *d = (x - mean) * inv;
                    }
                    let xh = xhat.plane(b, c);
                    let dst = out.plane_mut(b, c);
                    for (d, &v) in dst.iter_mut().zip(xh) {
                        *d = gamma[c] * v + beta[c];
                    }
                }
                let unbiased = if count > 1 {
                    sq / T::of((count - 1) as f64)
                } else {
                    var
                };
                running.mean[c] = (T::one() - m) * running.mean[c] + m * mean;
                running.var[c] = (T::one() - m) * running.var[c] + m * unbiased;
            }
        }
        Mode::Infer => return batch_norm_infer(input, gamma, beta, running, cfg),
    }
    Ok((
        out,
        BatchNormCtx {
            mode,
            xhat,
            inv_std,
            gamma: gamma.to_vec(),
        },
    ))
}

impl<T: Scalar> BatchNormCtx<T> {
    pub fn backward(self, grad_out: &Tensor<T>) -> Result<BatchNormGrads<T>> {
        let s = self.xhat.shape();
        grad_out.ensure_shape(s, "batch_norm backward grad")?;
        let mut dgamma = vec![T::zero(); s.c];
        let mut dbeta = vec![T::zero(); s.c];
        for c in 0..s.c {
            for b in 0..s.n {
                for (&g, &xh) in grad_out.plane(b, c).iter().zip(self.xhat.plane(b, c)) {
                    dbeta[c] += g;
                    dgamma[c] += g * xh;
                }
            }
        }
        let mut dx = Tensor::zeros(s);
        match self.mode {
            Mode::Train => {
                let count = T::of((s.n * s.plane()) as f64);
                for c in 0..s.c {
                    let scale = self.gamma[c] * self.inv_std[c] / count;
                    for b in 0..s.n {
                        let g = grad_out.plane(b, c);
                        let xh = self.xhat.plane(b, c);
                        let d = dx.plane_mut(b, c);
                        for i in 0..g.len() {
                            d[i] = scale * (count * g[i] - dbeta[c] - xh[i] * dgamma[c]);
                        }
                    }
                }
            }
            Mode::Infer => {
                for c in 0..s.c {
                    let scale = self.gamma[c] * self.inv_std[c];
                    for b in 0..s.n {
                        let g = grad_out.plane(b, c);
                        let d = dx.plane_mut(b, c);
                        for (d, &g) in d.iter_mut().zip(g) {
                            *d = scale * g;
                        }
                    }
                }
            }
        }
        Ok(BatchNormGrads {
            input: dx,
            gamma: dgamma,
            beta: dbeta,
        })
    }
}
