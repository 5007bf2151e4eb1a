//! Same-padded 2-D cross-correlation.
//!
//! Each kernel offset (ky, kx) contributes `W[:, :, ky, kx] * shift(x)` where
//! `shift(x)` is the zero-padded input translated by the offset and laid out as
//! a (ci, h*w) matrix. That turns the convolution into k*k GEMMs that only need
//! one (ci, h*w) scratch buffer, instead of a full im2col matrix that is k*k
//! times larger.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Weight/bias/input gradients of a convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

/// Backward context: owns the forward input.
#[derive(Debug)]
pub struct ConvCtx<T> {
    input: Tensor<T>,
    has_bias: bool,
}

impl<T: Scalar> ConvCtx<T> {
    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }

    /// Consumes the context; a second backward needs a second forward.
    pub fn backward(
        self,
        weight: &Tensor<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<ConvGrads<T>> {
        conv2d_backward(&self.input, weight, grad_out, self.has_bias, need_input_grad)
    }
}

fn check_shapes<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<usize> {
    let ws = weight.shape();
    let is = input.shape();
    if ws.h != ws.w {
        return Err(Error::Shape(format!("conv2d: kernel must be square, got {ws}")));
    }
    if ws.h % 2 == 0 {
        return Err(Error::Shape(format!("conv2d: kernel size must be odd, got {}", ws.h)));
    }
    if ws.c != is.c {
        return Err(Error::Shape(format!(
            "conv2d: weight expects {} input channels, input {is} has {}",
            ws.c, is.c
        )));
    }
    Ok(ws.h)
}

/// Copies the zero-padded input window at offset (ky, kx) into `dst` as a
/// (ci, h*w) matrix.
fn gather_shift<T: Scalar>(
    padded: &[T],
    dst: &mut [T],
    ci: usize,
    h: usize,
    w: usize,
    wp: usize,
    hp: usize,
    ky: usize,
    kx: usize,
) {
    for c in 0..ci {
        let src_plane = &padded[c * hp * wp..(c + 1) * hp * wp];
        let dst_plane = &mut dst[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let s = (y + ky) * wp + kx;
            dst_plane[y * w..(y + 1) * w].copy_from_slice(&src_plane[s..s + w]);
        }
    }
}

fn pad_into<T: Scalar>(src: &[T], dst: &mut [T], ci: usize, h: usize, w: usize, pad: usize) {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    for c in 0..ci {
        for y in 0..h {
            let d = c * hp * wp + (y + pad) * wp + pad;
            let s = (c * h + y) * w;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    let k = check_shapes(input, weight)?;
    let Shape { n, c: ci, h, w } = input.shape();
    let co = weight.shape().n;
    if let Some(b) = bias {
        if b.len() != co {
            return Err(Error::Shape(format!(
                "conv2d: bias has {} entries for {co} output channels",
                b.len()
            )));
        }
    }
    let hw = h * w;
    let kk = k * k;
    let pad = k / 2;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(Shape::new(n, co, h, w));
    let wd = weight.data();

    let mut padded = vec![T::zero(); if k > 1 { ci * hp * wp } else { 0 }];
    let mut shifted = vec![T::zero(); if k > 1 { ci * hw } else { 0 }];

    for b in 0..n {
        let x = input.item(b);
        let y = out.item_mut(b);
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                y[o * hw..(o + 1) * hw].fill(bv);
            }
        }
        if k == 1 {
            T::gemm(co, ci, hw, T::one(), wd, ci, 1, x, hw, 1, T::one(), y, hw, 1);
            continue;
        }
        pad_into(x, &mut padded, ci, h, w, pad);
        for ky in 0..k {
            for kx in 0..k {
                gather_shift(&padded, &mut shifted, ci, h, w, wp, hp, ky, kx);
                let off = ky * k + kx;
                T::gemm(
                    co,
                    ci,
                    hw,
                    T::one(),
                    &wd[off..],
                    ci * kk,
                    kk,
                    &shifted,
                    hw,
                    1,
                    T::one(),
                    y,
                    hw,
                    1,
                );
            }
        }
    }
    Ok(out)
}

/// Forward pass that keeps the input for [`ConvCtx::backward`].
pub fn conv2d<T: Scalar>(
    input: Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<(Tensor<T>, ConvCtx<T>)> {
    let out = conv2d_forward(&input, weight, bias)?;
    Ok((
        out,
        ConvCtx {
            input,
            has_bias: bias.is_some(),
        },
    ))
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    has_bias: bool,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let k = check_shapes(input, weight)?;
    let Shape { n, c: ci, h, w } = input.shape();
    let co = weight.shape().n;
    grad_out.ensure_shape(Shape::new(n, co, h, w), "conv2d backward grad")?;
    let hw = h * w;
    let kk = k * k;
    let pad = k / 2;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let wd = weight.data();

    let mut dweight = Tensor::zeros(weight.shape());
    let mut dbias = has_bias.then(|| vec![T::zero(); co]);
    let mut dinput = need_input_grad.then(|| Tensor::zeros(input.shape()));

    let mut padded = vec![T::zero(); if k > 1 { ci * hp * wp } else { 0 }];
    let mut dpadded = vec![T::zero(); if k > 1 && need_input_grad { ci * hp * wp } else { 0 }];
    let mut shifted = vec![T::zero(); if k > 1 { ci * hw } else { 0 }];
    let mut dshifted = vec![T::zero(); if k > 1 && need_input_grad { ci * hw } else { 0 }];

    for b in 0..n {
        let x = input.item(b);
        let dy = grad_out.item(b);
        if let Some(db) = dbias.as_mut() {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += dy[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
            }
        }
        if k == 1 {
            // dW += dy * x^T ; dx = W^T * dy
            T::gemm(co, hw, ci, T::one(), dy, hw, 1, x, 1, hw, T::one(), dweight.data_mut(), ci, 1);
            if let Some(dx) = dinput.as_mut() {
                T::gemm(ci, co, hw, T::one(), wd, 1, ci, dy, hw, 1, T::zero(), dx.item_mut(b), hw, 1);
            }
            continue;
        }
        pad_into(x, &mut padded, ci, h, w, pad);
        if need_input_grad {
            dpadded.fill(T::zero());
        }
        for ky in 0..k {
            for kx in 0..k {
                let off = ky * k + kx;
                gather_shift(&padded, &mut shifted, ci, h, w, wp, hp, ky, kx);
                T::gemm(
                    co,
                    hw,
                    ci,
                    T::one(),
                    dy,
                    hw,
                    1,
                    &shifted,
                    1,
                    hw,
                    T::one(),
                    &mut dweight.data_mut()[off..],
                    ci * kk,
                    kk,
                );
                if need_input_grad {
                    T::gemm(
                        ci,
                        co,
                        hw,
                        T::one(),
                        &wd[off..],
                        kk,
                        ci * kk,
                        dy,
                        hw,
                        1,
                        T::zero(),
                        &mut dshifted,
                        hw,
                        1,
                    );
                    for c in 0..ci {
                        let dp = &mut dpadded[c * hp * wp..(c + 1) * hp * wp];
                        let ds = &dshifted[c * hw..(c + 1) * hw];
                        for y in 0..h {
                            let s = (y + ky) * wp + kx;
                            for (acc, &g) in dp[s..s + w].iter_mut().zip(&ds[y * w..(y + 1) * w]) {
                                *acc += g;
                            }
                        }
                    }
                }
            }
        }
        if let Some(dx) = dinput.as_mut() {
            let dst = dx.item_mut(b);
            for c in 0..ci {
                for y in 0..h {
                    let s = c * hp * wp + (y + pad) * wp + pad;
                    dst[(c * h + y) * w..(c * h + y + 1) * w].copy_from_slice(&dpadded[s..s + w]);
                }
            }
        }
    }

    Ok(ConvGrads {
        input: dinput,
        weight: dweight,
        bias: dbias,
    })
}
