//! 2x2 max pooling with recorded argmax, and the matching max-unpooling.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Argmax of every 2x2 window, stored as the window-local flat offset
/// `row * 2 + col` (0..=3) so every entry addresses its own window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    shape: Shape,
    offsets: Vec<u8>,
}

impl PoolIndices {
    /// Shape of the pooled tensor.
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn offsets(&self) -> &[u8] {
        &self.offsets
    }

    /// Input (row, col) of the maximum for pooled element (n, c, y, x).
    pub fn position(&self, n: usize, c: usize, y: usize, x: usize) -> (usize, usize) {
        let i = ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x;
        let off = self.offsets[i] as usize;
        (2 * y + off / 2, 2 * x + off % 2)
    }
}

pub fn max_pool_2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let s = input.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::Shape(format!(
            "max_pool_2x2: spatial size {}x{} must be even",
            s.h, s.w
        )));
    }
    let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(os);
    let mut offsets = vec![0u8; os.len()];
    let mut o = 0;
    for b in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(b, c);
            for y in 0..os.h {
                for x in 0..os.w {
                    let base = 2 * y * s.w + 2 * x;
                    let cand = [base, base + 1, base + s.w, base + s.w + 1];
                    let mut best = 0usize;
                    // strict comparison: ties keep the lowest offset
                    for (k, &idx) in cand.iter().enumerate().skip(1) {
                        if plane[idx] > plane[cand[best]] {
                            best = k;
                        }
                    }
                    out.data_mut()[o] = plane[cand[best]];
                    offsets[o] = best as u8;
                    o += 1;
                }
            }
        }
    }
    Ok((out, PoolIndices { shape: os, offsets }))
}

/// Routes each pooled gradient back to the input position that won the window.
pub fn max_pool_2x2_backward<T: Scalar>(grad_out: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    max_unpool_2x2(grad_out, indices)
}

/// Scatters each value to its recorded window position; zeros elsewhere.
pub fn max_unpool_2x2<T: Scalar>(input: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    let s = input.shape();
    if s != indices.shape {
        return Err(Error::Shape(format!(
            "max_unpool_2x2: input {s} does not match indices {}",
            indices.shape
        )));
    }
    let os = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
    let mut out = Tensor::zeros(os);
    let mut o = 0;
    for b in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    let off = indices.offsets[o] as usize;
                    dst[(2 * y + off / 2) * os.w + 2 * x + off % 2] = src[y * s.w + x];
                    o += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Gathers the gradient from the recorded positions.
pub fn max_unpool_2x2_backward<T: Scalar>(grad_out: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    let s = indices.shape;
    grad_out.ensure_shape(Shape::new(s.n, s.c, s.h * 2, s.w * 2), "max_unpool backward grad")?;
    let mut out = Tensor::zeros(s);
    let ow = s.w * 2;
    let mut o = 0;
    for b in 0..s.n {
        for c in 0..s.c {
            let src = grad_out.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    let off = indices.offsets[o] as usize;
                    dst[y * s.w + x] = src[(2 * y + off / 2) * ow + 2 * x + off % 2];
                    o += 1;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(h: usize, w: usize, v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, h, w), v).unwrap()
    }

    #[test]
    fn single_window() {
        let (y, idx) = max_pool_2x2(&t(2, 2, vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.position(0, 0, 0, 0), (1, 1));
    }

    #[test]
    fn ties_pick_lowest_index() {
        let (y, idx) = max_pool_2x2(&t(2, 2, vec![7.0; 4])).unwrap();
        assert_eq!(y.data(), &[7.0]);
        assert_eq!(idx.position(0, 0, 0, 0), (0, 0));
    }

    #[test]
    fn ramp_4x4() {
        let (y, _) = max_pool_2x2(&t(4, 4, (0..16).map(f64::from).collect())).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn odd_size_rejected() {
        assert!(max_pool_2x2(&t(3, 2, vec![0.0; 6])).is_err());
    }

    #[test]
    fn unpool_scatters() {
        let (_, idx) = max_pool_2x2(&t(2, 2, vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let up = max_unpool_2x2(&t(1, 1, vec![4.0]), &idx).unwrap();
        assert_eq!(up.data(), &[0.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn unpool_of_zeros() {
        let (_, idx) = max_pool_2x2(&t(4, 4, (0..16).map(f64::from).collect())).unwrap();
        let up = max_unpool_2x2(&Tensor::<f64>::zeros(idx.shape()), &idx).unwrap();
        assert_eq!(up.shape(), Shape::new(1, 1, 4, 4));
        assert!(up.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn round_trip_keeps_window_max_in_place() {
        let x = t(2, 4, vec![1.0, 9.0, 0.5, 0.25, -3.0, 2.0, 8.0, 0.0]);
        let (y, idx) = max_pool_2x2(&x).unwrap();
        let up = max_unpool_2x2(&y, &idx).unwrap();
        assert_eq!(up.data(), &[0.0, 9.0, 0.0, 0.0, 0.0, 0.0, 8.0, 0.0]);
    }

    #[test]
    fn unpool_shape_mismatch() {
        let (_, idx) = max_pool_2x2(&t(2, 2, vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!(max_unpool_2x2(&t(1, 2, vec![1.0, 2.0]), &idx).is_err());
    }
}
