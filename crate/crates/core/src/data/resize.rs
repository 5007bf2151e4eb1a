//! Image (bilinear) and mask (nearest-neighbour) resampling with half-pixel
//! centres, so same-size resizing is the identity.

use crate::data::SliceSample;
use crate::error::{Error, Result};

fn check(len: usize, h: usize, w: usize, oh: usize, ow: usize) -> Result<()> {
    if len != h * w {
        return Err(Error::Shape(format!("{h}x{w} plane holds {len} values")));
    }
    if h == 0 || w == 0 || oh == 0 || ow == 0 {
        return Err(Error::Shape(format!("cannot resize {h}x{w} to {oh}x{ow}")));
    }
    Ok(())
}

/// Source coordinate and interpolation weight for destination index `d`.
fn source(d: usize, n_in: usize, n_out: usize) -> (usize, usize, f32) {
    let s = ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, (s - lo as f64) as f32)
}

pub fn resize_image(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Result<Vec<f32>> {
    check(src.len(), h, w, oh, ow)?;
    if (h, w) == (oh, ow) {
        return Ok(src.to_vec());
    }
    let cols: Vec<_> = (0..ow).map(|x| source(x, w, ow)).collect();
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, ty) = source(y, h, oh);
        let (r0, r1) = (&src[y0 * w..(y0 + 1) * w], &src[y1 * w..(y1 + 1) * w]);
        for &(x0, x1, tx) in &cols {
            let top = r0[x0] + (r0[x1] - r0[x0]) * tx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * tx;
            out.push(top + (bottom - top) * ty);
        }
    }
    Ok(out)
}

fn nearest(d: usize, n_in: usize, n_out: usize) -> usize {
    ((2 * d + 1) * n_in / (2 * n_out)).min(n_in - 1)
}

pub fn resize_mask(src: &[u8], h: usize, w: usize, oh: usize, ow: usize) -> Result<Vec<u8>> {
    check(src.len(), h, w, oh, ow)?;
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let row = &src[nearest(y, h, oh) * w..][..w];
        out.extend((0..ow).map(|x| row[nearest(x, w, ow)]));
    }
    Ok(out)
}

/// Resizes to a network-compatible size (both sides divisible by 16).
pub fn resize_sample(sample: &SliceSample, oh: usize, ow: usize) -> Result<SliceSample> {
    if oh == 0 || ow == 0 || oh % 16 != 0 || ow % 16 != 0 {
        return Err(Error::Shape(format!(
            "resize target {oh}x{ow} must be positive and divisible by 16"
        )));
    }
    let (h, w) = (sample.height, sample.width);
    Ok(SliceSample {
        image: resize_image(&sample.image, h, w, oh, ow)?,
        mask: resize_mask(&sample.mask, h, w, oh, ow)?,
        height: oh,
        width: ow,
        ..sample.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_nearest_two_to_four() {
        let out = resize_mask(&[1, 1, 2, 2], 2, 2, 4, 4).unwrap();
        assert_eq!(out, [1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn same_size_is_identity() {
        let img: Vec<f32> = (0..20).map(|i| i as f32 * 0.37).collect();
        assert_eq!(resize_image(&img, 4, 5, 4, 5).unwrap(), img);
        let mask: Vec<u8> = (0..20).map(|i| (i % 4) as u8).collect();
        assert_eq!(resize_mask(&mask, 4, 5, 4, 5).unwrap(), mask);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = vec![0.3f32; 9 * 7];
        for (oh, ow) in [(16, 16), (3, 5), (32, 48)] {
            assert!(resize_image(&img, 9, 7, oh, ow).unwrap().iter().all(|&v| v == 0.3));
        }
    }

    #[test]
    fn halving_averages_pairs() {
        // 1x4 -> 1x2: sample points fall midway between source pixels
        let out = resize_image(&[0.0, 1.0, 2.0, 3.0], 1, 4, 1, 2).unwrap();
        assert_eq!(out, [0.5, 2.5]);
    }
}
