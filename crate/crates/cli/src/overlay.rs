//! Boundary overlays as binary PPM (P6).
//!
//! Ground-truth tumour outlines are green. Predicted outlines are blue where
//! the prediction agrees with the truth (or no truth is available) and red
//! where the pixel truly belongs to a different tumour class.

const GREEN: [u8; 3] = [0, 255, 0];
const BLUE: [u8; 3] = [0, 0, 255];
const RED: [u8; 3] = [255, 0, 0];

/// Foreground pixels with a 4-neighbour of another class (or on the edge).
pub fn boundary(mask: &[u8], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let c = mask[y * w + x];
            if c == 0 {
                continue;
            }
            let differs = |yy: isize, xx: isize| {
                yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize || mask[yy as usize * w + xx as usize] != c
            };
            let (yi, xi) = (y as isize, x as isize);
            out[y * w + x] = differs(yi - 1, xi) || differs(yi + 1, xi) || differs(yi, xi - 1) || differs(yi, xi + 1);
        }
    }
    out
}

/// `image` is grayscale in [0, 1].
pub fn render(image: &[f32], h: usize, w: usize, pred: &[u8], truth: Option<&[u8]>) -> Vec<u8> {
    let header = format!("P6\n{w} {h}\n255\n");
    let mut out = Vec::with_capacity(header.len() + 3 * h * w);
    out.extend_from_slice(header.as_bytes());
    let pred_edge = boundary(pred, h, w);
    let truth_edge = truth.map(|t| boundary(t, h, w));
    for i in 0..h * w {
        let g = (image[i].clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut px = [g, g, g];
        if truth_edge.as_ref().is_some_and(|e| e[i]) {
            px = GREEN;
        }
        if pred_edge[i] {
            let wrong = truth.is_some_and(|t| t[i] != 0 && t[i] != pred[i]);
            px = if wrong { RED } else { BLUE };
        }
        out.extend_from_slice(&px);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_outline() {
        #[rustfmt::skip]
        let m = [
            0, 0, 0, 0, 0,
            0, 1, 1, 1, 0,
            0, 1, 1, 1, 0,
            0, 1, 1, 1, 0,
            0, 0, 0, 0, 0,
        ];
        let b = boundary(&m, 5, 5);
        assert_eq!(b.iter().filter(|&&v| v).count(), 8);
        assert!(!b[12]);
    }

    #[test]
    fn colours() {
        let img = [0.5f32; 4];
        let pred = [1, 0, 2, 0];
        let truth = [1, 0, 1, 0];
        let ppm = render(&img, 2, 2, &pred, Some(&truth));
        let header = b"P6\n2 2\n255\n";
        assert_eq!(&ppm[..header.len()], header);
        let px = &ppm[header.len()..];
        assert_eq!(px.len(), 12);
        assert_eq!(&px[0..3], &BLUE);
        assert_eq!(&px[3..6], &[128, 128, 128]);
        assert_eq!(&px[6..9], &RED);
    }
}
