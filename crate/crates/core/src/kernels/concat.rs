use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Concatenates along the channel axis, `a`'s channels first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::Shape(format!("concat_channels: {sa} and {sb} disagree on n/h/w")));
    }
    let mut out = Vec::with_capacity(sa.len() + sb.len());
    for n in 0..sa.n {
        out.extend_from_slice(a.item(n));
        out.extend_from_slice(b.item(n));
    }
    Tensor::from_vec(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), out)
}

/// Inverse of [`concat_channels`]: the first `split` channels, then the rest.
/// Also serves as the concat backward pass.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, split: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = x.shape();
    if split > s.c {
        return Err(Error::Shape(format!("split_channels: {split} > {} channels", s.c)));
    }
    let p = s.plane();
    let mut a = Vec::with_capacity(s.n * split * p);
    let mut b = Vec::with_capacity(s.n * (s.c - split) * p);
    for n in 0..s.n {
        let item = x.item(n);
        a.extend_from_slice(&item[..split * p]);
        b.extend_from_slice(&item[split * p..]);
    }
    Ok((
        Tensor::from_vec(Shape::new(s.n, split, s.h, s.w), a)?,
        Tensor::from_vec(Shape::new(s.n, s.c - split, s.h, s.w), b)?,
    ))
}
