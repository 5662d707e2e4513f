//! Model-boundary padding: reflect-pad at the bottom/right and crop back.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Mirror index without edge repetition (`… 2 1 | 0 1 2 … n-1 | n-2 …`),
/// repeated periodically for pads larger than the input.
pub(crate) fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Grows `x` to `(out_h, out_w)` by reflecting rows below and columns to the right.
pub fn reflect_pad(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let xs = x.shape();
    if out_h < xs.h || out_w < xs.w {
        return Err(Error::InvalidShape(format!("reflect_pad {} to smaller {out_h}x{out_w}", xs)));
    }
    let os = Shape::new(xs.n, out_h, out_w, xs.c);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..xs.n {
        for y in 0..out_h {
            let sy = reflect_index(y, xs.h);
            for xx in 0..out_w {
                let i = xs.index(n, sy, reflect_index(xx, xs.w), 0);
                out.extend_from_slice(&x.data()[i..i + xs.c]);
            }
        }
    }
    Tensor::from_op("reflect_pad", os, out)
}

pub(crate) fn reflect_pad_backward(xs: Shape, out_h: usize, out_w: usize, g: &[f32]) -> Vec<f32> {
    let os = Shape::new(xs.n, out_h, out_w, xs.c);
    let mut gx = vec![0.0f32; xs.numel()];
    for n in 0..xs.n {
        for y in 0..out_h {
            let sy = reflect_index(y, xs.h);
            for xx in 0..out_w {
                let i = xs.index(n, sy, reflect_index(xx, xs.w), 0);
                let o = os.index(n, y, xx, 0);
                for ch in 0..xs.c {
                    gx[i + ch] += g[o + ch];
                }
            }
        }
    }
    gx
}

/// Keeps the top-left `h × w` window.
pub fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let xs = x.shape();
    if h == 0 || w == 0 || h > xs.h || w > xs.w {
        return Err(Error::InvalidShape(format!("crop {xs} to {h}x{w}")));
    }
    let os = Shape::new(xs.n, h, w, xs.c);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..xs.n {
        for y in 0..h {
            let i = xs.index(n, y, 0, 0);
            out.extend_from_slice(&x.data()[i..i + w * xs.c]);
        }
    }
    Tensor::from_op("crop", os, out)
}

pub(crate) fn crop_backward(xs: Shape, h: usize, w: usize, g: &[f32]) -> Vec<f32> {
    let mut gx = vec![0.0f32; xs.numel()];
    for n in 0..xs.n {
        for y in 0..h {
            let i = xs.index(n, y, 0, 0);
            let o = ((n * h) + y) * w * xs.c;
            gx[i..i + w * xs.c].copy_from_slice(&g[o..o + w * xs.c]);
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let got: Vec<_> = (0..9).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, [0, 1, 2, 3, 2, 1, 0, 1, 2]);
        assert_eq!(reflect_index(5, 1), 0);
    }

    #[test]
    fn pad_then_crop_roundtrips() {
        let x = Tensor::from_fn(Shape::new(1, 100, 100, 3), |_, y, x, c| (y * 7 + x * 3 + c) as f32).unwrap();
        let p = reflect_pad(&x, 128, 128).unwrap();
        assert_eq!(p.shape(), Shape::new(1, 128, 128, 3));
        assert_eq!(p.at(0, 100, 5, 1), x.at(0, 98, 5, 1));
        assert_eq!(crop(&p, 100, 100).unwrap(), x);
    }
}
