//! Bilinear resampling with half-pixel centers and edge clamp.
//!
//! Uses the same per-axis stencil as the kernel-grid slicing operator, so an
//! upsampled grid and a sliced grid agree exactly.

use crate::error::{Error, Result};
use crate::malleconv::stencil::AxisStencil;
use crate::tensor::{Shape, Tensor};

pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidShape(format!("resize target {out_h}x{out_w}")));
    }
    let xs = x.shape();
    let os = Shape::new(xs.n, out_h, out_w, xs.c);
    let rows: Vec<_> = (0..out_h).map(|y| AxisStencil::new(y, xs.h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|x| AxisStencil::new(x, xs.w, out_w)).collect();
    let mut out = vec![0.0f32; os.numel()];
    let c = xs.c;
    let d = x.data();
    for n in 0..xs.n {
        for (y, ry) in rows.iter().enumerate() {
            for (xx, rx) in cols.iter().enumerate() {
                let o = os.index(n, y, xx, 0);
                let at = |j: usize, i: usize| xs.index(n, j, i, 0);
                let (a, b, cc, dd) = (at(ry.i0, rx.i0), at(ry.i0, rx.i1), at(ry.i1, rx.i0), at(ry.i1, rx.i1));
                for ch in 0..c {
                    let top = d[a + ch] + rx.w1 * (d[b + ch] - d[a + ch]);
                    let bot = d[cc + ch] + rx.w1 * (d[dd + ch] - d[cc + ch]);
                    out[o + ch] = top + ry.w1 * (bot - top);
                }
            }
        }
    }
    Tensor::from_op("bilinear_resize", os, out)
}

pub(crate) fn bilinear_resize_backward(xs: Shape, out_h: usize, out_w: usize, g: &[f32]) -> Vec<f32> {
    let os = Shape::new(xs.n, out_h, out_w, xs.c);
    let rows: Vec<_> = (0..out_h).map(|y| AxisStencil::new(y, xs.h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|x| AxisStencil::new(x, xs.w, out_w)).collect();
    let mut gx = vec![0.0f32; xs.numel()];
    for n in 0..xs.n {
        for (y, ry) in rows.iter().enumerate() {
            for (xx, rx) in cols.iter().enumerate() {
                let o = os.index(n, y, xx, 0);
                for (j, i, wgt) in ry.taps2d(rx) {
                    let base = xs.index(n, j, i, 0);
                    for ch in 0..xs.c {
                        gx[base + ch] += wgt * g[o + ch];
                    }
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(Shape::new(1, 3, 5, 2), 0.7);
        let y = bilinear_resize(&x, 7, 4).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn single_pixel_fills() {
        let x = Tensor::full(Shape::new(1, 1, 1, 1), 3.0);
        let y = bilinear_resize(&x, 4, 6).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn two_to_four_matches_stencil_formula() {
        // Expected values from g = (p + 0.5) * 0.5 - 0.5 clamped to [0, 1]:
        // per-axis weight on index 1 is [0, 0.25, 0.75, 1].
        let x = Tensor::new(Shape::new(1, 2, 2, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = bilinear_resize(&x, 4, 4).unwrap();
        let f = [0.0f64, 0.25, 0.75, 1.0];
        for yy in 0..4 {
            for xx in 0..4 {
                let expect = f[xx] + 2.0 * f[yy];
                assert!((y.at(0, yy, xx, 0) as f64 - expect).abs() < 1e-6);
            }
        }
    }
}
