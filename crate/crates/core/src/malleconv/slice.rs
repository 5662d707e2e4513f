//! Slicing a kernel grid onto a full-resolution feature map.
//!
//! For output pixel `(y, x)` the four neighbouring cells are blended with the
//! stencil weights into one depthwise kernel and bias, which is then applied
//! with zero padding:
//!
//! ```text
//! Z[y, x, c] = b'[c] + Σ_{u,v} W'[c, u, v] · X[y + u − k/2, x + v − k/2, c]
//! ```
//!
//! [`slice_apply_fused`] blends into a per-worker scratch of `(k²+1)·c`
//! floats. [`slice_apply_naive`] first materializes the whole
//! `(n, h, w, (k²+1)·c)` kernel map and is kept as the reference path.

use std::thread;

use crate::error::{Error, Result};
use crate::malleconv::grid::{packed_channels, KernelGrid};
use crate::malleconv::stencil::AxisStencil;
use crate::ops::depthwise_conv2d;
use crate::parallel;
use crate::tensor::{Shape, Tensor};

fn check(x: &Tensor, g: &KernelGrid) -> Result<()> {
    let xs = x.shape();
    if xs.c != g.c() || xs.n != g.batch() {
        return Err(Error::ShapeMismatch { op: "slice_apply", lhs: xs, rhs: g.packed().shape() });
    }
    Ok(())
}

/// Writes the bilinear blend of the four packed cells around `(sy, sx)` into
/// `out`, as nested lerps so that equal cells reproduce their value exactly.
#[inline]
fn blend(packed: &[f32], gs: Shape, n: usize, sy: &AxisStencil, sx: &AxisStencil, out: &mut [f32]) {
    let t = gs.c;
    let cell = |r: usize, c: usize| {
        let base = gs.index(n, r, c, 0);
        &packed[base..base + t]
    };
    let (a, b) = (cell(sy.i0, sx.i0), cell(sy.i0, sx.i1));
    let (c, d) = (cell(sy.i1, sx.i0), cell(sy.i1, sx.i1));
    let (wx, wy) = (sx.w1, sy.w1);
    for (i, o) in out.iter_mut().enumerate() {
        let top = a[i] + wx * (b[i] - a[i]);
        let bot = c[i] + wx * (d[i] - c[i]);
        *o = top + wy * (bot - top);
    }
}

/// Applies one blended kernel at `(y, x)` of image `n`.
#[inline]
fn apply_pixel(xd: &[f32], xs: Shape, n: usize, y: usize, x: usize, kernel: &[f32], k: usize, out: &mut [f32]) {
    let c = xs.c;
    let kk = k * k;
    let p = k / 2;
    out.copy_from_slice(&kernel[kk * c..]);
    for u in 0..k {
        let Some(iy) = (y + u).checked_sub(p).filter(|&iy| iy < xs.h) else { continue };
        for v in 0..k {
            let Some(ix) = (x + v).checked_sub(p).filter(|&ix| ix < xs.w) else { continue };
            let xi = xs.index(n, iy, ix, 0);
            let t = u * k + v;
            for ch in 0..c {
                out[ch] += kernel[ch * kk + t] * xd[xi + ch];
            }
        }
    }
}

/// Processes output rows `first_row..` (rows counted across the batch) into `out`.
fn fused_rows(x: &Tensor, g: &KernelGrid, first_row: usize, out: &mut [f32]) {
    let xs = x.shape();
    let gs = g.packed().shape();
    let row_len = xs.w * xs.c;
    let mut kernel = vec![0.0f32; packed_channels(g.k(), g.c())];
    for (r, out_row) in out.chunks_exact_mut(row_len).enumerate() {
        let (n, y) = ((first_row + r) / xs.h, (first_row + r) % xs.h);
        let sy = AxisStencil::new(y, gs.h, xs.h);
        for (x_px, out_px) in out_row.chunks_exact_mut(xs.c).enumerate() {
            let sx = AxisStencil::new(x_px, gs.w, xs.w);
            blend(g.packed().data(), gs, n, &sy, &sx, &mut kernel);
            apply_pixel(x.data(), xs, n, y, x_px, &kernel, g.k(), out_px);
        }
    }
}

/// Fused slice-and-apply. Auxiliary storage is one `(k²+1)·c` kernel per worker.
pub fn slice_apply_fused(x: &Tensor, g: &KernelGrid) -> Result<Tensor> {
    check(x, g)?;
    let xs = x.shape();
    let mut out = vec![0.0f32; xs.numel()];
    let rows = xs.n * xs.h;
    let workers = parallel::threads().min(rows);
    if workers <= 1 {
        fused_rows(x, g, 0, &mut out);
    } else {
        let per = rows.div_ceil(workers);
        let row_len = xs.w * xs.c;
        thread::scope(|s| {
            for (i, chunk) in out.chunks_mut(per * row_len).enumerate() {
                s.spawn(move || fused_rows(x, g, i * per, chunk));
            }
        });
    }
    Tensor::from_op("slice_apply_fused", xs, out)
}

/// Result of [`slice_apply_naive`].
#[derive(Debug)]
pub struct NaiveSlice {
    pub output: Tensor,
    /// Elements in the materialized full-resolution kernel and bias map.
    pub aux_elems: usize,
}

/// Reference path: upsample the grid to a full `(n, h, w, (k²+1)·c)` map, then apply it.
pub fn slice_apply_naive(x: &Tensor, g: &KernelGrid) -> Result<NaiveSlice> {
    check(x, g)?;
    let xs = x.shape();
    let gs = g.packed().shape();
    let t = packed_channels(g.k(), g.c());
    let mut map = vec![0.0f32; xs.n * xs.h * xs.w * t];
    for n in 0..xs.n {
        for y in 0..xs.h {
            let sy = AxisStencil::new(y, gs.h, xs.h);
            for x_px in 0..xs.w {
                let sx = AxisStencil::new(x_px, gs.w, xs.w);
                let at = ((n * xs.h + y) * xs.w + x_px) * t;
                blend(g.packed().data(), gs, n, &sy, &sx, &mut map[at..at + t]);
            }
        }
    }
    let mut out = vec![0.0f32; xs.numel()];
    for n in 0..xs.n {
        for y in 0..xs.h {
            for x_px in 0..xs.w {
                let px = (n * xs.h + y) * xs.w + x_px;
                let o = px * xs.c;
                apply_pixel(x.data(), xs, n, y, x_px, &map[px * t..(px + 1) * t], g.k(), &mut out[o..o + xs.c]);
            }
        }
    }
    let aux_elems = map.len();
    drop(map);
    Ok(NaiveSlice { output: Tensor::from_op("slice_apply_naive", xs, out)?, aux_elems })
}

/// Applies the single cell `(row, col)` of each image's grid everywhere.
///
/// For a batch of one this is exactly `depthwise_conv2d` with that cell's kernel.
pub fn kernel_swap_apply(x: &Tensor, g: &KernelGrid, row: usize, col: usize) -> Result<Tensor> {
    check(x, g)?;
    if x.shape().n == 1 {
        let (w, b) = g.cell_kernel(0, row, col)?;
        return depthwise_conv2d(x, g.k(), &w, Some(&b));
    }
    let items = (0..x.shape().n)
        .map(|n| {
            let (w, b) = g.cell_kernel(n, row, col)?;
            depthwise_conv2d(&x.batch_item(n)?, g.k(), &w, Some(&b))
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&items)
}

pub(crate) struct SliceGrads {
    pub x: Vec<f32>,
    pub grid: Vec<f32>,
}

/// Adjoint of [`slice_apply_fused`]: scatters through the same stencil weights.
pub(crate) fn slice_apply_backward(x: &Tensor, g: &KernelGrid, gout: &[f32]) -> SliceGrads {
    let xs = x.shape();
    let gs = g.packed().shape();
    let (k, c) = (g.k(), g.c());
    let kk = k * k;
    let p = k / 2;
    let t = packed_channels(k, c);
    let xd = x.data();
    let packed = g.packed().data();
    let mut gx = vec![0.0f32; xs.numel()];
    let mut ggrid = vec![0.0f32; gs.numel()];
    let mut kernel = vec![0.0f32; t];
    let mut dkernel = vec![0.0f32; t];
    for n in 0..xs.n {
        for y in 0..xs.h {
            let sy = AxisStencil::new(y, gs.h, xs.h);
            for x_px in 0..xs.w {
                let sx = AxisStencil::new(x_px, gs.w, xs.w);
                let taps = sy.taps2d(&sx);
                blend(packed, gs, n, &sy, &sx, &mut kernel);
                let o = xs.index(n, y, x_px, 0);
                let gz = &gout[o..o + c];
                dkernel.fill(0.0);
                dkernel[kk * c..].copy_from_slice(gz);
                for u in 0..k {
                    let Some(iy) = (y + u).checked_sub(p).filter(|&iy| iy < xs.h) else { continue };
                    for v in 0..k {
                        let Some(ix) = (x_px + v).checked_sub(p).filter(|&ix| ix < xs.w) else { continue };
                        let xi = xs.index(n, iy, ix, 0);
                        let tap = u * k + v;
                        for ch in 0..c {
                            gx[xi + ch] += kernel[ch * kk + tap] * gz[ch];
                            dkernel[ch * kk + tap] = gz[ch] * xd[xi + ch];
                        }
                    }
                }
                for (r, col, w) in taps {
                    if w == 0.0 {
                        continue;
                    }
                    let base = gs.index(n, r, col, 0);
                    for (acc, d) in ggrid[base..base + t].iter_mut().zip(&dkernel) {
                        *acc += w * d;
                    }
                }
            }
        }
    }
    SliceGrads { x: gx, grid: ggrid }
}
