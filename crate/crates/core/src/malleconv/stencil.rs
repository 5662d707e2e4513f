//! Bilinear stencils mapping full-resolution pixels onto a coarse grid.
//!
//! Pixel `p` on an axis of `image` samples maps to the continuous grid
//! coordinate `g = (p + 0.5) · grid / image − 0.5` (half-pixel centers),
//! clamped to `[0, grid − 1]`. The two neighbours are `i0 = ⌊g⌋` and
//! `i1 = min(i0 + 1, grid − 1)` with weights `τ(g − i0)` and `τ(g − i1)`,
//! where `τ(a) = max(1 − |a|, 0)`. Clamping the coordinate rather than the
//! indices keeps the weights a partition of unity at the borders.

use crate::error::{Error, Result};

/// Linear interpolation kernel.
#[inline]
pub fn tau(a: f64) -> f64 {
    (1.0 - a.abs()).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisStencil {
    pub i0: usize,
    pub i1: usize,
    pub w0: f32,
    pub w1: f32,
    /// Unclamped continuous grid coordinate.
    pub g: f64,
}

impl AxisStencil {
    #[inline]
    pub fn new(p: usize, grid: usize, image: usize) -> Self {
        debug_assert!(grid >= 1 && image >= 1);
        // (p + 0.5)·grid/image − 0.5 as a single rounded division.
        let num = ((2 * p + 1) * grid) as f64 - image as f64;
        let g = num / (2 * image) as f64;
        let gc = g.clamp(0.0, (grid - 1) as f64);
        let i0 = gc.floor() as usize;
        let i1 = (i0 + 1).min(grid - 1);
        let w0 = tau(gc - i0 as f64);
        let w1 = if i1 != i0 { tau(gc - i1 as f64) } else { 0.0 };
        AxisStencil { i0, i1, w0: w0 as f32, w1: w1 as f32, g }
    }

    /// The four `(row, col, weight)` taps of a 2D stencil, `self` being the row axis.
    /// Order: (r0,c0), (r0,c1), (r1,c0), (r1,c1).
    #[inline]
    pub fn taps2d(&self, col: &AxisStencil) -> [(usize, usize, f32); 4] {
        [
            (self.i0, col.i0, self.w0 * col.w0),
            (self.i0, col.i1, self.w0 * col.w1),
            (self.i1, col.i0, self.w1 * col.w0),
            (self.i1, col.i1, self.w1 * col.w1),
        ]
    }
}

/// Four-neighbour interpolation stencil for one output pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpStencil {
    /// `(row, col)` grid cells, in the order of [`AxisStencil::taps2d`].
    pub cells: [(usize, usize); 4],
    pub weights: [f32; 4],
    /// `grid_w / image_w`
    pub rx: f64,
    /// `grid_h / image_h`
    pub ry: f64,
    pub gx: f64,
    pub gy: f64,
}

/// Stencil for pixel column `x`, row `y` of an `image_h × image_w` map over a
/// `grid_h × grid_w` kernel grid.
pub fn make_stencil(
    x: usize,
    y: usize,
    (grid_h, grid_w): (usize, usize),
    (image_h, image_w): (usize, usize),
) -> Result<InterpStencil> {
    if grid_h == 0 || grid_w == 0 || image_h == 0 || image_w == 0 {
        return Err(Error::InvalidShape(format!("grid {grid_h}x{grid_w}, image {image_h}x{image_w}")));
    }
    if x >= image_w || y >= image_h {
        return Err(Error::OutOfRange(format!("pixel ({x}, {y}) outside {image_w}x{image_h} image")));
    }
    let sx = AxisStencil::new(x, grid_w, image_w);
    let sy = AxisStencil::new(y, grid_h, image_h);
    let taps = sy.taps2d(&sx);
    Ok(InterpStencil {
        cells: taps.map(|(r, c, _)| (r, c)),
        weights: taps.map(|(_, _, w)| w),
        rx: grid_w as f64 / image_w as f64,
        ry: grid_h as f64 / image_h as f64,
        gx: sx.g,
        gy: sy.g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn cell_center_is_one_hot() {
        // Equal sizes: every pixel sits on a cell center.
        let s = make_stencil(3, 5, (8, 8), (8, 8)).unwrap();
        assert_eq!(s.weights, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.cells[0], (5, 3));
        // 9 px over 3 cells: cell 1's center is pixel 4.
        let s = make_stencil(4, 4, (3, 3), (9, 9)).unwrap();
        assert_eq!(s.weights, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.cells[0], (1, 1));
    }

    #[test]
    fn midpoint_splits_evenly() {
        // 3 px over 2 cells: pixel 1 maps to g = 1.5 · 2/3 − 0.5 = 0.5.
        let s = AxisStencil::new(1, 2, 3);
        assert_eq!((s.i0, s.i1), (0, 1));
        assert_eq!((s.w0, s.w1), (0.5, 0.5));
    }

    #[test]
    fn borders_clamp() {
        let s = AxisStencil::new(0, 4, 32);
        assert_eq!((s.i0, s.w0, s.w1), (0, 1.0, 0.0));
        let s = AxisStencil::new(31, 4, 32);
        assert_eq!((s.i0, s.i1, s.w0), (3, 3, 1.0));
    }

    #[test]
    fn partition_of_unity_random() {
        let mut rng = Rng::new(11);
        for _ in 0..10_000 {
            let (ih, iw) = (1 + rng.below(300), 1 + rng.below(300));
            let (gh, gw) = (1 + rng.below(ih), 1 + rng.below(iw));
            let (x, y) = (rng.below(iw), rng.below(ih));
            let s = make_stencil(x, y, (gh, gw), (ih, iw)).unwrap();
            assert!(s.weights.iter().all(|&w| w >= 0.0));
            let sum: f32 = s.weights.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6, "{sum}");
            assert!(s.cells.iter().all(|&(r, c)| r < gh && c < gw));
        }
    }

    #[test]
    fn out_of_range_pixel() {
        assert!(matches!(make_stencil(4, 0, (1, 1), (4, 4)), Err(Error::OutOfRange(_))));
    }
}
