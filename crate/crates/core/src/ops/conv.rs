//! Dense and depthwise 2D convolution in NHWC.
//!
//! Dense convolution lowers to a GEMM: the input is unfolded into an
//! `(n·h'·w') × (k²·c_in)` matrix whose column index is `(u·k + v)·c_in + i`,
//! which is exactly the row-major layout of a `(k, k, c_in, c_out)` weight
//! tensor viewed as `(k²·c_in) × c_out`. 1×1 stride-1 convolutions use the
//! input buffer directly.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Zero padding of `k / 2` on every side; output is `ceil(h / stride)`.
    Same,
    /// No padding; output is `(h - k) / stride + 1`.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub padding: Padding,
    pub depthwise: bool,
}

impl ConvSpec {
    /// Stride-1 same-padded dense convolution.
    pub fn same(k: usize, c_in: usize, c_out: usize) -> Self {
        ConvSpec { k, c_in, c_out, stride: 1, padding: Padding::Same, depthwise: false }
    }

    /// Stride-1 same-padded depthwise convolution.
    pub fn depthwise(k: usize, c: usize) -> Self {
        ConvSpec { k, c_in: c, c_out: c, stride: 1, padding: Padding::Same, depthwise: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.stride == 0 || self.c_in == 0 || self.c_out == 0 {
            return Err(Error::InvalidShape(format!("degenerate conv spec {self:?}")));
        }
        if self.padding == Padding::Same && self.k % 2 == 0 {
            return Err(Error::InvalidShape(format!("same padding needs odd k, got k = {}", self.k)));
        }
        if self.depthwise && self.c_in != self.c_out {
            return Err(Error::InvalidShape(format!(
                "depthwise conv needs c_in == c_out, got {} -> {}",
                self.c_in, self.c_out
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        if self.depthwise {
            Shape::new(1, self.k, self.k, self.c_in)
        } else {
            Shape::new(self.k, self.k, self.c_in, self.c_out)
        }
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, 1, 1, self.c_out)
    }

    pub fn pad(&self) -> usize {
        match self.padding {
            Padding::Same => self.k / 2,
            Padding::Valid => 0,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.padding {
            Padding::Same => Ok((h.div_ceil(self.stride), w.div_ceil(self.stride))),
            Padding::Valid => {
                if h < self.k || w < self.k {
                    return Err(Error::InvalidShape(format!(
                        "valid conv with k = {} on {h}x{w} input",
                        self.k
                    )));
                }
                Ok(((h - self.k) / self.stride + 1, (w - self.k) / self.stride + 1))
            }
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let (h, w) = self.output_hw(input.h, input.w)?;
        Ok(Shape::new(input.n, h, w, self.c_out))
    }

    fn check(&self, x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Shape> {
        self.validate()?;
        let xs = x.shape();
        if xs.c != self.c_in {
            return Err(Error::ShapeMismatch {
                op: "conv2d input channels",
                lhs: xs,
                rhs: Shape::new(xs.n, xs.h, xs.w, self.c_in),
            });
        }
        if w.shape() != self.weight_shape() {
            return Err(Error::ShapeMismatch { op: "conv2d weights", lhs: w.shape(), rhs: self.weight_shape() });
        }
        if let Some(b) = b {
            if b.shape() != self.bias_shape() {
                return Err(Error::ShapeMismatch { op: "conv2d bias", lhs: b.shape(), rhs: self.bias_shape() });
            }
        }
        self.output_shape(xs)
    }

    /// Input coordinate for output coordinate `o` and tap `t`, if in bounds.
    #[inline]
    fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride + t).checked_sub(self.pad())?;
        (i < extent).then_some(i)
    }
}

/// `out[n,y,x,o] = bias[o] + Σ_{u,v,i} w[u,v,i,o] · x_pad[n, y·s+u, x·s+v, i]`.
///
/// A spec with `depthwise` set dispatches to [`depthwise_conv2d`]'s kernel.
pub fn conv2d(x: &Tensor, spec: &ConvSpec, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let out_shape = spec.check(x, w, b)?;
    if spec.depthwise {
        return depthwise_forward(x, spec, w, b, out_shape);
    }
    let rows = out_shape.n * out_shape.h * out_shape.w;
    let cols = spec.k * spec.k * spec.c_in;
    let mut out = vec![0.0f32; out_shape.numel()];
    if let Some(b) = b {
        for px in out.chunks_exact_mut(spec.c_out) {
            px.copy_from_slice(b.data());
        }
    }
    let unfolded;
    let a: &[f32] = if is_pointwise(spec) {
        x.data()
    } else {
        unfolded = im2col(x, spec, out_shape);
        &unfolded
    };
    gemm(rows, cols, spec.c_out, a, (cols, 1), w.data(), (spec.c_out, 1), &mut out, (spec.c_out, 1));
    Tensor::from_op("conv2d", out_shape, out)
}

/// Depthwise convolution with `weights` of shape `(1, k, k, c)` and `bias` of shape `(1, 1, 1, c)`.
pub fn depthwise_conv2d(x: &Tensor, k: usize, weights: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let spec = ConvSpec::depthwise(k, x.shape().c);
    conv2d(x, &spec, weights, bias)
}

pub(crate) struct ConvGrads {
    pub x: Vec<f32>,
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

/// Gradients of [`conv2d`] given the upstream gradient `g` (output-shaped).
/// With `need_x` false the input gradient of a dense conv is left empty.
pub(crate) fn conv2d_backward(x: &Tensor, spec: &ConvSpec, w: &Tensor, g: &[f32], need_x: bool) -> ConvGrads {
    let out_shape = spec.output_shape(x.shape()).expect("validated in forward");
    if spec.depthwise {
        return depthwise_backward(x, spec, w, g, out_shape);
    }
    let rows = out_shape.n * out_shape.h * out_shape.w;
    let cols = spec.k * spec.k * spec.c_in;

    let mut gb = vec![0.0f32; spec.c_out];
    for px in g.chunks_exact(spec.c_out) {
        for (acc, v) in gb.iter_mut().zip(px) {
            *acc += v;
        }
    }

    let pointwise = is_pointwise(spec);
    let unfolded;
    let a: &[f32] = if pointwise {
        x.data()
    } else {
        unfolded = im2col(x, spec, out_shape);
        &unfolded
    };
    // gW = Aᵀ · G
    let mut gw = vec![0.0f32; cols * spec.c_out];
    gemm(cols, rows, spec.c_out, a, (1, cols), g, (spec.c_out, 1), &mut gw, (spec.c_out, 1));
    if !need_x {
        return ConvGrads { x: Vec::new(), w: gw, b: gb };
    }
    // gA = G · Wᵀ
    let mut ga = vec![0.0f32; rows * cols];
    gemm(rows, spec.c_out, cols, g, (spec.c_out, 1), w.data(), (1, spec.c_out), &mut ga, (cols, 1));
    let gx = if pointwise { ga } else { col2im(&ga, x.shape(), spec, out_shape) };
    ConvGrads { x: gx, w: gw, b: gb }
}

fn is_pointwise(spec: &ConvSpec) -> bool {
    spec.k == 1 && spec.stride == 1
}

fn im2col(x: &Tensor, spec: &ConvSpec, out: Shape) -> Vec<f32> {
    let xs = x.shape();
    let (k, ci) = (spec.k, spec.c_in);
    let cols = k * k * ci;
    let mut buf = vec![0.0f32; out.n * out.h * out.w * cols];
    let data = x.data();
    let mut row = 0;
    for n in 0..out.n {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let dst = &mut buf[row * cols..(row + 1) * cols];
                for u in 0..k {
                    let Some(iy) = spec.source(oy, u, xs.h) else { continue };
                    for v in 0..k {
                        let Some(ix) = spec.source(ox, v, xs.w) else { continue };
                        let src = xs.index(n, iy, ix, 0);
                        let at = (u * k + v) * ci;
                        dst[at..at + ci].copy_from_slice(&data[src..src + ci]);
                    }
                }
                row += 1;
            }
        }
    }
    buf
}

fn col2im(cols_buf: &[f32], xs: Shape, spec: &ConvSpec, out: Shape) -> Vec<f32> {
    let (k, ci) = (spec.k, spec.c_in);
    let cols = k * k * ci;
    let mut gx = vec![0.0f32; xs.numel()];
    let mut row = 0;
    for n in 0..out.n {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let src = &cols_buf[row * cols..(row + 1) * cols];
                for u in 0..k {
                    let Some(iy) = spec.source(oy, u, xs.h) else { continue };
                    for v in 0..k {
                        let Some(ix) = spec.source(ox, v, xs.w) else { continue };
                        let dst = xs.index(n, iy, ix, 0);
                        let at = (u * k + v) * ci;
                        for (d, s) in gx[dst..dst + ci].iter_mut().zip(&src[at..at + ci]) {
                            *d += s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    gx
}

fn depthwise_forward(x: &Tensor, spec: &ConvSpec, w: &Tensor, b: Option<&Tensor>, out_shape: Shape) -> Result<Tensor> {
    let xs = x.shape();
    let (k, c) = (spec.k, spec.c_in);
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0f32; out_shape.numel()];
    for n in 0..out_shape.n {
        for oy in 0..out_shape.h {
            for ox in 0..out_shape.w {
                let o = out_shape.index(n, oy, ox, 0);
                let px = &mut out[o..o + c];
                if let Some(b) = b {
                    px.copy_from_slice(b.data());
                }
                for u in 0..k {
                    let Some(iy) = spec.source(oy, u, xs.h) else { continue };
                    for v in 0..k {
                        let Some(ix) = spec.source(ox, v, xs.w) else { continue };
                        let i = xs.index(n, iy, ix, 0);
                        let taps = &wd[(u * k + v) * c..(u * k + v + 1) * c];
                        for ((acc, wv), xv) in px.iter_mut().zip(taps).zip(&xd[i..i + c]) {
                            *acc += wv * xv;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_op("depthwise_conv2d", out_shape, out)
}

fn depthwise_backward(x: &Tensor, spec: &ConvSpec, w: &Tensor, g: &[f32], out_shape: Shape) -> ConvGrads {
    let xs = x.shape();
    let (k, c) = (spec.k, spec.c_in);
    let (xd, wd) = (x.data(), w.data());
    let mut gx = vec![0.0f32; xs.numel()];
    let mut gw = vec![0.0f32; wd.len()];
    let mut gb = vec![0.0f32; c];
    for n in 0..out_shape.n {
        for oy in 0..out_shape.h {
            for ox in 0..out_shape.w {
                let o = out_shape.index(n, oy, ox, 0);
                let gpx = &g[o..o + c];
                for (acc, gv) in gb.iter_mut().zip(gpx) {
                    *acc += gv;
                }
                for u in 0..k {
                    let Some(iy) = spec.source(oy, u, xs.h) else { continue };
                    for v in 0..k {
                        let Some(ix) = spec.source(ox, v, xs.w) else { continue };
                        let i = xs.index(n, iy, ix, 0);
                        let t = (u * k + v) * c;
                        for ch in 0..c {
                            gx[i + ch] += wd[t + ch] * gpx[ch];
                            gw[t + ch] += xd[i + ch] * gpx[ch];
                        }
                    }
                }
            }
        }
    }
    ConvGrads { x: gx, w: gw, b: gb }
}

/// `c += a · b` for row-major `(m × k) · (k × n)` with explicit (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    assert!(c.len() >= (m - 1) * rsc + (n - 1) * csc + 1);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn delta3(c: usize) -> Tensor {
        Tensor::from_fn(Shape::new(3, 3, c, c), |u, v, i, o| if u == 1 && v == 1 && i == o { 1.0 } else { 0.0 })
            .unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = Rng::new(1);
        let x = Tensor::randn(Shape::new(2, 5, 6, 3), 1.0, &mut rng);
        let y = conv2d(&x, &ConvSpec::same(3, 3, 3), &delta3(3), None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_constant_interior() {
        let x = Tensor::full(Shape::new(1, 5, 5, 1), 2.5);
        let w = Tensor::ones(Shape::new(3, 3, 1, 1));
        let y = conv2d(&x, &ConvSpec::same(3, 1, 1), &w, None).unwrap();
        assert_eq!(y.at(0, 2, 2, 0), 9.0 * 2.5);
        assert_eq!(y.at(0, 0, 0, 0), 4.0 * 2.5);
    }

    #[test]
    fn depthwise_affine_k1() {
        let x = Tensor::from_fn(Shape::new(1, 2, 3, 2), |_, y, x, c| (y * 3 + x) as f32 - c as f32).unwrap();
        let w = Tensor::full(Shape::new(1, 1, 1, 2), 2.0);
        let b = Tensor::full(Shape::new(1, 1, 1, 2), 1.0);
        let y = depthwise_conv2d(&x, 1, &w, Some(&b)).unwrap();
        for (o, i) in y.data().iter().zip(x.data()) {
            assert_eq!(*o, 2.0 * i + 1.0);
        }
    }

    #[test]
    fn errors() {
        let x = Tensor::zeros(Shape::new(1, 4, 4, 2));
        let w = Tensor::zeros(Shape::new(3, 3, 3, 1));
        assert!(matches!(conv2d(&x, &ConvSpec::same(3, 3, 1), &w, None), Err(Error::ShapeMismatch { .. })));
        let w = Tensor::zeros(Shape::new(2, 2, 2, 1));
        assert!(matches!(conv2d(&x, &ConvSpec::same(2, 2, 1), &w, None), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn strided_and_valid_shapes() {
        let spec = ConvSpec { k: 3, c_in: 1, c_out: 1, stride: 2, padding: Padding::Same, depthwise: false };
        assert_eq!(spec.output_hw(7, 8).unwrap(), (4, 4));
        let spec = ConvSpec { padding: Padding::Valid, ..spec };
        assert_eq!(spec.output_hw(7, 8).unwrap(), (3, 3));
        assert!(spec.output_hw(2, 8).is_err());
    }
}
