//! Rank-4 NHWC float tensors.
//!
//! Every feature map, weight and bias in the crate is a [`Tensor`]. Weight
//! tensors reuse the four slots: a dense convolution kernel is stored as
//! `(k, k, c_in, c_out)`, a depthwise kernel as `(1, k, k, c)` and a bias as
//! `(1, 1, 1, c)`.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Guard used by [`rel_err`] so that two zeros compare as equal.
pub const REL_ERR_FLOOR: f32 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Shape { n, h, w, c }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    pub fn is_scalar(&self) -> bool {
        *self == Shape::scalar()
    }

    #[inline]
    pub const fn index(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.h + y) * self.w + x) * self.c + c
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::InvalidShape(format!("all dims must be >= 1, got {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.h, self.w, self.c)
    }
}

/// Immutable NHWC array of `f32`. All values are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::InvalidShape(format!(
                "shape {shape} needs {} elements, got {}",
                shape.numel(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "Tensor::new" });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor from kernel output, rejecting non-finite values.
    pub(crate) fn from_op(op: &'static str, shape: Shape, data: Vec<f32>) -> Result<Self> {
        debug_assert_eq!(data.len(), shape.numel());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        assert!(shape.numel() > 0, "all dims must be >= 1, got {shape}");
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Result<Self> {
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    for c in 0..shape.c {
                        data.push(f(n, y, x, c));
                    }
                }
            }
        }
        Tensor::new(shape, data)
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn(shape: Shape, std: f32, rng: &mut Rng) -> Self {
        let mut data = vec![0.0; shape.numel()];
        rng.fill_normal(&mut data, std);
        Tensor { shape, data }
    }

    pub fn rand_uniform(shape: Shape, lo: f32, hi: f32, rng: &mut Rng) -> Self {
        let data = (0..shape.numel()).map(|_| rng.uniform_range(lo, hi)).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.shape.index(n, y, x, c)]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.data.len() != 1 {
            return Err(Error::contract(format!("item() on non-scalar tensor {}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        shape.validate()?;
        if shape.numel() != self.shape.numel() {
            return Err(Error::ShapeMismatch { op: "reshape", lhs: self.shape, rhs: shape });
        }
        Ok(Tensor { shape, data: self.data })
    }

    /// Returns a copy with `f` applied to every element.
    pub fn map(&self, op: &'static str, f: impl Fn(f32) -> f32) -> Result<Self> {
        Tensor::from_op(op, self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Extracts batch element `n` as a `(1, h, w, c)` tensor.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        if n >= self.shape.n {
            return Err(Error::OutOfRange(format!("batch index {n} for shape {}", self.shape)));
        }
        let per = self.shape.h * self.shape.w * self.shape.c;
        let data = self.data[n * per..(n + 1) * per].to_vec();
        Ok(Tensor { shape: Shape { n: 1, ..self.shape }, data })
    }

    /// Stacks `(1, h, w, c)` tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidShape("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.h, s.w, s.c) != (first.shape.h, first.shape.w, first.shape.c) {
                return Err(Error::ShapeMismatch { op: "stack", lhs: first.shape, rhs: s });
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape: Shape { n, ..first.shape }, data })
    }
}

fn ensure_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch { op, lhs: a.shape, rhs: b.shape });
    }
    Ok(())
}

/// Largest elementwise `|a - b|`.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> Result<f32> {
    ensure_same("max_abs_diff", a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max))
}

/// Largest elementwise `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn rel_err(a: &Tensor, b: &Tensor) -> Result<f32> {
    ensure_same("rel_err", a, b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(REL_ERR_FLOOR))
        .fold(0.0, f32::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(v: &[f32]) -> Tensor {
        Tensor::new(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Tensor::new(Shape::new(1, 2, 2, 1), vec![0.0; 3]).is_err());
        assert!(Tensor::new(Shape::new(0, 2, 2, 1), vec![]).is_err());
        assert!(matches!(
            Tensor::new(Shape::new(1, 1, 1, 2), vec![1.0, f32::NAN]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn comparisons() {
        let x = vec1(&[1.0, -2.0, 3.5]);
        assert_eq!(max_abs_diff(&x, &x).unwrap(), 0.0);
        assert_eq!(rel_err(&vec1(&[2.0]), &vec1(&[1.0])).unwrap(), 0.5);
        assert_eq!(rel_err(&vec1(&[0.0]), &vec1(&[0.0])).unwrap(), 0.0);
        assert!(matches!(max_abs_diff(&x, &vec1(&[1.0])), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn nhwc_indexing() {
        let t = Tensor::from_fn(Shape::new(2, 3, 4, 5), |n, y, x, c| (n * 1000 + y * 100 + x * 10 + c) as f32)
            .unwrap();
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.data()[5], 10.0);
        let item = t.batch_item(1).unwrap();
        assert_eq!(item.at(0, 0, 0, 0), 1000.0);
        let back = Tensor::stack(&[t.batch_item(0).unwrap(), item]).unwrap();
        assert_eq!(back, t);
    }
}
