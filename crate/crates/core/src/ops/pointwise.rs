use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub fn relu(x: &Tensor) -> Result<Tensor> {
    x.map("relu", |v| v.max(0.0))
}

/// Adds a `(1, 1, 1, c)` bias to every pixel.
pub fn add_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let c = x.shape().c;
    if b.shape() != Shape::new(1, 1, 1, c) {
        return Err(Error::ShapeMismatch { op: "add_bias", lhs: x.shape(), rhs: b.shape() });
    }
    let mut out = x.data().to_vec();
    for px in out.chunks_exact_mut(c) {
        for (o, bv) in px.iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Tensor::from_op("add_bias", x.shape(), out)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::ShapeMismatch { op: "concat_channels", lhs: sa, rhs: sb });
    }
    let os = sa.with_c(sa.c + sb.c);
    let mut out = Vec::with_capacity(os.numel());
    for (pa, pb) in a.data().chunks_exact(sa.c).zip(b.data().chunks_exact(sb.c)) {
        out.extend_from_slice(pa);
        out.extend_from_slice(pb);
    }
    Tensor::from_op("concat_channels", os, out)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub(crate) fn split_channels(g: &[f32], ca: usize, cb: usize) -> (Vec<f32>, Vec<f32>) {
    let pixels = g.len() / (ca + cb);
    let mut ga = Vec::with_capacity(pixels * ca);
    let mut gb = Vec::with_capacity(pixels * cb);
    for px in g.chunks_exact(ca + cb) {
        ga.extend_from_slice(&px[..ca]);
        gb.extend_from_slice(&px[ca..]);
    }
    (ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps() {
        let x = Tensor::new(Shape::new(1, 1, 1, 2), vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn concat_and_bias() {
        let a = Tensor::zeros(Shape::new(2, 3, 3, 2));
        let b = Tensor::ones(Shape::new(2, 3, 3, 5));
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape().c, 7);
        let (ga, gb) = split_channels(c.data(), 2, 5);
        assert_eq!(ga, a.data());
        assert_eq!(gb, b.data());

        let bias = Tensor::new(Shape::new(1, 1, 1, 2), vec![0.5, -1.0]).unwrap();
        let y = add_bias(&a, &bias).unwrap();
        for px in y.data().chunks_exact(2) {
            assert_eq!(px, bias.data());
        }
    }
}
