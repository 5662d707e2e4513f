//! Non-overlapping k×k pooling (stride == k).

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn pooled_shape(op: &'static str, s: Shape, k: usize) -> Result<Shape> {
    if k == 0 || s.h % k != 0 || s.w % k != 0 {
        return Err(Error::Divisibility { op, detail: format!("{}x{} not divisible by window {k}", s.h, s.w) });
    }
    Ok(Shape::new(s.n, s.h / k, s.w / k, s.c))
}

pub fn avg_pool(x: &Tensor, k: usize) -> Result<Tensor> {
    let xs = x.shape();
    let os = pooled_shape("avg_pool", xs, k)?;
    let inv = 1.0 / (k * k) as f32;
    let mut out = vec![0.0f32; os.numel()];
    let c = xs.c;
    for n in 0..os.n {
        for oy in 0..os.h {
            for ox in 0..os.w {
                let o = os.index(n, oy, ox, 0);
                let acc = &mut out[o..o + c];
                for u in 0..k {
                    for v in 0..k {
                        let i = xs.index(n, oy * k + u, ox * k + v, 0);
                        for (a, xv) in acc.iter_mut().zip(&x.data()[i..i + c]) {
                            *a += xv;
                        }
                    }
                }
                acc.iter_mut().for_each(|a| *a *= inv);
            }
        }
    }
    Tensor::from_op("avg_pool", os, out)
}

pub(crate) fn avg_pool_backward(xs: Shape, k: usize, g: &[f32]) -> Vec<f32> {
    let os = Shape::new(xs.n, xs.h / k, xs.w / k, xs.c);
    let inv = 1.0 / (k * k) as f32;
    let mut gx = vec![0.0f32; xs.numel()];
    for n in 0..xs.n {
        for y in 0..xs.h {
            for x in 0..xs.w {
                let i = xs.index(n, y, x, 0);
                let o = os.index(n, y / k, x / k, 0);
                for ch in 0..xs.c {
                    gx[i + ch] = g[o + ch] * inv;
                }
            }
        }
    }
    gx
}

/// Max pooling. Ties resolve to the first element in window scan order.
pub fn max_pool(x: &Tensor, k: usize) -> Result<Tensor> {
    max_pool_with_argmax(x, k).map(|(t, _)| t)
}

/// Max pooling plus, for every output element, the flat input index it came from.
pub(crate) fn max_pool_with_argmax(x: &Tensor, k: usize) -> Result<(Tensor, Vec<u32>)> {
    let xs = x.shape();
    let os = pooled_shape("max_pool", xs, k)?;
    let mut out = vec![f32::NEG_INFINITY; os.numel()];
    let mut arg = vec![0u32; os.numel()];
    for n in 0..os.n {
        for oy in 0..os.h {
            for ox in 0..os.w {
                let o = os.index(n, oy, ox, 0);
                for u in 0..k {
                    for v in 0..k {
                        let i = xs.index(n, oy * k + u, ox * k + v, 0);
                        for ch in 0..xs.c {
                            let val = x.data()[i + ch];
                            if val > out[o + ch] {
                                out[o + ch] = val;
                                arg[o + ch] = (i + ch) as u32;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::from_op("max_pool", os, out)?, arg))
}

pub(crate) fn max_pool_backward(numel: usize, argmax: &[u32], g: &[f32]) -> Vec<f32> {
    let mut gx = vec![0.0f32; numel];
    for (&i, gv) in argmax.iter().zip(g) {
        gx[i as usize] += gv;
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn two_by_two() {
        let x = Tensor::new(Shape::new(1, 2, 2, 1), vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(avg_pool(&x, 2).unwrap().data(), &[4.0]);
        assert_eq!(max_pool(&x, 2).unwrap().data(), &[7.0]);
    }

    #[test]
    fn avg_pool_preserves_mean() {
        let mut rng = Rng::new(4);
        for k in [2, 4, 8] {
            let x = Tensor::rand_uniform(Shape::new(2, 16, 24, 3), 0.0, 1.0, &mut rng);
            let mean = |t: &Tensor| t.data().iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64;
            let pooled = avg_pool(&x, k).unwrap();
            assert!((mean(&pooled) - mean(&x)).abs() < 1e-6);
        }
    }

    #[test]
    fn indivisible() {
        let x = Tensor::zeros(Shape::new(1, 6, 8, 1));
        assert!(matches!(avg_pool(&x, 4), Err(Error::Divisibility { .. })));
        assert!(matches!(max_pool(&x, 4), Err(Error::Divisibility { .. })));
    }
}
