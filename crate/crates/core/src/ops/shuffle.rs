//! Pixel shuffles between space and channels.
//!
//! Channel order everywhere: `out_c = c_in · r² + dy · r + dx`, where
//! `(dy, dx)` is the position inside the r×r block.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// `(n, h, w, c) → (n, h/r, w/r, c·r²)`.
pub fn space_to_channel(x: &Tensor, r: usize) -> Result<Tensor> {
    let xs = x.shape();
    if r == 0 || xs.h % r != 0 || xs.w % r != 0 {
        return Err(Error::Divisibility {
            op: "space_to_channel",
            detail: format!("{}x{} not divisible by {r}", xs.h, xs.w),
        });
    }
    let os = Shape::new(xs.n, xs.h / r, xs.w / r, xs.c * r * r);
    let mut out = vec![0.0f32; os.numel()];
    for_each_pair(xs, os, r, |i, o| out[o] = x.data()[i]);
    Tensor::from_op("space_to_channel", os, out)
}

/// Inverse of [`space_to_channel`].
pub fn channel_to_space(x: &Tensor, r: usize) -> Result<Tensor> {
    let xs = x.shape();
    if r == 0 || xs.c % (r * r) != 0 {
        return Err(Error::Divisibility {
            op: "channel_to_space",
            detail: format!("{} channels not divisible by {}", xs.c, r * r),
        });
    }
    let os = Shape::new(xs.n, xs.h * r, xs.w * r, xs.c / (r * r));
    let mut out = vec![0.0f32; os.numel()];
    for_each_pair(os, xs, r, |i, o| out[i] = x.data()[o]);
    Tensor::from_op("channel_to_space", os, out)
}

/// Calls `f(spatial_index, channel_index)` for every element of the
/// space-side shape `sp` and its image in the channel-side shape `ch`.
pub(crate) fn for_each_pair(sp: Shape, ch: Shape, r: usize, mut f: impl FnMut(usize, usize)) {
    for n in 0..sp.n {
        for y in 0..sp.h {
            for x in 0..sp.w {
                let (by, dy, bx, dx) = (y / r, y % r, x / r, x % r);
                for c in 0..sp.c {
                    f(sp.index(n, y, x, c), ch.index(n, by, bx, c * r * r + dy * r + dx));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn block_scan_order() {
        let x = Tensor::new(Shape::new(1, 2, 2, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = space_to_channel(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 4));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn inverse_pair() {
        let mut rng = Rng::new(2);
        let x = Tensor::randn(Shape::new(2, 8, 6, 3), 1.0, &mut rng);
        let y = space_to_channel(&x, 2).unwrap();
        assert_eq!(y.len(), x.len());
        assert_eq!(channel_to_space(&y, 2).unwrap(), x);
    }

    #[test]
    fn divisibility_errors() {
        assert!(space_to_channel(&Tensor::zeros(Shape::new(1, 3, 4, 1)), 2).is_err());
        assert!(channel_to_space(&Tensor::zeros(Shape::new(1, 3, 4, 3)), 2).is_err());
    }
}
