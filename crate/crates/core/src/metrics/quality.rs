use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR reported for identical images.
pub const PSNR_SENTINEL: f64 = 99.0;

const SSIM_SIGMA: f64 = 1.5;
const SSIM_RADIUS: usize = 5;

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { op, lhs: a.shape(), rhs: b.shape() });
    }
    if a.is_empty() {
        return Err(Error::InvalidShape(format!("{op} of empty tensors")));
    }
    Ok(())
}

/// Mean squared error, accumulated in f64.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same("mse", a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(peak² / mse)`, capped at [`PSNR_SENTINEL`].
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_SENTINEL;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_SENTINEL)
}

pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

fn gaussian_window() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut w = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *v = (-0.5 * d * d / (SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter evaluated only where the window fits.
fn filter_valid(img: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| win[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| win[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over channels and batch items, for data range 1.
///
/// Gaussian 11×11 window with σ = 1.5, population covariances, and the
/// map averaged over positions where the window lies inside the image.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same("ssim", a, b)?;
    let s = a.shape();
    let k = 2 * SSIM_RADIUS + 1;
    if s.h.min(s.w) < k {
        return Err(Error::InvalidShape(format!("ssim needs at least {k}x{k} pixels, got {}x{}", s.h, s.w)));
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let win = gaussian_window();
    let mut total = 0.0;
    for n in 0..s.n {
        for ch in 0..s.c {
            let plane = |t: &Tensor| -> Vec<f64> {
                (0..s.h * s.w).map(|i| t.at(n, i / s.w, i % s.w, ch) as f64).collect()
            };
            let (x, y) = (plane(a), plane(b));
            let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
            let f = |v: &[f64]| filter_valid(v, s.h, s.w, &win);
            let (mx, my) = (f(&x), f(&y));
            let (mxx, myy, mxy) = (f(&prod(&x, &x)), f(&prod(&y, &y)), f(&prod(&x, &y)));
            let mut acc = 0.0;
            for i in 0..mx.len() {
                let (vx, vy, cxy) = (mxx[i] - mx[i] * mx[i], myy[i] - my[i] * my[i], mxy[i] - mx[i] * my[i]);
                acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2))
                    / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
            }
            total += acc / mx.len() as f64;
        }
    }
    Ok(total / (s.n * s.c) as f64)
}
