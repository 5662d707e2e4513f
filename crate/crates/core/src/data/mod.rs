//! Images, synthetic corpus, noise and augmentation.

pub mod pnm;
pub mod synth;

pub use pnm::{load_image, save_image, PnmError};
pub use synth::synth_corpus;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

/// `h × w` image with 1 or 3 interleaved channels, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f32>,
}

impl Image {
    /// Validates dimensions and clamps values into `[0, 1]`.
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if h == 0 || w == 0 || !(c == 1 || c == 3) {
            return Err(Error::InvalidShape(format!("image {h}x{w} with {c} channels")));
        }
        if data.len() != h * w * c {
            return Err(Error::InvalidShape(format!("image {h}x{w}x{c} needs {} values, got {}", h * w * c, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "Image::new" });
        }
        Ok(Self::from_raw(h, w, c, data))
    }

    pub(crate) fn from_raw(h: usize, w: usize, c: usize, mut data: Vec<f32>) -> Self {
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Image { h, w, c, data }
    }

    pub fn filled(h: usize, w: usize, c: usize, value: f32) -> Result<Self> {
        Image::new(h, w, c, vec![value; h * w * c])
    }

    /// Converts a `(1, h, w, c)` tensor, clamping into `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 {
            return Err(Error::InvalidShape(format!("image from batched tensor {s}")));
        }
        Image::new(s.h, s.w, s.c, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(Shape::new(1, self.h, self.w, self.c), self.data.clone()).expect("image invariants")
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if y0 + h > self.h || x0 + w > self.w || h == 0 || w == 0 {
            return Err(Error::OutOfRange(format!("crop {h}x{w} at ({y0}, {x0}) of {}x{} image", self.h, self.w)));
        }
        let mut data = Vec::with_capacity(h * w * self.c);
        for y in y0..y0 + h {
            let i = (y * self.w + x0) * self.c;
            data.extend_from_slice(&self.data[i..i + w * self.c]);
        }
        Ok(Image { h, w, c: self.c, data })
    }

    /// Order-independent content hash of the 8-bit quantized pixels.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.data.len() + 24);
        for d in [self.h, self.w, self.c] {
            bytes.extend_from_slice(&(d as u64).to_le_bytes());
        }
        bytes.extend(self.data.iter().map(|&v| (v * 255.0).round() as u8));
        crate::rng::fnv1a(&bytes)
    }
}

/// Additive white Gaussian noise with `sigma` on the 0–255 scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    pub sigma: f32,
    pub seed: u64,
}

/// Pre-clamp noise samples `N(0, (sigma/255)²)`.
pub fn awgn_samples(n: usize, sigma: f32, rng: &mut Rng) -> Vec<f32> {
    let mut out = vec![0.0f32; n];
    rng.fill_normal(&mut out, sigma / 255.0);
    out
}

fn noisy(x: &[f32], sigma: f32, rng: &mut Rng) -> Vec<f32> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    x.iter().zip(awgn_samples(x.len(), sigma, rng)).map(|(v, n)| (v + n).clamp(0.0, 1.0)).collect()
}

/// `clamp(x + n, 0, 1)` with noise drawn from `Rng::new(cfg.seed)`.
pub fn add_awgn(img: &Image, cfg: &NoiseConfig) -> Result<Image> {
    if !(cfg.sigma >= 0.0) {
        return Err(Error::OutOfRange(format!("noise sigma {}", cfg.sigma)));
    }
    let data = noisy(&img.data, cfg.sigma, &mut Rng::new(cfg.seed));
    Ok(Image { data, ..*img })
}

/// Tensor version of [`add_awgn`] drawing from an existing stream.
pub fn add_awgn_tensor(x: &Tensor, sigma: f32, rng: &mut Rng) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(Error::OutOfRange(format!("noise sigma {sigma}")));
    }
    Tensor::new(x.shape(), noisy(x.data(), sigma, rng))
}

/// Uniformly placed `size × size` crop.
pub fn random_patch(img: &Image, size: usize, rng: &mut Rng) -> Result<Image> {
    if size == 0 || size > img.h.min(img.w) {
        return Err(Error::OutOfRange(format!("patch {size} from {}x{} image", img.h, img.w)));
    }
    let y0 = rng.below(img.h - size + 1);
    let x0 = rng.below(img.w - size + 1);
    img.crop(y0, x0, size, size)
}

fn flip_horizontal(img: &Image) -> Image {
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..img.h {
        for x in (0..img.w).rev() {
            let i = (y * img.w + x) * img.c;
            data.extend_from_slice(&img.data[i..i + img.c]);
        }
    }
    Image { data, ..*img }
}

/// Quarter turn counter-clockwise: `out[y][x] = in[x][w - 1 - y]`.
fn rotate_ccw(img: &Image) -> Image {
    let (h, w) = (img.w, img.h);
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..h {
        for x in 0..w {
            let i = (x * img.w + (img.w - 1 - y)) * img.c;
            data.extend_from_slice(&img.data[i..i + img.c]);
        }
    }
    Image { h, w, c: img.c, data }
}

/// Dihedral transform `k ∈ 0..8`, with `k = r + 4f`: mirror left-right if
/// `f = 1`, then rotate `r` quarter turns counter-clockwise. `k = 0` is the
/// identity.
pub fn augment(img: &Image, k: usize) -> Result<Image> {
    if k >= 8 {
        return Err(Error::OutOfRange(format!("dihedral index {k}")));
    }
    let mut out = if k >= 4 { flip_horizontal(img) } else { img.clone() };
    for _ in 0..k % 4 {
        out = rotate_ccw(&out);
    }
    Ok(out)
}

/// Index of the inverse transform: rotations invert to the opposite turn,
/// mirrored transforms are involutions.
pub fn augment_inverse(k: usize) -> usize {
    if k < 4 {
        (4 - k) % 4
    } else {
        k
    }
}
