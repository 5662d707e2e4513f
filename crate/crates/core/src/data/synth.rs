//! Procedural RGB images with heterogeneous regions.
//!
//! Each image starts from a linear color gradient and composites 3–6
//! anti-aliased shapes (disks, half-planes, rectangles) on top. Every shape is
//! filled with a flat color, a checkerboard at a random scale, a gradient or
//! band-limited noise (a coarse random lattice upsampled bilinearly).

use crate::data::Image;
use crate::error::{Error, Result};
use crate::ops::bilinear_resize;
use crate::rng::{mix, Rng};
use crate::tensor::{Shape, Tensor};

type Rgb = [f32; 3];

fn color(rng: &mut Rng) -> Rgb {
    [rng.uniform_f32(), rng.uniform_f32(), rng.uniform_f32()]
}

enum Fill {
    Flat(Rgb),
    Checker { scale: f32, angle: f32, a: Rgb, b: Rgb },
    Gradient { dir: (f32, f32), a: Rgb, b: Rgb },
    Noise(Tensor),
}

impl Fill {
    fn random(size: usize, rng: &mut Rng) -> Result<Fill> {
        Ok(match rng.below(4) {
            0 => Fill::Flat(color(rng)),
            1 => Fill::Checker {
                scale: rng.uniform_range(2.0, 16.0),
                angle: rng.uniform_range(0.0, std::f32::consts::PI),
                a: color(rng),
                b: color(rng),
            },
            2 => {
                let t = rng.uniform_range(0.0, std::f32::consts::TAU);
                Fill::Gradient { dir: (t.cos(), t.sin()), a: color(rng), b: color(rng) }
            }
            _ => {
                let cell = [4, 8, 16][rng.below(3)];
                let g = (size / cell).max(2);
                let base = color(rng);
                let amp = rng.uniform_range(0.3, 0.9);
                let lattice = Tensor::from_fn(Shape::new(1, g, g, 3), |_, _, _, ch| {
                    base[ch] + amp * (rng.uniform_f32() - 0.5)
                })?;
                Fill::Noise(bilinear_resize(&lattice, size, size)?)
            }
        })
    }

    fn at(&self, y: usize, x: usize, size: usize) -> Rgb {
        let (fy, fx) = (y as f32 + 0.5, x as f32 + 0.5);
        match self {
            Fill::Flat(c) => *c,
            Fill::Checker { scale, angle, a, b } => {
                let (s, c) = angle.sin_cos();
                let u = ((fx * c + fy * s) / scale).floor() as i64;
                let v = ((fy * c - fx * s) / scale).floor() as i64;
                if (u + v).rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Fill::Gradient { dir, a, b } => {
                let t = ((fx * dir.0 + fy * dir.1) / size as f32 * 0.5 + 0.5).clamp(0.0, 1.0);
                std::array::from_fn(|i| a[i] + (b[i] - a[i]) * t)
            }
            Fill::Noise(t) => std::array::from_fn(|i| t.at(0, y, x, i)),
        }
    }
}

enum Mask {
    Disk { cy: f32, cx: f32, r: f32 },
    HalfPlane { cy: f32, cx: f32, ny: f32, nx: f32 },
    Rect { y0: f32, x0: f32, y1: f32, x1: f32 },
}

impl Mask {
    fn random(size: usize, rng: &mut Rng) -> Mask {
        let s = size as f32;
        match rng.below(3) {
            0 => Mask::Disk { cy: rng.uniform_range(0.0, s), cx: rng.uniform_range(0.0, s), r: rng.uniform_range(0.08 * s, 0.4 * s) },
            1 => {
                let t = rng.uniform_range(0.0, std::f32::consts::TAU);
                Mask::HalfPlane { cy: rng.uniform_range(0.2 * s, 0.8 * s), cx: rng.uniform_range(0.2 * s, 0.8 * s), ny: t.sin(), nx: t.cos() }
            }
            _ => {
                let (a, b) = (rng.uniform_range(0.0, s), rng.uniform_range(0.0, s));
                let (c, d) = (rng.uniform_range(0.0, s), rng.uniform_range(0.0, s));
                Mask::Rect { y0: a.min(b), y1: a.max(b) + 4.0, x0: c.min(d), x1: c.max(d) + 4.0 }
            }
        }
    }

    /// Anti-aliased coverage of the pixel centered at `(y + 0.5, x + 0.5)`.
    fn coverage(&self, y: usize, x: usize) -> f32 {
        let (fy, fx) = (y as f32 + 0.5, x as f32 + 0.5);
        let inside = match *self {
            Mask::Disk { cy, cx, r } => r - ((fy - cy).powi(2) + (fx - cx).powi(2)).sqrt(),
            Mask::HalfPlane { cy, cx, ny, nx } => (fy - cy) * ny + (fx - cx) * nx,
            Mask::Rect { y0, x0, y1, x1 } => (fy - y0).min(y1 - fy).min(fx - x0).min(x1 - fx),
        };
        (inside + 0.5).clamp(0.0, 1.0)
    }
}

fn synth_image(size: usize, rng: &mut Rng) -> Result<Image> {
    let background = {
        let t = rng.uniform_range(0.0, std::f32::consts::TAU);
        Fill::Gradient { dir: (t.cos(), t.sin()), a: color(rng), b: color(rng) }
    };
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            data.extend_from_slice(&background.at(y, x, size));
        }
    }
    for _ in 0..3 + rng.below(4) {
        let mask = Mask::random(size, rng);
        let fill = Fill::random(size, rng)?;
        for y in 0..size {
            for x in 0..size {
                let a = mask.coverage(y, x);
                if a == 0.0 {
                    continue;
                }
                let f = fill.at(y, x, size);
                let px = &mut data[(y * size + x) * 3..(y * size + x) * 3 + 3];
                for (p, v) in px.iter_mut().zip(f) {
                    *p = *p * (1.0 - a) + v * a;
                }
            }
        }
    }
    Image::new(size, size, 3, data)
}

/// `n_images` RGB images of `size × size`; image `i` depends only on `(seed, i)`.
pub fn synth_corpus(n_images: usize, size: usize, seed: u64) -> Result<Vec<Image>> {
    if size < 32 {
        return Err(Error::OutOfRange(format!("synthetic image size {size} < 32")));
    }
    (0..n_images).map(|i| synth_image(size, &mut Rng::new(mix(seed ^ mix(i as u64 + 1))))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synth_corpus(3, 48, 7).unwrap();
        assert_eq!(a, synth_corpus(3, 48, 7).unwrap());
        assert_ne!(a, synth_corpus(3, 48, 8).unwrap());
        assert!(a.iter().all(|img| img.data().iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(synth_corpus(2, 48, 7).unwrap()[..], a[..2]);
        assert!(synth_corpus(1, 31, 0).is_err());
    }
}
