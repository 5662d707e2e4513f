use std::fmt::Write as _;

use crate::data::{add_awgn, Image, NoiseConfig};
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::models::Denoiser;
use crate::rng::mix;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    /// Position in the evaluated set.
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// PSNR of the noisy input against the clean image.
    pub noisy_psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub sigma: f32,
    pub images: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_noisy_psnr: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,sigma,psnr,ssim,noisy_psnr\n");
        for m in &self.images {
            let _ = writeln!(s, "{},{},{:.6},{:.6},{:.6}", m.index, self.sigma, m.psnr, m.ssim, m.noisy_psnr);
        }
        let _ = writeln!(s, "mean,{},{:.6},{:.6},{:.6}", self.sigma, self.mean_psnr, self.mean_ssim, self.mean_noisy_psnr);
        s
    }
}

/// Noise seed of one image: depends on its content, not its position.
pub fn image_noise_seed(seed: u64, img: &Image, sigma: f32) -> u64 {
    mix(seed ^ mix(img.content_hash()) ^ sigma.to_bits() as u64)
}

/// Order-independent mean: values are summed in sorted order.
fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Adds reproducible noise to every image, denoises it, clamps to `[0, 1]`
/// and scores PSNR (peak 1) and SSIM against the clean image.
pub fn evaluate(model: &dyn Denoiser, images: &[Image], sigma: f32, seed: u64) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::Config("evaluate needs at least one image".into()));
    }
    let mut out = Vec::with_capacity(images.len());
    for (index, img) in images.iter().enumerate() {
        let noisy = add_awgn(img, &NoiseConfig { sigma, seed: image_noise_seed(seed, img, sigma) })?;
        let clean = img.to_tensor();
        let restored = Image::from_tensor(&model.denoise(&noisy.to_tensor())?)?.to_tensor();
        out.push(ImageMetrics {
            index,
            psnr: psnr(&restored, &clean, 1.0)?,
            ssim: ssim(&restored, &clean)?,
            noisy_psnr: psnr(&noisy.to_tensor(), &clean, 1.0)?,
        });
    }
    Ok(EvalReport {
        sigma,
        mean_psnr: mean(out.iter().map(|m| m.psnr)),
        mean_ssim: mean(out.iter().map(|m| m.ssim)),
        mean_noisy_psnr: mean(out.iter().map(|m| m.noisy_psnr)),
        images: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_corpus;
    use crate::metrics::PSNR_SENTINEL;
    use crate::models::Identity;

    #[test]
    fn identity_without_noise_hits_sentinel() {
        let imgs = synth_corpus(2, 32, 4).unwrap();
        let r = evaluate(&Identity, &imgs, 0.0, 1).unwrap();
        assert_eq!(r.mean_psnr, PSNR_SENTINEL);
        assert!((r.mean_ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_on_mid_gray_matches_noise_level() {
        let img = Image::filled(64, 64, 3, 128.0 / 255.0).unwrap();
        let r = evaluate(&Identity, &[img], 25.0, 3).unwrap();
        let expected = 20.0 * (255.0f64 / 25.0).log10();
        assert!((r.mean_psnr - expected).abs() < 0.2, "{} vs {expected}", r.mean_psnr);
    }

    #[test]
    fn order_independent() {
        let imgs = synth_corpus(4, 32, 5).unwrap();
        let a = evaluate(&Identity, &imgs, 25.0, 9).unwrap();
        let rev: Vec<Image> = imgs.iter().rev().cloned().collect();
        let b = evaluate(&Identity, &rev, 25.0, 9).unwrap();
        assert_eq!((a.mean_psnr, a.mean_ssim), (b.mean_psnr, b.mean_ssim));
        assert_eq!(a.images[0].psnr, b.images[3].psnr);
        assert!(evaluate(&Identity, &[], 25.0, 9).is_err());
    }
}
