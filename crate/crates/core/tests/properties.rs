use malle_core::data::{augment, augment_inverse, Image};
use malle_core::malleconv::{slice_apply_fused, slice_apply_naive, KernelGrid};
use malle_core::metrics::{count_flops, psnr, psnr_from_mse, ssim};
use malle_core::models::{build_dncnn, Arch, MalleInsert, ModelConfig};
use malle_core::{max_abs_diff, Rng, Shape, Tensor};
use proptest::prelude::*;

fn image(h: usize, w: usize, c: usize, seed: u64) -> Image {
    let mut rng = Rng::new(seed);
    let data = (0..h * w * c).map(|_| rng.uniform() as f32).collect();
    Image::new(h, w, c, data).unwrap()
}

fn grid(gh: usize, gw: usize, c: usize, k: usize, rng: &mut Rng) -> KernelGrid {
    let w = Tensor::randn(Shape::new(1, gh, gw, k * k * c), 0.5, rng);
    let b = Tensor::randn(Shape::new(1, gh, gw, c), 0.5, rng);
    KernelGrid::from_parts(w.data(), b.data(), (1, gh, gw), c, k).unwrap()
}

fn sorted_bits(img: &Image) -> Vec<u32> {
    let mut v: Vec<u32> = img.data().iter().map(|x| x.to_bits()).collect();
    v.sort_unstable();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dihedral_transforms_preserve_pixel_multiset(h in 1usize..12, w in 1usize..12, c in prop::sample::select(vec![1usize, 3]), k in 0usize..8, seed: u64) {
        let img = image(h, w, c, seed);
        let t = augment(&img, k).unwrap();
        prop_assert_eq!(sorted_bits(&t), sorted_bits(&img));
        prop_assert_eq!(augment(&t, augment_inverse(k)).unwrap(), img);
    }

    #[test]
    fn psnr_decreases_strictly_with_mse(a in 1e-8f64..1e4, step in 1e-6f64..10.0) {
        let b = a * (1.0 + step);
        prop_assert!(psnr_from_mse(b, 255.0) < psnr_from_mse(a, 255.0));
    }

    #[test]
    fn psnr_is_symmetric(seed: u64) {
        let a = image(9, 7, 3, seed).to_tensor();
        let b = image(9, 7, 3, seed ^ 3).to_tensor();
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn ssim_is_invariant_under_joint_dihedral_transform(k in 0usize..8, seed: u64) {
        let a = image(13, 17, 3, seed);
        let b = image(13, 17, 3, seed ^ 1);
        let s = ssim(&a.to_tensor(), &b.to_tensor()).unwrap();
        let (ta, tb) = (augment(&a, k).unwrap(), augment(&b, k).unwrap());
        let st = ssim(&ta.to_tensor(), &tb.to_tensor()).unwrap();
        prop_assert!((s - st).abs() < 1e-6, "{s} vs {st}");
    }

    #[test]
    fn ssim_is_symmetric(seed: u64) {
        let a = image(12, 12, 1, seed).to_tensor();
        let b = image(12, 12, 1, seed ^ 7).to_tensor();
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fused_and_naive_slicing_agree(
        h in 1usize..20, w in 1usize..20, c in prop::sample::select(vec![1usize, 3, 8]),
        k in prop::sample::select(vec![1usize, 3, 5]), gh in 1usize..6, gw in 1usize..6, seed: u64,
    ) {
        let mut rng = Rng::new(seed);
        let g = grid(gh, gw, c, k, &mut rng);
        let x = Tensor::randn(Shape::new(1, h, w, c), 1.0, &mut rng);
        let fused = slice_apply_fused(&x, &g).unwrap();
        prop_assert!(max_abs_diff(&fused, &slice_apply_naive(&x, &g).unwrap().output).unwrap() < 1e-5);
    }

    #[test]
    fn slicing_without_bias_is_linear_in_the_input(h in 2usize..14, w in 2usize..14, k in prop::sample::select(vec![1usize, 3]), a in -2.0f32..2.0, seed: u64) {
        let mut rng = Rng::new(seed);
        let weights = Tensor::randn(Shape::new(1, 2, 2, k * k * 3), 0.5, &mut rng);
        let g = KernelGrid::from_parts(weights.data(), &[0.0; 12], (1, 2, 2), 3, k).unwrap();
        let x = Tensor::randn(Shape::new(1, h, w, 3), 1.0, &mut rng);
        let scaled = Tensor::new(x.shape(), x.data().iter().map(|v| a * v).collect()).unwrap();
        let y = slice_apply_fused(&x, &g).unwrap();
        let want = Tensor::new(y.shape(), y.data().iter().map(|v| a * v).collect()).unwrap();
        prop_assert!(max_abs_diff(&slice_apply_fused(&scaled, &g).unwrap(), &want).unwrap() < 1e-5);
    }

    #[test]
    fn flops_double_with_height(blocks in 1usize..4, pool in prop::sample::select(vec![0usize, 2, 4, 8])) {
        let m = ModelConfig { arch: Arch::DnCnn, depth: 3, malle_mid: true, pool, ..Default::default() }.build().unwrap();
        let h = 64 * blocks;
        prop_assert_eq!(count_flops(&m, 2 * h, 64).unwrap(), 2 * count_flops(&m, h, 64).unwrap());
        let plain = build_dncnn(3, 16, MalleInsert::None).unwrap();
        prop_assert_eq!(count_flops(&plain, 2 * h, 64).unwrap(), 2 * count_flops(&plain, h, 64).unwrap());
    }
}
