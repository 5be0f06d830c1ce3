use proptest::prelude::*;

use mpt_core::data::{apply_augment, decode_image, decode_tensor, draw_augment, encode_image, encode_tensor, Rng};
use mpt_core::freq::{f_high, gaussian_blur, gaussian_kernel_1d, haar_dwt, haar_idwt};
use mpt_core::metrics::{attention_distance, psnr, ssim};
use mpt_core::optim::cosine_lr;
use mpt_core::tensor::ops::{pixel_shuffle, softmax, ShuffleDirection};
use mpt_core::windows::{cross_scale_index, cyclic_shift, window_merge, window_partition, ScaleSpec, WindowGrid};
use mpt_core::Tensor;

fn tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform_range(lo, hi))
}

fn energy(t: &Tensor<f64>) -> f64 {
    t.data().iter().map(|v| v * v).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, len in 1usize..9, seed in any::<u64>(), scale in 0.1f64..50.0) {
        let x = tensor(&[rows, len], seed, -scale, scale);
        let y = softmax(&x, 1).unwrap();
        for r in y.data().chunks(len) {
            prop_assert!(r.iter().all(|v| *v >= 0.0 && *v <= 1.0));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn haar_is_orthonormal(h in 1usize..9, w in 1usize..9, c in 1usize..4, seed in any::<u64>()) {
        let x = tensor(&[2 * h, 2 * w, c], seed, -1.0, 1.0);
        let b = haar_dwt(&x).unwrap();
        prop_assert!(haar_idwt(&b).unwrap().max_abs_diff(&x) < 1e-12);
        let e = energy(&b.ll) + energy(&b.lh) + energy(&b.hl) + energy(&b.hh);
        prop_assert!((e - energy(&x)).abs() <= 1e-10 * energy(&x).max(1.0));
    }

    #[test]
    fn constant_images_have_no_high_frequencies(v in 0.0f64..1.0, h in 1usize..6, w in 1usize..6) {
        let x = Tensor::full([2 * h, 2 * w, 3], v);
        prop_assert!(f_high(&x).unwrap().data().iter().all(|b| b.abs() < 1e-12));
    }

    #[test]
    fn window_partition_roundtrips(n in 1usize..3, h in 1usize..13, w in 1usize..13, m in 1usize..5, seed in any::<u64>()) {
        let x = tensor(&[n, h, w, 2], seed, -1.0, 1.0);
        let (win, grid) = window_partition(&x, m).unwrap();
        prop_assert_eq!(win.shape()[1], m * m);
        prop_assert_eq!(window_merge(&win, &grid, true).unwrap(), x);
    }

    #[test]
    fn cyclic_shift_inverts(h in 1usize..10, w in 1usize..10, offset in 0usize..12, seed in any::<u64>()) {
        let x = tensor(&[1, h, w, 3], seed, -1.0, 1.0);
        let s = cyclic_shift(&x, offset, false).unwrap();
        prop_assert_eq!(cyclic_shift(&s, offset, true).unwrap(), x.clone());
        let mut a = s.data().to_vec();
        let mut b = x.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pixel_shuffle_inverts(h in 1usize..5, w in 1usize..5, c in 1usize..4, r in 1usize..4, seed in any::<u64>()) {
        let x = tensor(&[1, h * r, w * r, c], seed, -1.0, 1.0);
        let d = pixel_shuffle(&x, r, ShuffleDirection::Down).unwrap();
        prop_assert_eq!(d.shape(), &[1, h, w, c * r * r][..]);
        prop_assert_eq!(pixel_shuffle(&d, r, ShuffleDirection::Up).unwrap(), x);
    }

    #[test]
    fn cross_scale_index_balances_key_windows(gh in 1usize..5, gw in 1usize..5, exp in 0u32..3) {
        let ratio = 1usize << exp;
        let (m, kh, kw) = (2, gh * 2, gw * 2);
        let gk = WindowGrid::new(kh, kw, m).unwrap();
        let gq = WindowGrid::new(kh * ratio, kw * ratio, m).unwrap();
        let idx = cross_scale_index(&gq, &gk, ScaleSpec::from_ratio(ratio).unwrap()).unwrap();
        prop_assert_eq!(idx.len(), gq.count());
        let mut counts = vec![0usize; gk.count()];
        idx.iter().for_each(|&k| counts[k] += 1);
        prop_assert!(counts.iter().all(|&c| c == ratio * ratio));
    }

    #[test]
    fn psnr_falls_as_noise_grows(seed in any::<u64>(), a in 0.001f64..0.1, extra in 0.001f64..0.1) {
        let x = tensor(&[8, 8, 3], seed, 0.2, 0.8);
        let noise = tensor(&[8, 8, 3], seed ^ 1, -1.0, 1.0);
        let add = |k: f64| x.zip_map(&noise, |u, n| u + k * n).unwrap();
        let (near, far) = (add(a), add(a + extra));
        prop_assert!(psnr(&near, &x, 1.0).unwrap() > psnr(&far, &x, 1.0).unwrap());
        prop_assert_eq!(psnr(&x, &x, 1.0).unwrap(), 100.0);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>()) {
        let a = tensor(&[16, 16, 1], seed, 0.0, 1.0);
        let b = tensor(&[16, 16, 1], seed ^ 7, 0.0, 1.0);
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kernels_are_normalized(k in prop::sample::select(vec![3usize, 5, 7])) {
        let g = gaussian_kernel_1d(k);
        prop_assert_eq!(g.len(), k);
        prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(g.iter().zip(g.iter().rev()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn blur_preserves_constants_and_range(v in 0.0f64..1.0, k in prop::sample::select(vec![3usize, 5, 7]), seed in any::<u64>()) {
        let c = Tensor::full([9, 11, 2], v);
        prop_assert!(gaussian_blur(&c, k).unwrap().max_abs_diff(&c) < 1e-12);
        let x = tensor(&[9, 11, 2], seed, 0.0, 1.0);
        let y = gaussian_blur(&x, k).unwrap();
        prop_assert!(y.data().iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn augment_draws_stay_inside_the_image(h in 32usize..80, w in 32usize..80, patch in 8usize..24, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let d = draw_augment(&mut rng, h, w, patch).unwrap();
        let (sh, sw) = ((h as f64 * d.scale).round() as usize, (w as f64 * d.scale).round() as usize);
        prop_assert!(d.top + patch <= sh && d.left + patch <= sw);
        let img = tensor(&[h, w, 3], seed, 0.0, 1.0);
        let out = apply_augment(&img, &d, patch).unwrap();
        prop_assert_eq!(out.shape(), &[patch, patch, 3][..]);
        prop_assert!(out.data().iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn image_encoding_roundtrips_quantized_values(h in 1usize..12, w in 1usize..12, gray in any::<bool>(), seed in any::<u64>()) {
        let c = if gray { 1 } else { 3 };
        let mut rng = Rng::new(seed);
        let img: Tensor<f32> = Tensor::from_fn([h, w, c], |_| rng.below(256) as f32 / 255.0);
        prop_assert_eq!(decode_image::<f32>(&encode_image(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn tensor_encoding_roundtrips(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
        let t = tensor(&dims, seed, -1e6, 1e6);
        let bytes = encode_tensor(&t).unwrap();
        let back = decode_tensor::<f64>(&bytes).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        if bytes.len() > 1 {
            let cut = bytes.len() / 2;
            prop_assert!(decode_tensor::<f64>(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn cosine_lr_decays_between_bounds(total in 1u64..5000, frac in 0.0f64..1.0) {
        let step = ((total - 1) as f64 * frac) as u64;
        let lr = cosine_lr(step, total, 1e-4, 1e-6).unwrap();
        prop_assert!((1e-6 - 1e-18..=1e-4 + 1e-18).contains(&lr));
        prop_assert!(lr >= cosine_lr((step + 1).min(total - 1), total, 1e-4, 1e-6).unwrap());
        prop_assert_eq!(cosine_lr(0, total, 1e-4, 1e-6).unwrap(), 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn attention_distance_is_bounded_and_affine_invariant(seed in any::<u64>(), a in 0.2f64..3.0, b in -0.5f64..0.5) {
        let x = tensor(&[32, 32, 3], seed, 0.0, 1.0);
        let d = attention_distance(&x, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        let y = x.map(|v| a * v + b);
        prop_assert!((attention_distance(&y, 4).unwrap() - d).abs() < 1e-9);
    }
}
