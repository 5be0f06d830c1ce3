use statrs::distribution::{Continuous, ContinuousCDF, Normal, Uniform};

use mpt_core::data::Rng;
use mpt_core::freq::{gaussian_kernel_1d, gaussian_sigma, REBLUR_SIZES};

/// Kolmogorov–Smirnov statistic of `xs` against `cdf`.
fn ks(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

// 1.63/√n is the 1% critical value
fn critical(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

#[test]
fn normal_draws_follow_the_standard_normal() {
    let n = 20_000;
    let reference = Normal::new(0.0, 1.0).unwrap();
    for seed in [0u64, 1, 99] {
        let mut rng = Rng::new(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let d = ks(xs, |x| reference.cdf(x));
        assert!(d < critical(n), "seed {}: D = {}", seed, d);
    }
}

#[test]
fn uniform_draws_and_split_streams_are_uniform() {
    let n = 20_000;
    let reference = Uniform::new(0.0, 1.0).unwrap();
    let root = Rng::new(5);
    for i in 0..3 {
        let mut rng = root.split(i);
        let xs: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        assert!(xs.iter().all(|x| (0.0..1.0).contains(x)));
        let d = ks(xs, |x| reference.cdf(x));
        assert!(d < critical(n), "stream {}: D = {}", i, d);
    }
}

#[test]
fn reblur_kernels_are_sampled_gaussians() {
    for k in REBLUR_SIZES {
        let g = gaussian_kernel_1d(k);
        let pdf = Normal::new(0.0, gaussian_sigma(k)).unwrap();
        let raw: Vec<f64> = (0..k).map(|i| pdf.pdf(i as f64 - (k / 2) as f64)).collect();
        let total: f64 = raw.iter().sum();
        for (a, b) in g.iter().zip(&raw) {
            assert!((a - b / total).abs() < 1e-14, "k={}", k);
        }
    }
}
