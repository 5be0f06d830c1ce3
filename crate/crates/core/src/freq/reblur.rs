use crate::data::Rng;
use crate::error::{MptError, Result};
use crate::tensor::ops::{resample, Taps};
use crate::tensor::{Element, Tensor};

pub const REBLUR_SIZES: [usize; 3] = [3, 5, 7];

/// Standard deviation paired with an odd kernel size.
pub fn gaussian_sigma(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

/// Normalized 1-D Gaussian; the 2-D kernel is its outer product.
pub fn gaussian_kernel_1d(k: usize) -> Vec<f64> {
    let sigma = gaussian_sigma(k);
    let half = (k / 2) as f64;
    let raw: Vec<f64> = (0..k)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Taps of a reflect-padded 1-D convolution (mirror without edge repeat).
pub fn reflect_conv_taps(n: usize, kernel: &[f64]) -> Taps {
    let half = (kernel.len() / 2) as isize;
    (0..n)
        .map(|o| {
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity(kernel.len());
            for (t, &wt) in kernel.iter().enumerate() {
                let src = reflect(o as isize + t as isize - half, n);
                match taps.iter_mut().find(|(s, _)| *s == src) {
                    Some(slot) => slot.1 += wt,
                    None => taps.push((src, wt)),
                }
            }
            taps
        })
        .collect()
}

/// Separable Gaussian blur of an HWC/NHWC tensor with kernel size `k`.
pub fn gaussian_blur<T: Element>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    if k.is_multiple_of(2) || k == 0 {
        return Err(MptError::invalid("gaussian_blur", format!("kernel size {} must be odd", k)));
    }
    let (_, h, w, _) = x.nhwc()?;
    let g = gaussian_kernel_1d(k);
    resample(x, &reflect_conv_taps(h, &g), &reflect_conv_taps(w, &g))
}

/// Blur with a kernel size drawn uniformly from `{3, 5, 7}`.
pub fn gaussian_reblur<T: Element>(x: &Tensor<T>, rng: &mut Rng) -> Result<(Tensor<T>, usize)> {
    let k = *rng.choice(&REBLUR_SIZES);
    Ok((gaussian_blur(x, k)?, k))
}
