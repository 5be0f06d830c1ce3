//! Image quality metrics and the normalized average attention distance statistic.

use crate::error::{MptError, Result};
use crate::tensor::{Element, Tensor};

/// Reported when the images are identical.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DEFAULT_GRID: usize = 16;
/// Softmax temperature applied to patch correlations.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

fn same_shape<T: Element>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(MptError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn psnr<T: Element>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    same_shape(a, b, "psnr")?;
    if a.numel() == 0 {
        return Err(MptError::invalid("psnr", "empty images"));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64c() - y.to_f64c()).powi(2))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

fn ssim_kernel() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of one `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ho, wo) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * wo];
    for i in 0..h {
        for j in 0..wo {
            rows[i * wo + j] = (0..n).map(|t| x[i * w + j + t] * k[t]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for i in 0..ho {
        for j in 0..wo {
            out[i * wo + j] = (0..n).map(|t| rows[(i + t) * wo + j] * k[t]).sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), data range 1,
/// averaged over valid window positions and channels.
pub fn ssim<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let (n, h, w, c) = a.nhwc()?;
    if h.min(w) < SSIM_WINDOW {
        return Err(MptError::invalid(
            "ssim",
            format!("{}×{} image is smaller than the {}-pixel window", h, w, SSIM_WINDOW),
        ));
    }
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let k = ssim_kernel();
    let (av, bv) = (a.to_f64_vec(), b.to_f64_vec());
    let mut total = 0.0;
    let mut count = 0usize;
    for img in 0..n {
        for ch in 0..c {
            let plane = |v: &[f64], f: &dyn Fn(f64, f64) -> f64, other: &[f64]| -> Vec<f64> {
                (0..h * w)
                    .map(|p| {
                        let i = (img * h * w + p) * c + ch;
                        f(v[i], other[i])
                    })
                    .collect()
            };
            let x = plane(&av, &|x, _| x, &bv);
            let y = plane(&bv, &|y, _| y, &av);
            let xx = plane(&av, &|x, _| x * x, &bv);
            let yy = plane(&bv, &|y, _| y * y, &av);
            let xy = plane(&av, &|x, y| x * y, &bv);
            let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &k));
            for i in 0..mx.len() {
                let (m1, m2) = (mx[i], my[i]);
                let v1 = sxx[i] - m1 * m1;
                let v2 = syy[i] - m2 * m2;
                let cov = sxy[i] - m1 * m2;
                total += ((2.0 * m1 * m2 + c1) * (2.0 * cov + c2)) / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Per-patch mean-centred, unit-norm intensity vectors; `None` for flat patches.
fn patch_vectors(gray: &[f64], w: usize, grid: usize, ph: usize, pw: usize) -> Vec<Option<Vec<f64>>> {
    let mut out = Vec::with_capacity(grid * grid);
    for pr in 0..grid {
        for pc in 0..grid {
            let mut v = Vec::with_capacity(ph * pw);
            for i in 0..ph {
                for j in 0..pw {
                    v.push(gray[(pr * ph + i) * w + pc * pw + j]);
                }
            }
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= mean);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(mean.abs());
            if norm == 0.0 || norm <= 1e-12 * scale * (v.len() as f64).sqrt() {
                out.push(None);
            } else {
                v.iter_mut().for_each(|x| *x /= norm);
                out.push(Some(v));
            }
        }
    }
    out
}

/// Normalized average attention distance of one image.
///
/// The channel-mean image is cropped to a multiple of `grid` and cut into `grid × grid`
/// patches. Each non-flat patch attends to every other non-flat patch with
/// `softmax(ncc / temperature)`; its attention-weighted centre distance is divided by
/// the diagonal of the cropped image, and the result is the mean over patches.
pub fn attention_distance_with<T: Element>(img: &Tensor<T>, grid: usize, temperature: f64) -> Result<f64> {
    let (n, h, w, c) = img.nhwc()?;
    if n != 1 {
        return Err(MptError::shape("attention_distance", "expected a single image"));
    }
    if grid == 0 || !(temperature > 0.0) {
        return Err(MptError::invalid("attention_distance", "grid and temperature must be positive"));
    }
    let (ph, pw) = (h / grid, w / grid);
    if ph == 0 || pw == 0 {
        return Err(MptError::invalid(
            "attention_distance",
            format!("{}×{} image cannot hold a {}×{} patch grid", h, w, grid, grid),
        ));
    }
    let data = img.to_f64_vec();
    let gray: Vec<f64> = data.chunks(c).map(|px| px.iter().sum::<f64>() / c as f64).collect();
    let patches = patch_vectors(&gray, w, grid, ph, pw);
    let valid: Vec<usize> = (0..patches.len()).filter(|&i| patches[i].is_some()).collect();
    if valid.len() < 2 {
        return Ok(0.0);
    }
    let (hc, wc) = ((grid * ph) as f64, (grid * pw) as f64);
    let diag = (hc * hc + wc * wc).sqrt();
    let center = |p: usize| (((p / grid) as f64 + 0.5) * ph as f64, ((p % grid) as f64 + 0.5) * pw as f64);
    let mut total = 0.0;
    for &p in &valid {
        let vp = patches[p].as_ref().unwrap();
        let others: Vec<(f64, f64)> = valid
            .iter()
            .filter(|&&q| q != p)
            .map(|&q| {
                let vq = patches[q].as_ref().unwrap();
                let ncc: f64 = vp.iter().zip(vq).map(|(a, b)| a * b).sum();
                let (cp, cq) = (center(p), center(q));
                (ncc / temperature, ((cp.0 - cq.0).powi(2) + (cp.1 - cq.1).powi(2)).sqrt() / diag)
            })
            .collect();
        let mx = others.iter().map(|o| o.0).fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut acc) = (0.0, 0.0);
        for &(l, d) in &others {
            let e = (l - mx).exp();
            z += e;
            acc += e * d;
        }
        total += acc / z;
    }
    Ok((total / valid.len() as f64).clamp(0.0, 1.0))
}

pub fn attention_distance<T: Element>(img: &Tensor<T>, grid: usize) -> Result<f64> {
    attention_distance_with(img, grid, DEFAULT_TEMPERATURE)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnDistReport {
    pub per_image: Vec<f64>,
    pub mean: f64,
    pub patch_grid: usize,
    pub dataset_label: String,
}

impl AttnDistReport {
    pub fn compute<T: Element>(images: &[Tensor<T>], grid: usize, label: impl Into<String>) -> Result<Self> {
        let per_image = images
            .iter()
            .map(|im| attention_distance(im, grid))
            .collect::<Result<Vec<_>>>()?;
        let mean = if per_image.is_empty() {
            0.0
        } else {
            per_image.iter().sum::<f64>() / per_image.len() as f64
        };
        Ok(AttnDistReport {
            per_image,
            mean,
            patch_grid: grid,
            dataset_label: label.into(),
        })
    }
}

/// Per-image metrics row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub image: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub nad: Option<f64>,
}

pub const CSV_HEADER: &str = "image,psnr,ssim,nad";

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{:.6}", x)).unwrap_or_default()
}

/// Renders rows under [`CSV_HEADER`]; absent values are left empty.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.image, cell(r.psnr), cell(r.ssim), cell(r.nad)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Rng;

    fn noise(h: usize, w: usize, c: usize, seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn([h, w, c], |_| rng.uniform())
    }

    #[test]
    fn psnr_examples() {
        let a = Tensor::<f64>::full([4, 4, 3], 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        assert!((psnr(&a, &a.map(|v| v + 0.1), 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr(&a, &a.map(|v| v + 0.01), 1.0).unwrap() - 40.0).abs() < 1e-9);
        assert!(psnr(&a, &Tensor::zeros([4, 4, 1]), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_constant() {
        let a = noise(16, 16, 3, 1);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let (m1, m2) = (0.3, 0.35);
        let c1 = SSIM_K1 * SSIM_K1;
        let want = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
        let got = ssim(&Tensor::<f64>::full([12, 12, 1], m1), &Tensor::full([12, 12, 1], m2)).unwrap();
        assert!((got - want).abs() < 1e-9);
        assert!(ssim(&Tensor::<f64>::zeros([10, 20, 1]), &Tensor::zeros([10, 20, 1])).is_err());
    }

    #[test]
    fn ssim_inverted_checker_is_negative() {
        let a = Tensor::<f64>::from_fn([16, 16, 1], |p| ((p / 16 + p % 16) % 2) as f64);
        let b = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn nad_degenerate_cases() {
        let a = noise(32, 32, 1, 2);
        assert_eq!(attention_distance(&a, 1).unwrap(), 0.0);
        assert_eq!(attention_distance(&Tensor::<f64>::full([32, 32, 3], 0.4), 4).unwrap(), 0.0);
        assert!(attention_distance(&a, 64).is_err());
    }

    #[test]
    fn nad_is_affine_invariant_and_bounded() {
        let a = noise(48, 48, 3, 3);
        let d = attention_distance(&a, 8).unwrap();
        assert!((0.0..=1.0).contains(&d));
        let b = a.map(|v| 2.5 * v - 0.3);
        assert!((attention_distance(&b, 8).unwrap() - d).abs() < 1e-9);
    }

    #[test]
    fn csv_rows() {
        let rows = [MetricRow {
            image: "0001.ppm".into(),
            psnr: Some(30.0),
            ssim: Some(0.9),
            nad: None,
        }];
        assert_eq!(metrics_csv(&rows), "image,psnr,ssim,nad\n0001.ppm,30.000000,0.900000,\n");
    }
}
