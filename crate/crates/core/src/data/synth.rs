use std::fmt;
use std::str::FromStr;

use super::Rng;
use crate::error::{MptError, Result};
use crate::freq::gaussian_reblur;
use crate::tensor::ops::{bilinear_taps, gather, resample};
use crate::tensor::{Element, Tensor};

pub const MIN_SYNTH_SIZE: usize = 16;
pub const SCALE_RANGE: (f64, f64) = (0.75, 1.25);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scene {
    /// Bright ellipses on a dark background.
    Cells,
    /// Superimposed oriented square-wave gratings.
    Stripes,
    Checker,
}

impl Scene {
    pub const ALL: [Scene; 3] = [Scene::Cells, Scene::Stripes, Scene::Checker];

    pub fn name(self) -> &'static str {
        match self {
            Scene::Cells => "cells",
            Scene::Stripes => "stripes",
            Scene::Checker => "checker",
        }
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scene {
    type Err = MptError;

    fn from_str(s: &str) -> Result<Self> {
        Scene::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| MptError::config("scene", format!("unknown scene {:?}", s)))
    }
}

fn color(rng: &mut Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.uniform_range(lo, hi), rng.uniform_range(lo, hi), rng.uniform_range(lo, hi)]
}

/// Procedural sharp scene, `[size, size, 3]` in `[0, 1]`.
pub fn synth_scene<T: Element>(rng: &mut Rng, size: usize, scene: Scene) -> Result<Tensor<T>> {
    if size < MIN_SYNTH_SIZE {
        return Err(MptError::invalid("synth_pair", format!("size {} below {}", size, MIN_SYNTH_SIZE)));
    }
    let n = size as f64;
    let mut img = vec![0.0f64; size * size * 3];
    let mut put = |i: usize, j: usize, c: [f64; 3]| img[(i * size + j) * 3..][..3].copy_from_slice(&c);
    match scene {
        Scene::Cells => {
            let bg = color(rng, 0.0, 0.15);
            let count = 4 + rng.below(9);
            let cells: Vec<_> = (0..count)
                .map(|_| {
                    let (cy, cx) = (rng.uniform_range(0.0, n), rng.uniform_range(0.0, n));
                    let ry = rng.uniform_range(0.05, 0.2) * n;
                    let rx = rng.uniform_range(0.05, 0.2) * n;
                    let theta = rng.uniform_range(0.0, std::f64::consts::PI);
                    (cy, cx, ry, rx, theta.sin(), theta.cos(), color(rng, 0.45, 1.0))
                })
                .collect();
            for i in 0..size {
                for j in 0..size {
                    let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
                    let mut c = bg;
                    for &(cy, cx, ry, rx, s, co, col) in &cells {
                        let (dy, dx) = (y - cy, x - cx);
                        let (u, v) = (dx * co + dy * s, -dx * s + dy * co);
                        if (u / rx).powi(2) + (v / ry).powi(2) <= 1.0 {
                            c = col;
                        }
                    }
                    put(i, j, c);
                }
            }
        }
        Scene::Stripes => {
            let layers = 1 + rng.below(3);
            let gratings: Vec<_> = (0..layers)
                .map(|_| {
                    let theta = rng.uniform_range(0.0, std::f64::consts::PI);
                    let period = rng.uniform_range(3.0, n / 4.0);
                    let phase = rng.uniform_range(0.0, 1.0);
                    (theta.sin(), theta.cos(), period, phase, color(rng, 0.0, 1.0))
                })
                .collect();
            let base = color(rng, 0.0, 1.0);
            for i in 0..size {
                for j in 0..size {
                    let mut c = base;
                    for &(s, co, period, phase, col) in &gratings {
                        let t = ((j as f64 * co + i as f64 * s) / period + phase).rem_euclid(1.0);
                        if t < 0.5 {
                            for k in 0..3 {
                                c[k] = 0.5 * (c[k] + col[k]);
                            }
                        }
                    }
                    put(i, j, c);
                }
            }
        }
        Scene::Checker => {
            let cell = 2 + rng.below(size / 4 - 1);
            let (oy, ox) = (rng.below(cell), rng.below(cell));
            let (a, b) = (color(rng, 0.0, 0.5), color(rng, 0.5, 1.0));
            for i in 0..size {
                for j in 0..size {
                    put(i, j, if ((i + oy) / cell + (j + ox) / cell).is_multiple_of(2) { a } else { b });
                }
            }
        }
    }
    Tensor::from_f64(vec![size, size, 3], &img)
}

/// A sharp scene and its Gaussian-blurred counterpart.
pub fn synth_pair<T: Element>(rng: &mut Rng, size: usize, scene: Scene) -> Result<(Tensor<T>, Tensor<T>)> {
    let sharp = synth_scene(rng, size, scene)?;
    let (blurred, _) = gaussian_reblur(&sharp, rng)?;
    Ok((sharp, blurred))
}

/// Random binary mask `[size, size, 1]` made of filled ellipses.
pub fn synth_mask<T: Element>(rng: &mut Rng, size: usize) -> Tensor<T> {
    let n = size as f64;
    let blobs: Vec<_> = (0..1 + rng.below(3))
        .map(|_| {
            (
                rng.uniform_range(0.0, n),
                rng.uniform_range(0.0, n),
                rng.uniform_range(0.15, 0.4) * n,
                rng.uniform_range(0.15, 0.4) * n,
            )
        })
        .collect();
    Tensor::from_fn(vec![size, size, 1], |p| {
        let (y, x) = ((p / size) as f64 + 0.5, (p % size) as f64 + 0.5);
        let inside = blobs
            .iter()
            .any(|&(cy, cx, ry, rx)| ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0);
        if inside {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Box filter of width `2·radius + 1` with edge-clamped sampling.
fn box_feather(mask: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return mask.to_vec();
    }
    let r = radius as isize;
    let norm = (2 * radius + 1) as f64;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for d in -r..=r {
                    let (si, sj) = if horizontal {
                        (i, (j as isize + d).clamp(0, w as isize - 1) as usize)
                    } else {
                        ((i as isize + d).clamp(0, h as isize - 1) as usize, j)
                    };
                    acc += src[si * w + sj];
                }
                out[i * w + j] = acc / norm;
            }
        }
        out
    };
    pass(&pass(mask, true), false)
}

/// Blurs the masked region only: `m̃⊙blur(img) + (1−m̃)⊙img` with `m̃` the box-feathered mask.
pub fn mask_region_blur<T: Element>(img: &Tensor<T>, mask: &Tensor<T>, rng: &mut Rng, feather: usize) -> Result<Tensor<T>> {
    let (n, h, w, c) = img.nhwc()?;
    let ok_shape = matches!(mask.shape(), [mh, mw] | [mh, mw, 1] if (*mh, *mw) == (h, w));
    if n != 1 || !ok_shape {
        return Err(MptError::shape(
            "mask_region_blur",
            format!("mask {:?} for image {:?}", mask.shape(), img.shape()),
        ));
    }
    let m = mask.to_f64_vec();
    if let Some(bad) = m.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(MptError::invalid("mask_region_blur", format!("mask value {} outside [0, 1]", bad)));
    }
    let (blurred, _) = gaussian_reblur(img, rng)?;
    let mt = box_feather(&m, h, w, feather);
    let mut out = img.clone();
    for (p, &a) in mt.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for k in 0..c {
            let i = p * c + k;
            out.data_mut()[i] = if a == 1.0 {
                blurred.data()[i]
            } else {
                let a = T::from_f64c(a);
                a * blurred.data()[i] + (T::one() - a) * img.data()[i]
            };
        }
    }
    Ok(out)
}

/// Random draws of one augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub scale: f64,
    pub hflip: bool,
    pub vflip: bool,
    /// Crop origin on the scaled image.
    pub top: usize,
    pub left: usize,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        AugmentDraw {
            scale: 1.0,
            hflip: false,
            vflip: false,
            top: 0,
            left: 0,
        }
    }
}

fn scaled_extent(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).round() as usize).max(1)
}

/// Draws scale, flips and crop origin in that order.
pub fn draw_augment(rng: &mut Rng, h: usize, w: usize, patch: usize) -> Result<AugmentDraw> {
    let scale = rng.uniform_range(SCALE_RANGE.0, SCALE_RANGE.1);
    let (sh, sw) = (scaled_extent(h, scale), scaled_extent(w, scale));
    if patch == 0 || patch > sh.min(sw) {
        return Err(MptError::invalid(
            "augment_crop",
            format!("patch {} larger than the scaled image {}×{}", patch, sh, sw),
        ));
    }
    let hflip = rng.coin();
    let vflip = rng.coin();
    let top = rng.below(sh - patch + 1);
    let left = rng.below(sw - patch + 1);
    Ok(AugmentDraw {
        scale,
        hflip,
        vflip,
        top,
        left,
    })
}

/// Applies one draw to an `[h, w, c]` image.
pub fn apply_augment<T: Element>(img: &Tensor<T>, d: &AugmentDraw, patch: usize) -> Result<Tensor<T>> {
    let (n, h, w, c) = img.nhwc()?;
    if n != 1 {
        return Err(MptError::shape("augment_crop", "expected a single image"));
    }
    let (sh, sw) = (scaled_extent(h, d.scale), scaled_extent(w, d.scale));
    let scaled = if (sh, sw) == (h, w) {
        img.clone()
    } else {
        resample(img, &bilinear_taps(h, sh), &bilinear_taps(w, sw))?
    };
    if d.top + patch > sh || d.left + patch > sw {
        return Err(MptError::invalid(
            "augment_crop",
            format!("crop {}+{} outside {}×{}", d.top, d.left, sh, sw),
        ));
    }
    let mut idx = Vec::with_capacity(patch * patch * c);
    for i in 0..patch {
        let si = if d.vflip { sh - 1 - (d.top + i) } else { d.top + i };
        for j in 0..patch {
            let sj = if d.hflip { sw - 1 - (d.left + j) } else { d.left + j };
            idx.extend((0..c).map(|k| ((si * sw + sj) * c + k) as u32));
        }
    }
    gather(&scaled, &idx, vec![patch, patch, c])
}

/// Random scale, flips and crop applied identically to both images of a pair.
pub fn augment_crop<T: Element>(pair: (&Tensor<T>, &Tensor<T>), rng: &mut Rng, patch: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    if pair.0.shape() != pair.1.shape() {
        return Err(MptError::shape(
            "augment_crop",
            format!("{:?} vs {:?}", pair.0.shape(), pair.1.shape()),
        ));
    }
    let (_, h, w, _) = pair.0.nhwc()?;
    let d = draw_augment(rng, h, w, patch)?;
    Ok((apply_augment(pair.0, &d, patch)?, apply_augment(pair.1, &d, patch)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freq::f_high;

    fn high_energy(x: &Tensor<f64>) -> f64 {
        f_high(x).unwrap().data().iter().map(|v| v.abs()).sum()
    }

    #[test]
    fn pairs_are_deterministic_and_blur_removes_detail() {
        for scene in Scene::ALL {
            let a = synth_pair::<f64>(&mut Rng::new(1), 32, scene).unwrap();
            let b = synth_pair::<f64>(&mut Rng::new(1), 32, scene).unwrap();
            assert_eq!(a, b);
            assert!(a.0.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(a.1.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(high_energy(&a.1) <= high_energy(&a.0), "{}", scene);
        }
        assert!(synth_pair::<f32>(&mut Rng::new(0), 15, Scene::Cells).is_err());
    }

    #[test]
    fn empty_mask_leaves_image() {
        let (img, _) = synth_pair::<f64>(&mut Rng::new(2), 16, Scene::Checker).unwrap();
        let out = mask_region_blur(&img, &Tensor::zeros([16, 16, 1]), &mut Rng::new(3), 2).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn full_mask_equals_reblur() {
        let (img, _) = synth_pair::<f64>(&mut Rng::new(4), 16, Scene::Stripes).unwrap();
        let out = mask_region_blur(&img, &Tensor::ones([16, 16]), &mut Rng::new(5), 0).unwrap();
        let (want, _) = gaussian_reblur(&img, &mut Rng::new(5)).unwrap();
        assert_eq!(out, want);
    }

    #[test]
    fn half_plane_mask_keeps_other_half() {
        let (img, _) = synth_pair::<f64>(&mut Rng::new(6), 16, Scene::Cells).unwrap();
        let mask = Tensor::from_fn([16, 16, 1], |p| if p % 16 < 8 { 1.0 } else { 0.0 });
        let out = mask_region_blur(&img, &mask, &mut Rng::new(7), 0).unwrap();
        for p in 0..256 {
            if p % 16 >= 8 {
                assert_eq!(out.data()[p * 3..p * 3 + 3], img.data()[p * 3..p * 3 + 3]);
            }
        }
    }

    #[test]
    fn mask_values_are_checked() {
        let img = Tensor::<f64>::zeros([16, 16, 3]);
        let mut mask = Tensor::zeros([16, 16, 1]);
        mask.data_mut()[3] = 1.5;
        assert!(mask_region_blur(&img, &mask, &mut Rng::new(0), 0).is_err());
        assert!(mask_region_blur(&img, &Tensor::zeros([8, 16, 1]), &mut Rng::new(0), 0).is_err());
    }

    #[test]
    fn identity_draw_only_crops() {
        let img = Tensor::<f64>::from_fn([6, 5, 2], |i| i as f64);
        let d = AugmentDraw {
            top: 1,
            left: 2,
            ..AugmentDraw::identity()
        };
        let out = apply_augment(&img, &d, 3).unwrap();
        assert_eq!(out.data()[..2], img.data()[(5 + 2) * 2..(5 + 2) * 2 + 2]);
    }

    #[test]
    fn double_flip_is_identity() {
        let img = Tensor::<f64>::from_fn([4, 4, 1], |i| i as f64);
        let flip = AugmentDraw {
            hflip: true,
            ..AugmentDraw::identity()
        };
        let once = apply_augment(&img, &flip, 4).unwrap();
        assert_ne!(once, img);
        assert_eq!(apply_augment(&once, &flip, 4).unwrap(), img);
    }

    #[test]
    fn crop_stays_in_bounds() {
        let mut rng = Rng::new(8);
        for _ in 0..1000 {
            let d = draw_augment(&mut rng, 40, 36, 24).unwrap();
            let (sh, sw) = (scaled_extent(40, d.scale), scaled_extent(36, d.scale));
            assert!((0.75..=1.25).contains(&d.scale));
            assert!(d.top + 24 <= sh && d.left + 24 <= sw);
        }
        assert!(draw_augment(&mut rng, 16, 16, 30).is_err());
    }
}
