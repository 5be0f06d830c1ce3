use crate::error::{MptError, Result};
use crate::tensor::ops::spatial_shape;
use crate::tensor::{Element, Tensor};

/// Haar bands of an HWC or NHWC tensor, each `H/2 × W/2 × C`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyBands<T: Element = f32> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
    /// Zero rows/cols appended bottom/right to make the input even.
    pub pad: (usize, usize),
}

/// Index of band `LL, LH, HL, HH` in the stacked channel layout.
pub const LL: usize = 0;
pub const LH: usize = 1;
pub const HL: usize = 2;
pub const HH: usize = 3;

/// Orthonormal single-level transform with bands stacked on channels as
/// `[LL | LH | HL | HH]`, giving `[N, H/2, W/2, 4C]`. `H` and `W` must be even.
pub fn haar_forward_stacked<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = x.nhwc()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(MptError::shape("haar_dwt", format!("extents {}x{} must be even", h, w)));
    }
    let (ho, wo) = (h / 2, w / 2);
    let half = T::from_f64c(0.5);
    let src = x.data();
    let mut out = vec![T::zero(); n * ho * wo * 4 * c];
    for b in 0..n {
        for y in 0..ho {
            for xo in 0..wo {
                let at = |dy: usize, dx: usize| ((b * h + 2 * y + dy) * w + 2 * xo + dx) * c;
                let (pa, pb, pc, pd) = (at(0, 0), at(0, 1), at(1, 0), at(1, 1));
                let o = ((b * ho + y) * wo + xo) * 4 * c;
                for ch in 0..c {
                    let (a, bb, cc, d) = (src[pa + ch], src[pb + ch], src[pc + ch], src[pd + ch]);
                    out[o + LL * c + ch] = (a + bb + cc + d) * half;
                    out[o + LH * c + ch] = (-a - bb + cc + d) * half;
                    out[o + HL * c + ch] = (-a + bb - cc + d) * half;
                    out[o + HH * c + ch] = (a - bb - cc + d) * half;
                }
            }
        }
    }
    Tensor::new(spatial_shape(x.shape(), n, ho, wo, 4 * c), out)
}

/// Inverse of [`haar_forward_stacked`].
pub fn haar_inverse_stacked<T: Element>(bands: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ho, wo, c4) = bands.nhwc()?;
    if c4 % 4 != 0 {
        return Err(MptError::shape("haar_idwt", format!("channel extent {} not a multiple of 4", c4)));
    }
    let c = c4 / 4;
    let (h, w) = (2 * ho, 2 * wo);
    let half = T::from_f64c(0.5);
    let src = bands.data();
    let mut out = vec![T::zero(); n * h * w * c];
    for b in 0..n {
        for y in 0..ho {
            for xo in 0..wo {
                let i = ((b * ho + y) * wo + xo) * c4;
                let at = |dy: usize, dx: usize| ((b * h + 2 * y + dy) * w + 2 * xo + dx) * c;
                let (pa, pb, pc, pd) = (at(0, 0), at(0, 1), at(1, 0), at(1, 1));
                for ch in 0..c {
                    let ll = src[i + LL * c + ch];
                    let lh = src[i + LH * c + ch];
                    let hl = src[i + HL * c + ch];
                    let hh = src[i + HH * c + ch];
                    out[pa + ch] = (ll - hl - lh + hh) * half;
                    out[pb + ch] = (ll + hl - lh - hh) * half;
                    out[pc + ch] = (ll - hl + lh - hh) * half;
                    out[pd + ch] = (ll + hl + lh + hh) * half;
                }
            }
        }
    }
    Tensor::new(spatial_shape(bands.shape(), n, h, w, c), out)
}

fn pad_even<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, (usize, usize))> {
    let (n, h, w, c) = x.nhwc()?;
    let (pb, pr) = (h % 2, w % 2);
    if pb == 0 && pr == 0 {
        return Ok((x.clone(), (0, 0)));
    }
    let (hp, wp) = (h + pb, w + pr);
    let mut out = vec![T::zero(); n * hp * wp * c];
    for b in 0..n {
        for y in 0..h {
            let src = &x.data()[((b * h + y) * w) * c..((b * h + y + 1) * w) * c];
            out[((b * hp + y) * wp) * c..][..w * c].copy_from_slice(src);
        }
    }
    Ok((Tensor::new(spatial_shape(x.shape(), n, hp, wp, c), out)?, (pb, pr)))
}

fn band<T: Element>(stacked: &Tensor<T>, k: usize) -> Tensor<T> {
    let c4 = *stacked.shape().last().expect("rank >= 3");
    let c = c4 / 4;
    let data = stacked
        .data()
        .chunks_exact(c4)
        .flat_map(|px| px[k * c..(k + 1) * c].iter().copied())
        .collect();
    let mut shape = stacked.shape().to_vec();
    *shape.last_mut().expect("rank >= 3") = c;
    Tensor::new(shape, data).expect("band shape")
}

/// Splits into the four Haar bands, zero-padding odd extents first.
pub fn haar_dwt<T: Element>(x: &Tensor<T>) -> Result<FrequencyBands<T>> {
    let (padded, pad) = pad_even(x)?;
    let s = haar_forward_stacked(&padded)?;
    Ok(FrequencyBands {
        ll: band(&s, LL),
        lh: band(&s, LH),
        hl: band(&s, HL),
        hh: band(&s, HH),
        pad,
    })
}

/// Reassembles the image and removes the padding recorded by [`haar_dwt`].
pub fn haar_idwt<T: Element>(b: &FrequencyBands<T>) -> Result<Tensor<T>> {
    let shape = b.ll.shape();
    if b.lh.shape() != shape || b.hl.shape() != shape || b.hh.shape() != shape {
        return Err(MptError::shape("haar_idwt", "band shapes differ"));
    }
    let c = *shape.last().ok_or_else(|| MptError::shape("haar_idwt", "rank 0"))?;
    let bands = [&b.ll, &b.lh, &b.hl, &b.hh];
    let mut data = Vec::with_capacity(4 * b.ll.numel());
    for px in 0..b.ll.numel() / c.max(1) {
        for t in bands {
            data.extend_from_slice(&t.data()[px * c..(px + 1) * c]);
        }
    }
    let mut sshape = shape.to_vec();
    *sshape.last_mut().expect("rank >= 1") = 4 * c;
    let full = haar_inverse_stacked(&Tensor::new(sshape, data)?)?;
    if b.pad == (0, 0) {
        return Ok(full);
    }
    let (n, h, w, c) = full.nhwc()?;
    let (ho, wo) = (h - b.pad.0, w - b.pad.1);
    let mut out = Vec::with_capacity(n * ho * wo * c);
    for bi in 0..n {
        for y in 0..ho {
            out.extend_from_slice(&full.data()[((bi * h + y) * w) * c..][..wo * c]);
        }
    }
    Tensor::new(spatial_shape(full.shape(), n, ho, wo, c), out)
}

/// Channel concatenation `LH | HL | HH`.
pub fn f_high<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (padded, _) = pad_even(x)?;
    let s = haar_forward_stacked(&padded)?;
    let c4 = *s.shape().last().expect("rank >= 3");
    let c = c4 / 4;
    let data = s
        .data()
        .chunks_exact(c4)
        .flat_map(|px| px[c..].iter().copied())
        .collect();
    let mut shape = s.shape().to_vec();
    *shape.last_mut().expect("rank >= 3") = 3 * c;
    Tensor::new(shape, data)
}

pub fn f_low<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(haar_dwt(x)?.ll)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_block() {
        let x = Tensor::<f64>::from_f64([2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = haar_dwt(&x).unwrap();
        assert_eq!(b.ll.data(), &[5.0]);
        assert_eq!(b.hl.data(), &[1.0]);
        assert_eq!(b.lh.data(), &[2.0]);
        assert_eq!(b.hh.data(), &[0.0]);
    }

    #[test]
    fn constant_image_has_no_detail() {
        let x = Tensor::<f64>::full([4, 6, 2], 0.3);
        let b = haar_dwt(&x).unwrap();
        assert!(b.ll.data().iter().all(|&v| (v - 0.6).abs() < 1e-12));
        for t in [&b.lh, &b.hl, &b.hh] {
            assert!(t.data().iter().all(|&v| v.abs() < 1e-12));
        }
        assert!(f_high(&x).unwrap().data().iter().all(|&v| v.abs() < 1e-12));
        assert_eq!(f_high(&x).unwrap().shape(), &[2, 3, 6]);
    }

    #[test]
    fn zero_bands_give_zero_image() {
        let z = Tensor::<f64>::zeros([3, 3, 2]);
        let b = FrequencyBands {
            ll: z.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
            pad: (0, 0),
        };
        let x = haar_idwt(&b).unwrap();
        assert_eq!(x.shape(), &[6, 6, 2]);
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ll_only_reconstructs_constant() {
        let ll = Tensor::<f64>::full([2, 2, 1], 1.4);
        let z = Tensor::zeros([2, 2, 1]);
        let b = FrequencyBands {
            ll,
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
            pad: (0, 0),
        };
        assert!(haar_idwt(&b).unwrap().data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn odd_extents_roundtrip() {
        let x = Tensor::<f64>::from_fn([5, 7, 2], |i| (i as f64 * 0.37).sin());
        let b = haar_dwt(&x).unwrap();
        assert_eq!(b.pad, (1, 1));
        let y = haar_idwt(&b).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn step_edge_lands_in_one_band() {
        // vertical boundary at an odd column: only horizontal differences respond
        let x = Tensor::<f64>::from_fn([8, 8, 1], |i| if i % 8 >= 3 { 1.0 } else { 0.0 });
        let b = haar_dwt(&x).unwrap();
        let l1 = |t: &Tensor<f64>| t.data().iter().map(|v| v.abs()).sum::<f64>();
        assert!(l1(&b.hl) > 0.0);
        let energies = [l1(&b.lh), l1(&b.hl), l1(&b.hh)];
        assert_eq!(energies.iter().filter(|&&e| e > 0.0).count(), 1, "{:?}", energies);
    }
}
