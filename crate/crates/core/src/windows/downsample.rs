use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use super::ScaleSpec;
use crate::autodiff::{Tape, Var};
use crate::error::{MptError, Result};
use crate::tensor::ops::bicubic_taps;
use crate::tensor::{Element, Tensor};

/// Downsampling module variants of the key/value path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum DownsampleKind {
    /// Strided average pooling, linear projection, shortcut.
    #[default]
    Baseline,
    /// Pooling and projection without the shortcut.
    NoShortcut,
    /// Pooling alone.
    PoolOnly,
    /// Max pooling in place of average pooling.
    MaxPool,
    /// Depthwise strided convolution in place of pooling.
    StridedConv,
    /// Bicubic interpolation in place of pooling.
    Bicubic,
}

impl DownsampleKind {
    pub const ALL: [DownsampleKind; 6] = [
        DownsampleKind::Baseline,
        DownsampleKind::NoShortcut,
        DownsampleKind::PoolOnly,
        DownsampleKind::MaxPool,
        DownsampleKind::StridedConv,
        DownsampleKind::Bicubic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DownsampleKind::Baseline => "baseline",
            DownsampleKind::NoShortcut => "v_ds1",
            DownsampleKind::PoolOnly => "v_ds2",
            DownsampleKind::MaxPool => "v_ds3",
            DownsampleKind::StridedConv => "v_ds4",
            DownsampleKind::Bicubic => "v_ds5",
        }
    }

    pub fn has_linear(self) -> bool {
        self != DownsampleKind::PoolOnly
    }

    pub fn has_shortcut(self) -> bool {
        !matches!(self, DownsampleKind::NoShortcut | DownsampleKind::PoolOnly)
    }

    pub fn has_conv(self) -> bool {
        self == DownsampleKind::StridedConv
    }
}

impl fmt::Display for DownsampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DownsampleKind {
    type Err = MptError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| MptError::config("downsample", format!("unknown variant {:?}", s)))
    }
}

/// Learnable pieces of the downsampling module; which are present depends on the kind.
pub struct DownsampleParams<'a, 't, T: Element> {
    pub lin_w: Option<&'a Var<'t, T>>,
    pub lin_b: Option<&'a Var<'t, T>>,
    /// `[r, r, 1, C]` depthwise kernel for [`DownsampleKind::StridedConv`].
    pub conv_w: Option<&'a Var<'t, T>>,
}

/// Maps `[n, h, w, c]` to `[n, h·s, w·s, c]`; scale 1 is the identity.
pub fn downsample_var<'t, T: Element>(
    x: &Var<'t, T>,
    s: ScaleSpec,
    kind: DownsampleKind,
    p: &DownsampleParams<'_, 't, T>,
) -> Result<Var<'t, T>> {
    if s.is_one() {
        return Ok(x.clone());
    }
    let r = s.ratio();
    let (_, h, w, c) = x.value().nhwc()?;
    if h % r != 0 || w % r != 0 {
        return Err(MptError::shape("downsample", format!("{}x{} not divisible by {}", h, w, r)));
    }
    let pooled = match kind {
        DownsampleKind::MaxPool => x.max_pool2d(r, r)?,
        DownsampleKind::StridedConv => {
            let wc = p
                .conv_w
                .ok_or_else(|| MptError::invalid("downsample", "strided conv weight missing"))?;
            x.conv2d(wc, None, r, 0, c)?
        }
        DownsampleKind::Bicubic => x.resample(Rc::new(bicubic_taps(h, r)), Rc::new(bicubic_taps(w, r)))?,
        _ => x.avg_pool2d(r, r)?,
    };
    if !kind.has_linear() {
        return Ok(pooled);
    }
    let lw = p
        .lin_w
        .ok_or_else(|| MptError::invalid("downsample", "projection weight missing"))?;
    let proj = pooled.linear(lw, p.lin_b)?;
    if kind.has_shortcut() {
        pooled.add(&proj)
    } else {
        Ok(proj)
    }
}

/// Baseline module on plain tensors: `pool(x) + linear(pool(x))`.
pub fn downsample_cswa<T: Element>(x: &Tensor<T>, s: ScaleSpec, w_lin: &Tensor<T>, b_lin: &Tensor<T>) -> Result<Tensor<T>> {
    let tape = Tape::no_grad();
    let (w, b) = (tape.constant(w_lin.clone()), tape.constant(b_lin.clone()));
    let p = DownsampleParams {
        lin_w: Some(&w),
        lin_b: Some(&b),
        conv_w: None,
    };
    Ok(downsample_var(&tape.constant(x.clone()), s, DownsampleKind::Baseline, &p)?.to_tensor())
}

/// Depthwise 3×3 convolution over the whole map, zero border.
pub fn npconv_var<'t, T: Element>(x: &Var<'t, T>, w_dw: &Var<'t, T>) -> Result<Var<'t, T>> {
    let c = *x.shape().last().ok_or_else(|| MptError::shape("npconv", "rank 0"))?;
    if w_dw.shape() != [3, 3, 1, c] {
        return Err(MptError::shape("npconv", format!("kernel {:?} for {} channels", w_dw.shape(), c)));
    }
    x.conv2d(w_dw, None, 1, 1, c)
}

pub fn npconv<T: Element>(x: &Tensor<T>, w_dw: &Tensor<T>) -> Result<Tensor<T>> {
    let tape = Tape::no_grad();
    Ok(npconv_var(&tape.constant(x.clone()), &tape.constant(w_dw.clone()))?.to_tensor())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::conv2d;
    use crate::windows::{window_partition, WindowGrid};

    fn half() -> ScaleSpec {
        ScaleSpec::from_ratio(2).unwrap()
    }

    #[test]
    fn unit_scale_is_identity() {
        let x = Tensor::<f64>::from_fn([4, 4, 2], |i| i as f64);
        let y = downsample_cswa(&x, ScaleSpec::one(), &Tensor::ones([2, 2]), &Tensor::ones([2])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_projection_leaves_pool() {
        let x = Tensor::<f64>::from_fn([4, 4, 2], |i| (i as f64).sin());
        let y = downsample_cswa(&x, half(), &Tensor::zeros([2, 2]), &Tensor::zeros([2])).unwrap();
        let p = crate::tensor::ops::avg_pool2d(&x, 2, 2).unwrap();
        assert!(y.max_abs_diff(&p) < 1e-15);
        assert_eq!(y.shape(), &[2, 2, 2]);
    }

    #[test]
    fn constant_with_identity_projection_doubles() {
        let x = Tensor::<f64>::full([8, 8, 3], 0.25);
        let eye = Tensor::from_fn([3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = downsample_cswa(&x, ScaleSpec::from_ratio(4).unwrap(), &eye, &Tensor::zeros([3])).unwrap();
        assert_eq!(y.shape(), &[2, 2, 3]);
        assert!(y.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn npconv_delta_and_ones() {
        let x = Tensor::<f64>::from_fn([5, 5, 2], |i| i as f64 * 0.1);
        let mut delta = Tensor::zeros([3, 3, 1, 2]);
        delta.data_mut()[8] = 1.0;
        delta.data_mut()[9] = 1.0;
        assert!(npconv(&x, &delta).unwrap().max_abs_diff(&x) < 1e-15);
        let ones = npconv(&Tensor::<f64>::ones([4, 4, 1]), &Tensor::ones([3, 3, 1, 1])).unwrap();
        assert_eq!(ones.data()[5], 9.0);
        assert_eq!(ones.data()[0], 4.0);
        assert_eq!(ones.data()[1], 6.0);
    }

    #[test]
    fn npconv_equals_halo_patches() {
        let mut rng = crate::data::Rng::new(11);
        let x = Tensor::<f64>::from_fn([8, 8, 3], |_| rng.uniform_range(-1.0, 1.0));
        let k = Tensor::<f64>::from_fn([3, 3, 1, 3], |_| rng.uniform_range(-1.0, 1.0));
        let (full, _) = window_partition(&npconv(&x, &k).unwrap(), 4).unwrap();
        // oracle: cut each window with a one-pixel halo of true neighbours
        // (zeros outside the image), then run a valid convolution on it
        let grid = WindowGrid::new(8, 8, 4).unwrap();
        for wr in 0..grid.rows {
            for wc in 0..grid.cols {
                let halo = Tensor::from_fn([6, 6, 3], |i| {
                    let (py, px, ch) = (i / 18, (i / 3) % 6, i % 3);
                    let (y, xx) = (wr as isize * 4 + py as isize - 1, wc as isize * 4 + px as isize - 1);
                    if (0..8).contains(&y) && (0..8).contains(&xx) {
                        x.data()[((y * 8 + xx) * 3) as usize + ch]
                    } else {
                        0.0
                    }
                });
                let valid = conv2d(&halo, &k, None, 1, 0, 3).unwrap();
                let win = wr * grid.cols + wc;
                let got = &full.data()[win * 48..(win + 1) * 48];
                for (a, b) in got.iter().zip(valid.data()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn variants_parse_and_shrink_area() {
        for kind in DownsampleKind::ALL {
            assert_eq!(kind.name().parse::<DownsampleKind>().unwrap(), kind);
            let tape = Tape::<f64>::no_grad();
            let x = tape.constant(Tensor::from_fn([1, 8, 8, 2], |i| (i as f64 * 0.3).cos()));
            let lw = tape.constant(Tensor::from_fn([2, 2], |i| i as f64 * 0.1));
            let lb = tape.constant(Tensor::zeros([2]));
            let cw = tape.constant(Tensor::full([4, 4, 1, 2], 1.0 / 16.0));
            let p = DownsampleParams {
                lin_w: Some(&lw),
                lin_b: Some(&lb),
                conv_w: Some(&cw),
            };
            let y = downsample_var(&x, ScaleSpec::from_ratio(4).unwrap(), kind, &p).unwrap();
            assert_eq!(y.shape(), &[1, 2, 2, 2], "{}", kind);
        }
    }
}
