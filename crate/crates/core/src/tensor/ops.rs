//! Pure (tape-free) tensor operations.
//!
//! The differentiable counterparts in [`crate::autodiff`] share the shape
//! validation and kernels defined here.

use super::kernels::{self, ConvGeom, PoolGeom};
use super::{nhwc_dims, Element, Tensor};
use crate::error::{MptError, Result};

/// Marker in a gather index meaning "produce zero".
pub const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShuffleDirection {
    /// `(H, W, C) -> (H·r, W·r, C/r²)`
    Up,
    /// `(H, W, C) -> (H/r, W/r, C·r²)`
    Down,
}

pub(crate) fn conv_geom(
    xshape: &[usize],
    wshape: &[usize],
    bias: Option<&[usize]>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<ConvGeom> {
    let (n, h, w, cin) = nhwc_dims(xshape)?;
    let [kh, kw, cin_g, cout] = *wshape else {
        return Err(MptError::shape(
            "conv2d",
            format!("weight must be [kh, kw, cin/groups, cout], got {:?}", wshape),
        ));
    };
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(MptError::shape(
            "conv2d",
            format!("groups {} must divide cin {} and cout {}", groups, cin, cout),
        ));
    }
    if cin_g != cin / groups {
        return Err(MptError::shape(
            "conv2d",
            format!("weight expects {} input channels per group, input has {}", cin_g, cin / groups),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        // even kernels are only meaningful as strided patch kernels
        if !(padding == 0 && stride == kh && stride == kw) {
            return Err(MptError::invalid("conv2d", "kernel must be odd-sized"));
        }
    }
    if stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(MptError::shape(
            "conv2d",
            format!("kernel {}x{} does not fit input {}x{} with padding {}", kh, kw, h, w, padding),
        ));
    }
    if let Some(b) = bias {
        if b != [cout] {
            return Err(MptError::shape("conv2d", format!("bias {:?} vs cout {}", b, cout)));
        }
    }
    Ok(ConvGeom {
        n,
        h,
        w,
        cin,
        cout,
        kh,
        kw,
        stride,
        pad: padding,
        groups,
    })
}

/// Output shape keeps the HWC/NHWC rank of the input.
pub(crate) fn spatial_shape(like: &[usize], n: usize, h: usize, w: usize, c: usize) -> Vec<usize> {
    if like.len() == 3 {
        vec![h, w, c]
    } else {
        vec![n, h, w, c]
    }
}

pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let g = conv_geom(x.shape(), w.shape(), b.map(|b| b.shape()), stride, padding, groups)?;
    let (ho, wo) = g.out_hw();
    let out = kernels::conv2d_forward(&g, x.data(), w.data(), b.map(|b| b.data()));
    Tensor::new(spatial_shape(x.shape(), g.n, ho, wo, g.cout), out)
}

pub(crate) fn pool_geom(xshape: &[usize], window: usize, stride: usize, exact: bool) -> Result<PoolGeom> {
    let (n, h, w, c) = nhwc_dims(xshape)?;
    if window == 0 || stride == 0 || window > h || window > w {
        return Err(MptError::invalid(
            "pool2d",
            format!("window {} stride {} on {}x{}", window, stride, h, w),
        ));
    }
    if exact && window == stride && (h % stride != 0 || w % stride != 0) {
        return Err(MptError::shape(
            "pool2d",
            format!("{}x{} not divisible by stride {}", h, w, stride),
        ));
    }
    Ok(PoolGeom {
        n,
        h,
        w,
        c,
        window,
        stride,
    })
}

pub fn avg_pool2d<T: Element>(x: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    let g = pool_geom(x.shape(), window, stride, true)?;
    let (ho, wo) = g.out_hw();
    Tensor::new(
        spatial_shape(x.shape(), g.n, ho, wo, g.c),
        kernels::avg_pool_forward(&g, x.data()),
    )
}

pub fn max_pool2d<T: Element>(x: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    let g = pool_geom(x.shape(), window, stride, true)?;
    let (ho, wo) = g.out_hw();
    Tensor::new(
        spatial_shape(x.shape(), g.n, ho, wo, g.c),
        kernels::max_pool_forward(&g, x.data()).0,
    )
}

pub(crate) fn linear_dims(xshape: &[usize], wshape: &[usize], bias: Option<&[usize]>) -> Result<(usize, usize, usize)> {
    let [cin, cout] = *wshape else {
        return Err(MptError::shape("linear", format!("weight must be [cin, cout], got {:?}", wshape)));
    };
    if xshape.last() != Some(&cin) {
        return Err(MptError::shape(
            "linear",
            format!("input last extent {:?} vs weight cin {}", xshape.last(), cin),
        ));
    }
    if let Some(b) = bias {
        if b != [cout] {
            return Err(MptError::shape("linear", format!("bias {:?} vs cout {}", b, cout)));
        }
    }
    let rows = xshape.iter().product::<usize>() / cin.max(1);
    Ok((rows, cin, cout))
}

pub(crate) fn linear_forward<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, rows: usize, cin: usize, cout: usize) -> Vec<T> {
    let mut out = match b {
        Some(b) => {
            let mut o = Vec::with_capacity(rows * cout);
            for _ in 0..rows {
                o.extend_from_slice(b);
            }
            o
        }
        None => vec![T::zero(); rows * cout],
    };
    kernels::gemm(rows, cout, cin, x, false, w, false, &mut out);
    out
}

/// Affine map along the last axis: `x · w + b` with `w` of shape `[cin, cout]`.
pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (rows, cin, cout) = linear_dims(x.shape(), w.shape(), b.map(|b| b.shape()))?;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = cout;
    Tensor::new(shape, linear_forward(x.data(), w.data(), b.map(|b| b.data()), rows, cin, cout))
}

pub(crate) fn check_norm_params(xshape: &[usize], gamma: &[usize], beta: &[usize]) -> Result<usize> {
    let c = *xshape.last().unwrap_or(&0);
    if c == 0 {
        return Err(MptError::shape("layer_norm", "zero channel extent"));
    }
    if gamma != [c] || beta != [c] {
        return Err(MptError::shape(
            "layer_norm",
            format!("affine params {:?}/{:?} vs channels {}", gamma, beta, c),
        ));
    }
    Ok(c)
}

/// Normalizes over the last (channel) axis.
pub fn layer_norm<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let c = check_norm_params(x.shape(), gamma.shape(), beta.shape())?;
    let (y, _, _) = kernels::layer_norm_forward(x.data(), c, gamma.data(), beta.data(), T::from_f64c(eps));
    Tensor::new(x.shape().to_vec(), y)
}

pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(kernels::gelu)
}

pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(MptError::invalid("softmax", format!("axis {} out of range for {:?}", axis, shape)));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub fn softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    Tensor::new(x.shape().to_vec(), kernels::softmax_forward(x.data(), outer, len, inner))
}

/// Batched matmul geometry: `(batch, batch_a, batch_b, m, k, n, out_shape)`.
#[derive(Clone, Debug)]
pub(crate) struct MatmulGeom {
    pub batch: usize,
    pub batch_a: usize,
    pub batch_b: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out_shape: Vec<usize>,
}

pub(crate) fn matmul_geom(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<MatmulGeom> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MptError::shape("matmul", "operands need rank >= 2"));
    }
    let (ar, ac) = (a[a.len() - 2], a[a.len() - 1]);
    let (br, bc) = (b[b.len() - 2], b[b.len() - 1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    if k != kb {
        return Err(MptError::shape("matmul", format!("inner extents {:?} x {:?}", a, b)));
    }
    let lead_a = &a[..a.len() - 2];
    let lead_b = &b[..b.len() - 2];
    let batch_a: usize = lead_a.iter().product();
    let batch_b: usize = lead_b.iter().product();
    let lead = if lead_a == lead_b || batch_b == 1 {
        lead_a
    } else if batch_a == 1 {
        lead_b
    } else {
        return Err(MptError::shape(
            "matmul",
            format!("batch extents {:?} and {:?} do not broadcast", lead_a, lead_b),
        ));
    };
    let mut out_shape = lead.to_vec();
    out_shape.extend([m, n]);
    Ok(MatmulGeom {
        batch: batch_a.max(batch_b),
        batch_a,
        batch_b,
        m,
        k,
        n,
        out_shape,
    })
}

pub(crate) fn matmul_forward<T: Element>(g: &MatmulGeom, a: &[T], ta: bool, b: &[T], tb: bool) -> Vec<T> {
    let (sa, sb, sc) = (g.m * g.k, g.k * g.n, g.m * g.n);
    let mut out = vec![T::zero(); g.batch * sc];
    for i in 0..g.batch {
        let ai = if g.batch_a == 1 { 0 } else { i };
        let bi = if g.batch_b == 1 { 0 } else { i };
        kernels::gemm(
            g.m,
            g.n,
            g.k,
            &a[ai * sa..(ai + 1) * sa],
            ta,
            &b[bi * sb..(bi + 1) * sb],
            tb,
            &mut out[i * sc..(i + 1) * sc],
        );
    }
    out
}

/// Batched product over the trailing two axes.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let g = matmul_geom(a.shape(), b.shape(), false, false)?;
    let out = matmul_forward(&g, a.data(), false, b.data(), false);
    Tensor::new(g.out_shape, out)
}

/// Applies a gather map: `out[i] = x[index[i]]`, or zero where `index[i] == NONE`.
pub fn gather<T: Element>(x: &Tensor<T>, index: &[u32], out_shape: Vec<usize>) -> Result<Tensor<T>> {
    if out_shape.iter().product::<usize>() != index.len() {
        return Err(MptError::shape("gather", "index length vs output shape"));
    }
    let src = x.data();
    let data = index
        .iter()
        .map(|&i| if i == NONE { T::zero() } else { src[i as usize] })
        .collect();
    Tensor::new(out_shape, data)
}

/// Index map for pixel (un)shuffle. Channel order within a pixel block is
/// `c · r² + dy · r + dx`.
pub fn pixel_shuffle_index(shape: &[usize], r: usize, dir: ShuffleDirection) -> Result<(Vec<u32>, Vec<usize>)> {
    let (n, h, w, c) = nhwc_dims(shape)?;
    if r == 0 {
        return Err(MptError::invalid("pixel_shuffle", "factor must be positive"));
    }
    let (oh, ow, oc) = match dir {
        ShuffleDirection::Down => {
            if h % r != 0 || w % r != 0 {
                return Err(MptError::shape(
                    "pixel_shuffle",
                    format!("{}x{} not divisible by {}", h, w, r),
                ));
            }
            (h / r, w / r, c * r * r)
        }
        ShuffleDirection::Up => {
            if c % (r * r) != 0 {
                return Err(MptError::shape(
                    "pixel_shuffle",
                    format!("channels {} not divisible by {}", c, r * r),
                ));
            }
            (h * r, w * r, c / (r * r))
        }
    };
    let mut idx = Vec::with_capacity(n * oh * ow * oc);
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..oc {
                    let src = match dir {
                        ShuffleDirection::Down => {
                            let (cc, rem) = (ch / (r * r), ch % (r * r));
                            let (dy, dx) = (rem / r, rem % r);
                            ((b * h + y * r + dy) * w + x * r + dx) * c + cc
                        }
                        ShuffleDirection::Up => {
                            let (dy, dx) = (y % r, x % r);
                            let sc = ch * r * r + dy * r + dx;
                            ((b * h + y / r) * w + x / r) * c + sc
                        }
                    };
                    idx.push(src as u32);
                }
            }
        }
    }
    Ok((idx, spatial_shape(shape, n, oh, ow, oc)))
}

pub fn pixel_shuffle<T: Element>(x: &Tensor<T>, r: usize, dir: ShuffleDirection) -> Result<Tensor<T>> {
    let (idx, shape) = pixel_shuffle_index(x.shape(), r, dir)?;
    gather(x, &idx, shape)
}

/// Separable resampling taps: for each output coordinate a list of `(source, weight)`.
pub type Taps = Vec<Vec<(usize, f64)>>;

/// Bicubic (`a = -0.75`) taps for an exact integer downscale, half-pixel centers,
/// border-clamped source indices.
pub fn bicubic_taps(src: usize, factor: usize) -> Taps {
    fn cubic(t: f64) -> f64 {
        const A: f64 = -0.75;
        let t = t.abs();
        if t <= 1.0 {
            ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
        } else if t < 2.0 {
            ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
        } else {
            0.0
        }
    }
    let dst = src / factor;
    (0..dst)
        .map(|o| {
            let center = (o as f64 + 0.5) * factor as f64 - 0.5;
            let base = center.floor();
            let frac = center - base;
            (-1..=2)
                .map(|d| {
                    let s = (base as isize + d).clamp(0, src as isize - 1) as usize;
                    (s, cubic(d as f64 - frac))
                })
                .collect()
        })
        .collect()
}

/// Bilinear taps mapping `src` samples onto `dst` samples, half-pixel centers.
pub fn bilinear_taps(src: usize, dst: usize) -> Taps {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let center = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (center.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let f = center - i0 as f64;
            vec![(i0, 1.0 - f), (i1, f)]
        })
        .collect()
}

pub(crate) fn resample_forward<T: Element>(
    x: &[T],
    (n, h, w, c): (usize, usize, usize, usize),
    rows: &Taps,
    cols: &Taps,
) -> Vec<T> {
    let (ho, wo) = (rows.len(), cols.len());
    let mut tmp = vec![T::zero(); n * ho * w * c];
    for b in 0..n {
        for (oy, taps) in rows.iter().enumerate() {
            let dst = &mut tmp[((b * ho + oy) * w) * c..((b * ho + oy + 1) * w) * c];
            for &(sy, wt) in taps {
                let src = &x[((b * h + sy) * w) * c..((b * h + sy + 1) * w) * c];
                let wt = T::from_f64c(wt);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
    }
    let mut out = vec![T::zero(); n * ho * wo * c];
    for b in 0..n {
        for oy in 0..ho {
            for (ox, taps) in cols.iter().enumerate() {
                let dst = &mut out[((b * ho + oy) * wo + ox) * c..][..c];
                for &(sx, wt) in taps {
                    let src = &tmp[((b * ho + oy) * w + sx) * c..][..c];
                    let wt = T::from_f64c(wt);
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += wt * s;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn resample_backward<T: Element>(
    dy: &[T],
    (n, h, w, c): (usize, usize, usize, usize),
    rows: &Taps,
    cols: &Taps,
) -> Vec<T> {
    let (ho, wo) = (rows.len(), cols.len());
    let mut tmp = vec![T::zero(); n * ho * w * c];
    for b in 0..n {
        for oy in 0..ho {
            for (ox, taps) in cols.iter().enumerate() {
                let src = &dy[((b * ho + oy) * wo + ox) * c..][..c];
                for &(sx, wt) in taps {
                    let dst = &mut tmp[((b * ho + oy) * w + sx) * c..][..c];
                    let wt = T::from_f64c(wt);
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += wt * s;
                    }
                }
            }
        }
    }
    let mut dx = vec![T::zero(); n * h * w * c];
    for b in 0..n {
        for (oy, taps) in rows.iter().enumerate() {
            let src = &tmp[((b * ho + oy) * w) * c..((b * ho + oy + 1) * w) * c];
            for &(sy, wt) in taps {
                let dst = &mut dx[((b * h + sy) * w) * c..((b * h + sy + 1) * w) * c];
                let wt = T::from_f64c(wt);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        }
    }
    dx
}

/// Separable resampling of an HWC/NHWC tensor.
pub fn resample<T: Element>(x: &Tensor<T>, rows: &Taps, cols: &Taps) -> Result<Tensor<T>> {
    let dims = x.nhwc()?;
    let out = resample_forward(x.data(), dims, rows, cols);
    Tensor::new(spatial_shape(x.shape(), dims.0, rows.len(), cols.len(), dims.3), out)
}
