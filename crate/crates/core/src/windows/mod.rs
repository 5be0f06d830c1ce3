//! Window partitioning, cyclic shifts, and the cross-scale downsampling path.
//!
//! All layout changes are expressed as flat gather indices so the same
//! routine drives plain tensors and differentiable values.

mod downsample;

use std::fmt;
use std::str::FromStr;

use crate::autodiff::GatherMap;
use crate::error::{MptError, Result};
use crate::tensor::ops::{gather, NONE};
use crate::tensor::{Element, Tensor};

pub use downsample::{downsample_cswa, downsample_var, npconv, npconv_var, DownsampleKind, DownsampleParams};

/// A scale factor `1/ratio`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScaleSpec {
    ratio: usize,
}

impl ScaleSpec {
    /// Supported reciprocals. 16 only appears in a scale ablation.
    pub const RATIOS: [usize; 5] = [1, 2, 4, 8, 16];

    pub fn from_ratio(ratio: usize) -> Result<Self> {
        if !Self::RATIOS.contains(&ratio) {
            return Err(MptError::invalid("scale", format!("unsupported scale 1/{}", ratio)));
        }
        Ok(ScaleSpec { ratio })
    }

    pub const fn one() -> Self {
        ScaleSpec { ratio: 1 }
    }

    pub fn ratio(self) -> usize {
        self.ratio
    }

    pub fn s(self) -> f64 {
        1.0 / self.ratio as f64
    }

    pub fn is_one(self) -> bool {
        self.ratio == 1
    }
}

impl fmt::Display for ScaleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ratio == 1 {
            f.write_str("1")
        } else {
            write!(f, "1/{}", self.ratio)
        }
    }
}

impl FromStr for ScaleSpec {
    type Err = MptError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let ratio = match s.split_once('/') {
            Some((num, den)) if num.trim() == "1" => den.trim().parse::<usize>().ok(),
            Some(_) => None,
            None if s == "1" => Some(1),
            None => s.parse::<f64>().ok().filter(|v| *v > 0.0).map(|v| (1.0 / v).round() as usize),
        };
        match ratio {
            Some(r) => ScaleSpec::from_ratio(r),
            None => Err(MptError::invalid("scale", format!("cannot parse scale {:?}", s))),
        }
    }
}

/// Checks the coarse-to-fine rule: scales never decrease along a pyramid.
pub fn validate_schedule(scales: &[ScaleSpec]) -> Result<()> {
    for pair in scales.windows(2) {
        if pair[0].ratio < pair[1].ratio {
            return Err(MptError::invalid(
                "scale schedule",
                format!("{} followed by {} decreases the scale", pair[0], pair[1]),
            ));
        }
    }
    Ok(())
}

/// Tiling of an `h × w` map into `m × m` windows after bottom/right padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGrid {
    pub m: usize,
    pub rows: usize,
    pub cols: usize,
    pub source: (usize, usize),
    pub pad: (usize, usize),
}

impl WindowGrid {
    pub fn new(h: usize, w: usize, m: usize) -> Result<Self> {
        Self::with_multiple(h, w, m, m)
    }

    /// Pads to a multiple of `multiple` (itself a multiple of `m`).
    pub fn with_multiple(h: usize, w: usize, m: usize, multiple: usize) -> Result<Self> {
        if m == 0 || multiple == 0 || !multiple.is_multiple_of(m) {
            return Err(MptError::invalid("window_grid", format!("window {} with multiple {}", m, multiple)));
        }
        let hp = h.div_ceil(multiple) * multiple;
        let wp = w.div_ceil(multiple) * multiple;
        Ok(WindowGrid {
            m,
            rows: hp / m,
            cols: wp / m,
            source: (h, w),
            pad: (hp - h, wp - w),
        })
    }

    pub fn padded(&self) -> (usize, usize) {
        (self.rows * self.m, self.cols * self.m)
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    /// Offset used by shifted sub-blocks.
    pub fn shift(&self) -> usize {
        self.m / 2
    }
}

/// Source coordinate of shifted position `p` on a torus of extent `n`.
fn unshift(p: usize, offset: usize, n: usize) -> usize {
    (p + offset) % n
}

/// Gather from `[n, h, w, c]` into windows `[n·rows·cols, heads, m², c/heads]`.
///
/// The map is padded to the grid, rolled by `−offset` on both axes, then tiled.
/// Window `(r, c)` of the output draws from window `(r / pick, c / pick)` of the
/// source grid, which gives the many-to-one correspondence between local and
/// downscaled maps; `pick = 1` is ordinary partitioning.
pub fn window_gather_index(
    n: usize,
    src: &WindowGrid,
    out_rows: usize,
    out_cols: usize,
    pick: usize,
    channels: usize,
    heads: usize,
    offset: usize,
) -> Result<GatherMap> {
    if heads == 0 || !channels.is_multiple_of(heads) {
        return Err(MptError::shape("window_gather", format!("{} channels over {} heads", channels, heads)));
    }
    if out_rows.div_ceil(pick) > src.rows || out_cols.div_ceil(pick) > src.cols {
        return Err(MptError::shape("window_gather", "query grid exceeds key grid"));
    }
    let (h, w) = src.source;
    let (hp, wp) = src.padded();
    let m = src.m;
    let d = channels / heads;
    let mut idx = Vec::with_capacity(n * out_rows * out_cols * m * m * channels);
    for b in 0..n {
        for wr in 0..out_rows {
            for wc in 0..out_cols {
                let (kr, kc) = (wr / pick, wc / pick);
                for head in 0..heads {
                    for i in 0..m {
                        let y = unshift(kr * m + i, offset, hp);
                        for j in 0..m {
                            let x = unshift(kc * m + j, offset, wp);
                            if y >= h || x >= w {
                                idx.extend(std::iter::repeat_n(NONE, d));
                            } else {
                                let base = ((b * h + y) * w + x) * channels + head * d;
                                idx.extend((base..base + d).map(|v| v as u32));
                            }
                        }
                    }
                }
            }
        }
    }
    GatherMap::new(
        idx,
        n * h * w * channels,
        vec![n * out_rows * out_cols, heads, m * m, d],
    )
}

/// Inverse of [`window_gather_index`] with `pick = 1`: windows back to `[n, h, w, c]`.
pub fn window_merge_index(n: usize, grid: &WindowGrid, channels: usize, heads: usize, offset: usize) -> Result<GatherMap> {
    if heads == 0 || !channels.is_multiple_of(heads) {
        return Err(MptError::shape("window_merge", format!("{} channels over {} heads", channels, heads)));
    }
    let (h, w) = grid.source;
    let (hp, wp) = grid.padded();
    let m = grid.m;
    let d = channels / heads;
    let nw = grid.count();
    let mut idx = Vec::with_capacity(n * h * w * channels);
    for b in 0..n {
        for y in 0..h {
            let ys = (y + hp - offset % hp) % hp;
            for x in 0..w {
                let xs = (x + wp - offset % wp) % wp;
                let win = b * nw + (ys / m) * grid.cols + xs / m;
                let pos = (ys % m) * m + xs % m;
                for ch in 0..channels {
                    let (head, e) = (ch / d, ch % d);
                    idx.push((((win * heads + head) * m * m + pos) * d + e) as u32);
                }
            }
        }
    }
    GatherMap::new(idx, n * nw * heads * m * m * d, vec![n, h, w, channels])
}

/// Zero-pads `[n, h, w, c]` at the bottom/right to `hp × wp`.
pub fn pad_index(n: usize, h: usize, w: usize, c: usize, hp: usize, wp: usize) -> Result<GatherMap> {
    if hp < h || wp < w {
        return Err(MptError::shape("pad", format!("{}x{} to {}x{}", h, w, hp, wp)));
    }
    let mut idx = Vec::with_capacity(n * hp * wp * c);
    for b in 0..n {
        for y in 0..hp {
            for x in 0..wp {
                if y < h && x < w {
                    let base = ((b * h + y) * w + x) * c;
                    idx.extend((base..base + c).map(|v| v as u32));
                } else {
                    idx.extend(std::iter::repeat_n(NONE, c));
                }
            }
        }
    }
    GatherMap::new(idx, n * h * w * c, vec![n, hp, wp, c])
}

/// Edge-replicating pad of `[n, h, w, c]` to `hp × wp`.
pub fn replicate_pad_index(n: usize, h: usize, w: usize, c: usize, hp: usize, wp: usize) -> Result<GatherMap> {
    if hp < h || wp < w || h == 0 || w == 0 {
        return Err(MptError::shape("pad", format!("{}x{} to {}x{}", h, w, hp, wp)));
    }
    let mut idx = Vec::with_capacity(n * hp * wp * c);
    for b in 0..n {
        for y in 0..hp {
            for x in 0..wp {
                let base = ((b * h + y.min(h - 1)) * w + x.min(w - 1)) * c;
                idx.extend((base..base + c).map(|v| v as u32));
            }
        }
    }
    GatherMap::new(idx, n * h * w * c, vec![n, hp, wp, c])
}

/// Keeps the top-left `h × w` of `[n, hp, wp, c]`.
pub fn crop_index(n: usize, hp: usize, wp: usize, c: usize, h: usize, w: usize) -> Result<GatherMap> {
    if hp < h || wp < w {
        return Err(MptError::shape("crop", format!("{}x{} from {}x{}", h, w, hp, wp)));
    }
    let mut idx = Vec::with_capacity(n * h * w * c);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let base = ((b * hp + y) * wp + x) * c;
                idx.extend((base..base + c).map(|v| v as u32));
            }
        }
    }
    GatherMap::new(idx, n * hp * wp * c, vec![n, h, w, c])
}

fn as_batched<T: Element>(x: &Tensor<T>) -> Result<(usize, usize, usize, usize, bool)> {
    let (n, h, w, c) = x.nhwc()?;
    Ok((n, h, w, c, x.ndim() == 4))
}

/// Windows of `x` (HWC or NHWC) as `[n·windows, m², c]`, raster order throughout.
pub fn window_partition<T: Element>(x: &Tensor<T>, m: usize) -> Result<(Tensor<T>, WindowGrid)> {
    let (n, h, w, c, _) = as_batched(x)?;
    let grid = WindowGrid::new(h, w, m)?;
    let map = window_gather_index(n, &grid, grid.rows, grid.cols, 1, c, 1, 0)?;
    let out = gather(x, &map.index, vec![n * grid.count(), m * m, c])?;
    Ok((out, grid))
}

/// Inverse of [`window_partition`] including the crop; `batched` selects NHWC output.
pub fn window_merge<T: Element>(windows: &Tensor<T>, grid: &WindowGrid, batched: bool) -> Result<Tensor<T>> {
    let [nw, mm, c] = *windows.shape() else {
        return Err(MptError::shape("window_merge", format!("expected [n, m², c], got {:?}", windows.shape())));
    };
    if mm != grid.m * grid.m || grid.count() == 0 || nw % grid.count() != 0 {
        return Err(MptError::shape("window_merge", format!("{:?} does not fit grid {:?}", windows.shape(), grid)));
    }
    let n = nw / grid.count();
    if !batched && n != 1 {
        return Err(MptError::shape("window_merge", "unbatched output needs one image"));
    }
    let map = window_merge_index(n, grid, c, 1, 0)?;
    let (h, w) = grid.source;
    let shape = if batched { vec![n, h, w, c] } else { vec![h, w, c] };
    gather(windows, &map.index, shape)
}

/// Toroidal roll by `(−offset, −offset)`; `inverse` rolls back.
pub fn cyclic_shift<T: Element>(x: &Tensor<T>, offset: usize, inverse: bool) -> Result<Tensor<T>> {
    let (n, h, w, c, _) = as_batched(x)?;
    if h == 0 || w == 0 {
        return Ok(x.clone());
    }
    let mut idx = Vec::with_capacity(x.numel());
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let (sy, sx) = if inverse {
                    ((y + h - offset % h) % h, (xx + w - offset % w) % w)
                } else {
                    ((y + offset) % h, (xx + offset) % w)
                };
                let base = ((b * h + sy) * w + sx) * c;
                idx.extend((base..base + c).map(|v| v as u32));
            }
        }
    }
    gather(x, &idx, x.shape().to_vec())
}

/// For each query window (raster order) the key window it attends to.
pub fn cross_scale_index(grid_q: &WindowGrid, grid_k: &WindowGrid, s: ScaleSpec) -> Result<Vec<usize>> {
    let r = s.ratio();
    if grid_q.m != grid_k.m || grid_q.rows != grid_k.rows * r || grid_q.cols != grid_k.cols * r {
        return Err(MptError::shape(
            "cross_scale_index",
            format!("query grid {}x{} vs key grid {}x{} at scale {}", grid_q.rows, grid_q.cols, grid_k.rows, grid_k.cols, s),
        ));
    }
    Ok((0..grid_q.rows)
        .flat_map(|qr| (0..grid_q.cols).map(move |qc| (qr / r) * grid_k.cols + qc / r))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |i| i as f64)
    }

    #[test]
    fn single_window_is_flatten() {
        let x = ramp(&[4, 4, 2]);
        let (w, g) = window_partition(&x, 4).unwrap();
        assert_eq!(g.count(), 1);
        assert_eq!(w.data(), x.data());
    }

    #[test]
    fn first_window_pixels() {
        let x = ramp(&[4, 4, 1]);
        let (w, g) = window_partition(&x, 2).unwrap();
        assert_eq!(g.count(), 4);
        assert_eq!(&w.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
    }

    #[test]
    fn merge_inverts_partition_with_padding() {
        for (h, w) in [(4, 4), (5, 7), (9, 3)] {
            let x = ramp(&[h, w, 3]);
            let (win, g) = window_partition(&x, 4).unwrap();
            assert_eq!(window_merge(&win, &g, false).unwrap(), x);
        }
    }

    #[test]
    fn swapped_windows_change_the_map() {
        let x = ramp(&[4, 4, 1]);
        let (win, g) = window_partition(&x, 2).unwrap();
        let mut swapped = win.clone();
        let d = swapped.data_mut();
        for i in 0..4 {
            d.swap(i, 4 + i);
        }
        assert_ne!(window_merge(&swapped, &g, false).unwrap(), x);
    }

    #[test]
    fn shift_examples() {
        let x = Tensor::<f64>::from_f64([2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(cyclic_shift(&x, 0, false).unwrap(), x);
        assert_eq!(cyclic_shift(&x, 1, false).unwrap().data(), &[4.0, 3.0, 2.0, 1.0]);
        let y = ramp(&[5, 6, 2]);
        assert_eq!(cyclic_shift(&cyclic_shift(&y, 2, false).unwrap(), 2, true).unwrap(), y);
    }

    #[test]
    fn cross_scale_examples() {
        let g8 = WindowGrid::new(8, 8, 4).unwrap();
        let g4 = WindowGrid::new(4, 4, 4).unwrap();
        assert_eq!(cross_scale_index(&g8, &g4, ScaleSpec::from_ratio(2).unwrap()).unwrap(), vec![0; 4]);
        let g16 = WindowGrid::new(16, 16, 4).unwrap();
        assert_eq!(cross_scale_index(&g16, &g4, ScaleSpec::from_ratio(4).unwrap()).unwrap(), vec![0; 16]);
        let id = cross_scale_index(&g16, &g16, ScaleSpec::one()).unwrap();
        assert_eq!(id, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn scale_parsing_and_schedule() {
        assert_eq!("1/8".parse::<ScaleSpec>().unwrap().ratio(), 8);
        assert_eq!("0.5".parse::<ScaleSpec>().unwrap().ratio(), 2);
        assert_eq!("1".parse::<ScaleSpec>().unwrap(), ScaleSpec::one());
        assert!("1/3".parse::<ScaleSpec>().is_err());
        let s = |r| ScaleSpec::from_ratio(r).unwrap();
        assert!(validate_schedule(&[s(8), s(4), s(1)]).is_ok());
        assert!(validate_schedule(&[s(1), s(2)]).is_err());
    }

    #[test]
    fn replicate_and_crop() {
        let x = ramp(&[1, 2, 2, 1]);
        let p = replicate_pad_index(1, 2, 2, 1, 3, 3).unwrap();
        let y = gather(&x, &p.index, p.out_shape.clone()).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 1.0, 2.0, 3.0, 3.0, 2.0, 3.0, 3.0]);
        let c = crop_index(1, 3, 3, 1, 2, 2).unwrap();
        assert_eq!(gather(&y, &c.index, c.out_shape.clone()).unwrap(), x);
    }
}
