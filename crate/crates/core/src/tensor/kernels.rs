//! Slice-level numeric kernels shared by the pure tensor ops and the tape.
//!
//! Every reduction runs in a fixed order so repeated calls are bit-identical.

use super::Element;

const LANES: usize = 8;

/// Sum with eight interleaved partial accumulators, combined pairwise.
pub fn sum<T: Element>(xs: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = xs.chunks_exact(LANES);
    let rem = chunks.remainder();
    for c in chunks {
        for l in 0..LANES {
            acc[l] += c[l];
        }
    }
    let mut tail = T::zero();
    for &v in rem {
        tail += v;
    }
    combine(&acc) + tail
}

pub fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    combine(&acc) + tail
}

#[inline]
fn combine<T: Element>(acc: &[T; LANES]) -> T {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

#[inline]
fn axpy<T: Element>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `c += op(a) · op(b)` for one matrix pair.
///
/// `a` is `[m, k]` (or `[k, m]` when `ta`), `b` is `[k, n]` (or `[n, k]` when `tb`),
/// `c` is `[m, n]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
) {
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let crow = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = a[i * k + p];
                    if av != T::zero() {
                        axpy(av, &b[p * n..(p + 1) * n], crow);
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
                }
            }
        }
        (true, false) => {
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let av = a[p * m + i];
                    if av != T::zero() {
                        axpy(av, brow, &mut c[i * n..(i + 1) * n]);
                    }
                }
            }
        }
        (true, true) => {
            let mut bt = vec![T::zero(); k * n];
            for j in 0..n {
                for p in 0..k {
                    bt[p * n + j] = b[j * k + p];
                }
            }
            gemm(m, n, k, a, true, &bt, false, c);
        }
    }
}

/// Geometry of a 2-D NHWC convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.kh) / self.stride + 1,
            (self.w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.cin && self.cin == self.cout
    }

    /// Multiply-accumulate count of one forward pass.
    pub fn macs(&self) -> u64 {
        let (ho, wo) = self.out_hw();
        (self.n * ho * wo * self.kh * self.kw * (self.cin / self.groups) * self.cout) as u64
    }

    /// Iterates valid `(ky, kx, iy, ix)` taps for output position `(oy, ox)`.
    #[inline]
    fn taps(&self, oy: usize, ox: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        for ky in 0..self.kh {
            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
            if iy < 0 || iy >= self.h as isize {
                continue;
            }
            for kx in 0..self.kw {
                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                if ix < 0 || ix >= self.w as isize {
                    continue;
                }
                f(ky, kx, iy as usize, ix as usize);
            }
        }
    }
}

/// Weight layout is `[kh, kw, cin / groups, cout]`.
pub fn conv2d_forward<T: Element>(g: &ConvGeom, x: &[T], wt: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let mut out = vec![T::zero(); g.n * ho * wo * g.cout];
    let cin_g = g.cin / g.groups;
    let cout_g = g.cout / g.groups;
    for b in 0..g.n {
        for oy in 0..ho {
            for ox in 0..wo {
                let obase = ((b * ho + oy) * wo + ox) * g.cout;
                let orow = &mut out[obase..obase + g.cout];
                if let Some(bias) = bias {
                    orow.copy_from_slice(bias);
                }
                g.taps(oy, ox, |ky, kx, iy, ix| {
                    let xrow = &x[((b * g.h + iy) * g.w + ix) * g.cin..][..g.cin];
                    let wbase = (ky * g.kw + kx) * cin_g * g.cout;
                    if g.is_depthwise() {
                        let wrow = &wt[wbase..wbase + g.cout];
                        for ((o, &xv), &wv) in orow.iter_mut().zip(xrow).zip(wrow) {
                            *o += xv * wv;
                        }
                    } else {
                        for grp in 0..g.groups {
                            for ci in 0..cin_g {
                                let xv = xrow[grp * cin_g + ci];
                                let wrow = &wt[wbase + ci * g.cout + grp * cout_g..][..cout_g];
                                axpy(xv, wrow, &mut orow[grp * cout_g..(grp + 1) * cout_g]);
                            }
                        }
                    }
                });
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)`; each is computed only when requested.
pub fn conv2d_backward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    wt: &[T],
    dy: &[T],
    need: [bool; 3],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (ho, wo) = g.out_hw();
    let cin_g = g.cin / g.groups;
    let cout_g = g.cout / g.groups;
    let mut dx = need[0].then(|| vec![T::zero(); x.len()]);
    let mut dw = need[1].then(|| vec![T::zero(); wt.len()]);
    let db = need[2].then(|| {
        let mut db = vec![T::zero(); g.cout];
        for row in dy.chunks_exact(g.cout) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        db
    });
    if dx.is_none() && dw.is_none() {
        return (dx, dw, db);
    }
    let depthwise = g.is_depthwise();
    for b in 0..g.n {
        for oy in 0..ho {
            for ox in 0..wo {
                let drow = &dy[((b * ho + oy) * wo + ox) * g.cout..][..g.cout];
                g.taps(oy, ox, |ky, kx, iy, ix| {
                    let xbase = ((b * g.h + iy) * g.w + ix) * g.cin;
                    let wbase = (ky * g.kw + kx) * cin_g * g.cout;
                    if depthwise {
                        if let Some(dx) = dx.as_mut() {
                            let dxrow = &mut dx[xbase..xbase + g.cin];
                            let wrow = &wt[wbase..wbase + g.cout];
                            for ((d, &dv), &wv) in dxrow.iter_mut().zip(drow).zip(wrow) {
                                *d += dv * wv;
                            }
                        }
                        if let Some(dw) = dw.as_mut() {
                            let dwrow = &mut dw[wbase..wbase + g.cout];
                            let xrow = &x[xbase..xbase + g.cin];
                            for ((d, &dv), &xv) in dwrow.iter_mut().zip(drow).zip(xrow) {
                                *d += dv * xv;
                            }
                        }
                    } else {
                        for grp in 0..g.groups {
                            let dseg = &drow[grp * cout_g..(grp + 1) * cout_g];
                            for ci in 0..cin_g {
                                let xi = xbase + grp * cin_g + ci;
                                let woff = wbase + ci * g.cout + grp * cout_g;
                                if let Some(dx) = dx.as_mut() {
                                    dx[xi] += dot(dseg, &wt[woff..woff + cout_g]);
                                }
                                if let Some(dw) = dw.as_mut() {
                                    axpy(x[xi], dseg, &mut dw[woff..woff + cout_g]);
                                }
                            }
                        }
                    }
                });
            }
        }
    }
    (dx, dw, db)
}

/// Pooling geometry over NHWC input without padding.
#[derive(Clone, Copy, Debug)]
pub struct PoolGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub window: usize,
    pub stride: usize,
}

impl PoolGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h - self.window) / self.stride + 1,
            (self.w - self.window) / self.stride + 1,
        )
    }
}

pub fn avg_pool_forward<T: Element>(g: &PoolGeom, x: &[T]) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let mut out = vec![T::zero(); g.n * ho * wo * g.c];
    let inv = T::one() / T::from_usize_c(g.window * g.window);
    for b in 0..g.n {
        for oy in 0..ho {
            for ox in 0..wo {
                let orow = &mut out[((b * ho + oy) * wo + ox) * g.c..][..g.c];
                for ky in 0..g.window {
                    for kx in 0..g.window {
                        let (iy, ix) = (oy * g.stride + ky, ox * g.stride + kx);
                        let xrow = &x[((b * g.h + iy) * g.w + ix) * g.c..][..g.c];
                        for (o, &v) in orow.iter_mut().zip(xrow) {
                            *o += v;
                        }
                    }
                }
                for o in orow.iter_mut() {
                    *o *= inv;
                }
            }
        }
    }
    out
}

pub fn avg_pool_backward<T: Element>(g: &PoolGeom, dy: &[T]) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let mut dx = vec![T::zero(); g.n * g.h * g.w * g.c];
    let inv = T::one() / T::from_usize_c(g.window * g.window);
    for b in 0..g.n {
        for oy in 0..ho {
            for ox in 0..wo {
                let drow = &dy[((b * ho + oy) * wo + ox) * g.c..][..g.c];
                for ky in 0..g.window {
                    for kx in 0..g.window {
                        let (iy, ix) = (oy * g.stride + ky, ox * g.stride + kx);
                        let dxrow = &mut dx[((b * g.h + iy) * g.w + ix) * g.c..][..g.c];
                        for (d, &v) in dxrow.iter_mut().zip(drow) {
                            *d += v * inv;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Max pooling; also returns the flat source index of each output (first max wins).
pub fn max_pool_forward<T: Element>(g: &PoolGeom, x: &[T]) -> (Vec<T>, Vec<u32>) {
    let (ho, wo) = g.out_hw();
    let len = g.n * ho * wo * g.c;
    let mut out = vec![T::neg_infinity(); len];
    let mut arg = vec![0u32; len];
    for b in 0..g.n {
        for oy in 0..ho {
            for ox in 0..wo {
                let obase = ((b * ho + oy) * wo + ox) * g.c;
                for ky in 0..g.window {
                    for kx in 0..g.window {
                        let (iy, ix) = (oy * g.stride + ky, ox * g.stride + kx);
                        let xbase = ((b * g.h + iy) * g.w + ix) * g.c;
                        for ch in 0..g.c {
                            let v = x[xbase + ch];
                            if v > out[obase + ch] {
                                out[obase + ch] = v;
                                arg[obase + ch] = (xbase + ch) as u32;
                            }
                        }
                    }
                }
            }
        }
    }
    (out, arg)
}

/// Normalizes each row of length `c`; returns `(y, xhat, rstd)`.
pub fn layer_norm_forward<T: Element>(
    x: &[T],
    c: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / c;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let cf = T::from_usize_c(c);
    for r in 0..rows {
        let xr = &x[r * c..(r + 1) * c];
        let mean = sum(xr) / cf;
        let mut var = T::zero();
        for &v in xr {
            let d = v - mean;
            var += d * d;
        }
        var /= cf;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for i in 0..c {
            let xh = (xr[i] - mean) * rs;
            xhat[r * c + i] = xh;
            y[r * c + i] = xh * gamma[i] + beta[i];
        }
    }
    (y, xhat, rstd)
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Element>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gamma: &[T],
    c: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = dy.len() / c;
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let cf = T::from_usize_c(c);
    let mut dxhat = vec![T::zero(); c];
    for r in 0..rows {
        let dyr = &dy[r * c..(r + 1) * c];
        let xhr = &xhat[r * c..(r + 1) * c];
        for i in 0..c {
            dgamma[i] += dyr[i] * xhr[i];
            dbeta[i] += dyr[i];
            dxhat[i] = dyr[i] * gamma[i];
        }
        let mean_d = sum(&dxhat) / cf;
        let mean_dx = dot(&dxhat, xhr) / cf;
        for i in 0..c {
            dx[r * c + i] = rstd[r] * (dxhat[i] - mean_d - xhr[i] * mean_dx);
        }
    }
    (dx, dgamma, dbeta)
}

/// Softmax over the middle axis of an `[outer, len, inner]` view.
pub fn softmax_forward<T: Element>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    if inner == 1 {
        for o in 0..outer {
            let xr = &x[o * len..(o + 1) * len];
            let yr = &mut y[o * len..(o + 1) * len];
            let mx = xr.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            for (yv, &xv) in yr.iter_mut().zip(xr) {
                *yv = (xv - mx).exp();
            }
            let s = T::one() / sum(yr);
            for yv in yr.iter_mut() {
                *yv *= s;
            }
        }
        return y;
    }
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mut mx = T::neg_infinity();
            for j in 0..len {
                mx = mx.max(x[at(j)]);
            }
            let mut s = T::zero();
            for j in 0..len {
                let e = (x[at(j)] - mx).exp();
                y[at(j)] = e;
                s += e;
            }
            let inv = T::one() / s;
            for j in 0..len {
                y[at(j)] *= inv;
            }
        }
    }
    y
}

pub fn softmax_backward<T: Element>(
    y: &[T],
    dy: &[T],
    outer: usize,
    len: usize,
    inner: usize,
) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    if inner == 1 {
        for o in 0..outer {
            let r = o * len..(o + 1) * len;
            let s = dot(&y[r.clone()], &dy[r.clone()]);
            for j in r {
                dx[j] = y[j] * (dy[j] - s);
            }
        }
        return dx;
    }
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mut s = T::zero();
            for j in 0..len {
                s += y[at(j)] * dy[at(j)];
            }
            for j in 0..len {
                dx[at(j)] = y[at(j)] * (dy[at(j)] - s);
            }
        }
    }
    dx
}

#[inline]
fn std_normal_cdf<T: Element>(x: T) -> T {
    let half = T::from_f64c(0.5);
    half * (T::one() + (x * T::from_f64c(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Exact GELU, `x · Φ(x)`.
pub fn gelu<T: Element>(x: T) -> T {
    x * std_normal_cdf(x)
}

pub fn gelu_grad<T: Element>(x: T) -> T {
    let pdf = (-(x * x) * T::from_f64c(0.5)).exp() * T::from_f64c(0.398_942_280_401_432_7);
    std_normal_cdf(x) + x * pdf
}
