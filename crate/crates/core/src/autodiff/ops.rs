use std::rc::Rc;

use super::Var;
use crate::error::{MptError, Result};
use crate::tensor::kernels::{self, PoolGeom};
use crate::tensor::ops::{self as tops, ShuffleDirection, Taps, NONE};
use crate::tensor::{Element, Tensor};

/// A reusable gather: `out[i] = src[index[i]]` (zero at [`NONE`]).
#[derive(Clone, Debug)]
pub struct GatherMap {
    pub index: Rc<Vec<u32>>,
    pub src_len: usize,
    pub out_shape: Vec<usize>,
}

impl GatherMap {
    pub fn new(index: Vec<u32>, src_len: usize, out_shape: Vec<usize>) -> Result<Self> {
        if out_shape.iter().product::<usize>() != index.len() {
            return Err(MptError::shape("gather", "index length vs output shape"));
        }
        if index.iter().any(|&i| i != NONE && i as usize >= src_len) {
            return Err(MptError::shape("gather", "index out of range"));
        }
        Ok(GatherMap {
            index: Rc::new(index),
            src_len,
            out_shape,
        })
    }
}

fn same_shape<T: Element>(op: &'static str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(MptError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn tensor<T: Element>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape.to_vec(), data).expect("kernel output matches shape")
}

impl<'t, T: Element> Var<'t, T> {
    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("add", self, other)?;
        let out = self.value.zip_map(&other.value, |a, b| a + b)?;
        Ok(self
            .tape
            .record(out, &[self, other], |g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("sub", self, other)?;
        let out = self.value.zip_map(&other.value, |a, b| a - b)?;
        Ok(self
            .tape
            .record(out, &[self, other], |g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("mul", self, other)?;
        let out = self.value.zip_map(&other.value, |a, b| a * b)?;
        let (a, b) = (Rc::clone(&self.value), Rc::clone(&other.value));
        Ok(self.tape.record(out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| g.zip_map(&b, |x, y| x * y).expect("shape")),
                need[1].then(|| g.zip_map(&a, |x, y| x * y).expect("shape")),
            ]
        }))
    }

    pub fn div(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("div", self, other)?;
        let out = self.value.zip_map(&other.value, |a, b| a / b)?;
        let (a, b) = (Rc::clone(&self.value), Rc::clone(&other.value));
        Ok(self.tape.record(out, &[self, other], move |g, need| {
            let da = need[0].then(|| g.zip_map(&b, |x, y| x / y).expect("shape"));
            let db = need[1].then(|| {
                let data = g
                    .data()
                    .iter()
                    .zip(a.data())
                    .zip(b.data())
                    .map(|((&gv, &av), &bv)| -gv * av / (bv * bv))
                    .collect();
                tensor(g.shape(), data)
            });
            vec![da, db]
        }))
    }

    pub fn scale(&self, c: f64) -> Var<'t, T> {
        let c = T::from_f64c(c);
        let out = self.value.map(|v| v * c);
        self.tape
            .record(out, &[self], move |g, _| vec![Some(g.map(|v| v * c))])
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t, T> {
        let c = T::from_f64c(c);
        let out = self.value.map(|v| v + c);
        self.tape.record(out, &[self], |g, _| vec![Some(g.clone())])
    }

    /// Adds `b` repeated over the leading axes: `self` is viewed as `[outer, b.numel()]`.
    pub fn add_bcast(&self, b: &Var<'t, T>) -> Result<Var<'t, T>> {
        let inner = b.value.numel();
        if inner == 0 || !self.value.numel().is_multiple_of(inner) {
            return Err(MptError::shape(
                "add_bcast",
                format!("{:?} + {:?}", self.shape(), b.shape()),
            ));
        }
        let mut out = self.to_tensor();
        for row in out.data_mut().chunks_exact_mut(inner) {
            for (o, &v) in row.iter_mut().zip(b.value.data()) {
                *o += v;
            }
        }
        let bshape = b.shape().to_vec();
        Ok(self.tape.record(out, &[self, b], move |g, need| {
            let db = need[1].then(|| {
                let mut acc = vec![T::zero(); inner];
                for row in g.data().chunks_exact(inner) {
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                tensor(&bshape, acc)
            });
            vec![Some(g.clone()), db]
        }))
    }

    /// Scales groups of a `[outer, groups, inner]` view by `s[groups]`.
    pub fn mul_groups(&self, s: &Var<'t, T>, inner: usize) -> Result<Var<'t, T>> {
        let groups = s.value.numel();
        if groups == 0 || inner == 0 || !self.value.numel().is_multiple_of(groups * inner) {
            return Err(MptError::shape(
                "mul_groups",
                format!("{:?} by {:?} with inner {}", self.shape(), s.shape(), inner),
            ));
        }
        let mut out = self.to_tensor();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= s.value.data()[(i / inner) % groups];
        }
        let (x, sv) = (Rc::clone(&self.value), Rc::clone(&s.value));
        let sshape = s.shape().to_vec();
        Ok(self.tape.record(out, &[self, s], move |g, need| {
            let dx = need[0].then(|| {
                let data = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &gv)| gv * sv.data()[(i / inner) % groups])
                    .collect();
                tensor(g.shape(), data)
            });
            let ds = need[1].then(|| {
                let mut acc = vec![T::zero(); groups];
                for (i, (&gv, &xv)) in g.data().iter().zip(x.data()).enumerate() {
                    acc[(i / inner) % groups] += gv * xv;
                }
                tensor(&sshape, acc)
            });
            vec![dx, ds]
        }))
    }

    pub fn sum(&self) -> Var<'t, T> {
        let out = Tensor::scalar(self.value.sum());
        let shape = self.shape().to_vec();
        self.tape.record(out, &[self], move |g, _| {
            vec![Some(Tensor::full(shape.clone(), g.item()))]
        })
    }

    pub fn mean(&self) -> Var<'t, T> {
        let n = self.value.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Mean absolute difference over all elements, as a scalar.
    pub fn mean_abs_diff(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let per = self.reshape(vec![1, self.value.numel()])?;
        let oth = other.reshape(vec![1, other.value.numel()])?;
        per.mean_abs_diff_per_sample(&oth)?.reshape(vec![])
    }

    /// Mean absolute difference over all but the leading axis; shape `[n]`.
    pub fn mean_abs_diff_per_sample(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("mean_abs_diff", self, other)?;
        let n = *self.shape().first().ok_or_else(|| MptError::shape("mean_abs_diff", "rank 0"))?;
        let per = self.value.numel() / n.max(1);
        let inv = T::one() / T::from_usize_c(per.max(1));
        let diffs: Vec<T> = self
            .value
            .data()
            .iter()
            .zip(other.value.data())
            .map(|(&a, &b)| a - b)
            .collect();
        let out: Vec<T> = diffs
            .chunks(per.max(1))
            .map(|c| c.iter().map(|v| v.abs()).sum::<T>() * inv)
            .collect();
        let shape = self.shape().to_vec();
        let diffs = Rc::new(diffs);
        Ok(self.tape.record(tensor(&[n], out), &[self, other], move |g, need| {
            let mk = |sign: T| {
                let data = diffs
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| {
                        let s = if d > T::zero() {
                            T::one()
                        } else if d < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        sign * s * g.data()[i / per] * inv
                    })
                    .collect();
                tensor(&shape, data)
            };
            vec![need[0].then(|| mk(T::one())), need[1].then(|| mk(-T::one()))]
        }))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t, T>> {
        let out = self.to_tensor().reshape(shape)?;
        let orig = self.shape().to_vec();
        Ok(self.tape.record(out, &[self], move |g, _| {
            vec![Some(g.clone().reshape(orig.clone()).expect("same numel"))]
        }))
    }

    /// Batched `op(self) · op(other)` over the trailing two axes.
    pub fn matmul_t(&self, other: &Var<'t, T>, ta: bool, tb: bool) -> Result<Var<'t, T>> {
        let geom = tops::matmul_geom(self.shape(), other.shape(), ta, tb)?;
        let out = tops::matmul_forward(&geom, self.value.data(), ta, other.value.data(), tb);
        self.tape
            .count_matmul((geom.batch * geom.m * geom.n * geom.k) as u64);
        let (a, b) = (Rc::clone(&self.value), Rc::clone(&other.value));
        let out = tensor(&geom.out_shape, out);
        Ok(self.tape.record(out, &[self, other], move |g, need| {
            let (m, n, k) = (geom.m, geom.n, geom.k);
            let gd = g.data();
            let da = need[0].then(|| {
                let mut da = vec![T::zero(); a.numel()];
                for i in 0..geom.batch {
                    let ai = if geom.batch_a == 1 { 0 } else { i };
                    let bi = if geom.batch_b == 1 { 0 } else { i };
                    let gi = &gd[i * m * n..(i + 1) * m * n];
                    let bs = &b.data()[bi * k * n..(bi + 1) * k * n];
                    let dst = &mut da[ai * m * k..(ai + 1) * m * k];
                    if ta {
                        // A stored [k, m]: dA = op(B) · Gᵀ
                        kernels::gemm(k, m, n, bs, tb, gi, true, dst);
                    } else {
                        // dA = G · op(B)ᵀ
                        kernels::gemm(m, k, n, gi, false, bs, !tb, dst);
                    }
                }
                tensor(a.shape(), da)
            });
            let db = need[1].then(|| {
                let mut db = vec![T::zero(); b.numel()];
                for i in 0..geom.batch {
                    let ai = if geom.batch_a == 1 { 0 } else { i };
                    let bi = if geom.batch_b == 1 { 0 } else { i };
                    let gi = &gd[i * m * n..(i + 1) * m * n];
                    let as_ = &a.data()[ai * m * k..(ai + 1) * m * k];
                    let dst = &mut db[bi * k * n..(bi + 1) * k * n];
                    if tb {
                        // B stored [n, k]: dB = Gᵀ · op(A)
                        kernels::gemm(n, k, m, gi, true, as_, ta, dst);
                    } else {
                        // dB = op(A)ᵀ · G
                        kernels::gemm(k, n, m, as_, !ta, gi, false, dst);
                    }
                }
                tensor(b.shape(), db)
            });
            vec![da, db]
        }))
    }

    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_t(other, false, false)
    }

    /// Affine map along the last axis, `w` of shape `[cin, cout]`.
    pub fn linear(&self, w: &Var<'t, T>, b: Option<&Var<'t, T>>) -> Result<Var<'t, T>> {
        let (rows, cin, cout) =
            tops::linear_dims(self.shape(), w.shape(), b.map(|b| b.shape()))?;
        let out = tops::linear_forward(
            self.value.data(),
            w.value.data(),
            b.map(|b| b.value.data()),
            rows,
            cin,
            cout,
        );
        let mut shape = self.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = cout;
        let (x, wv) = (Rc::clone(&self.value), Rc::clone(&w.value));
        let mut inputs = vec![self, w];
        if let Some(b) = b {
            inputs.push(b);
        }
        Ok(self.tape.record(tensor(&shape, out), &inputs, move |g, need| {
            let gd = g.data();
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); rows * cin];
                kernels::gemm(rows, cin, cout, gd, false, wv.data(), true, &mut dx);
                tensor(x.shape(), dx)
            });
            let dw = need[1].then(|| {
                let mut dw = vec![T::zero(); cin * cout];
                kernels::gemm(cin, cout, rows, x.data(), true, gd, false, &mut dw);
                tensor(&[cin, cout], dw)
            });
            let mut grads = vec![dx, dw];
            if need.len() > 2 {
                grads.push(need[2].then(|| {
                    let mut db = vec![T::zero(); cout];
                    for row in gd.chunks_exact(cout) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    tensor(&[cout], db)
                }));
            }
            grads
        }))
    }

    /// NHWC convolution with weights `[kh, kw, cin / groups, cout]`.
    pub fn conv2d(
        &self,
        w: &Var<'t, T>,
        b: Option<&Var<'t, T>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var<'t, T>> {
        let geom = tops::conv_geom(
            self.shape(),
            w.shape(),
            b.map(|b| b.shape()),
            stride,
            padding,
            groups,
        )?;
        let (ho, wo) = geom.out_hw();
        let out = kernels::conv2d_forward(
            &geom,
            self.value.data(),
            w.value.data(),
            b.map(|b| b.value.data()),
        );
        let shape = tops::spatial_shape(self.shape(), geom.n, ho, wo, geom.cout);
        let (x, wv) = (Rc::clone(&self.value), Rc::clone(&w.value));
        let mut inputs = vec![self, w];
        if let Some(b) = b {
            inputs.push(b);
        }
        Ok(self.tape.record(tensor(&shape, out), &inputs, move |g, need| {
            let want_b = need.len() > 2 && need[2];
            let (dx, dw, db) =
                kernels::conv2d_backward(&geom, x.data(), wv.data(), g.data(), [need[0], need[1], want_b]);
            let mut grads = vec![
                dx.map(|d| tensor(x.shape(), d)),
                dw.map(|d| tensor(wv.shape(), d)),
            ];
            if need.len() > 2 {
                grads.push(db.map(|d| tensor(&[geom.cout], d)));
            }
            grads
        }))
    }

    pub fn avg_pool2d(&self, window: usize, stride: usize) -> Result<Var<'t, T>> {
        let geom = tops::pool_geom(self.shape(), window, stride, true)?;
        let (ho, wo) = geom.out_hw();
        let out = kernels::avg_pool_forward(&geom, self.value.data());
        let shape = tops::spatial_shape(self.shape(), geom.n, ho, wo, geom.c);
        let xshape = self.shape().to_vec();
        Ok(self.tape.record(tensor(&shape, out), &[self], move |g, _| {
            vec![Some(tensor(&xshape, kernels::avg_pool_backward(&geom, g.data())))]
        }))
    }

    pub fn max_pool2d(&self, window: usize, stride: usize) -> Result<Var<'t, T>> {
        let geom: PoolGeom = tops::pool_geom(self.shape(), window, stride, true)?;
        let (ho, wo) = geom.out_hw();
        let (out, arg) = kernels::max_pool_forward(&geom, self.value.data());
        let shape = tops::spatial_shape(self.shape(), geom.n, ho, wo, geom.c);
        let xshape = self.shape().to_vec();
        let len = self.value.numel();
        Ok(self.tape.record(tensor(&shape, out), &[self], move |g, _| {
            let mut dx = vec![T::zero(); len];
            for (&a, &gv) in arg.iter().zip(g.data()) {
                dx[a as usize] += gv;
            }
            vec![Some(tensor(&xshape, dx))]
        }))
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let c = tops::check_norm_params(self.shape(), gamma.shape(), beta.shape())?;
        let (y, xhat, rstd) = kernels::layer_norm_forward(
            self.value.data(),
            c,
            gamma.value.data(),
            beta.value.data(),
            T::from_f64c(eps),
        );
        let gv = Rc::clone(&gamma.value);
        let shape = self.shape().to_vec();
        Ok(self.tape.record(tensor(&shape, y), &[self, gamma, beta], move |g, _| {
            let (dx, dg, db) = kernels::layer_norm_backward(g.data(), &xhat, &rstd, gv.data(), c);
            vec![
                Some(tensor(&shape, dx)),
                Some(tensor(&[c], dg)),
                Some(tensor(&[c], db)),
            ]
        }))
    }

    pub fn gelu(&self) -> Var<'t, T> {
        let out = self.value.map(kernels::gelu);
        let x = Rc::clone(&self.value);
        self.tape.record(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |gv, xv| gv * kernels::gelu_grad(xv)).expect("shape"))]
        })
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        let (outer, len, inner) = tops::axis_split(self.shape(), axis)?;
        let y = Rc::new(tensor(
            self.shape(),
            kernels::softmax_forward(self.value.data(), outer, len, inner),
        ));
        let saved = Rc::clone(&y);
        Ok(self.tape.record((*y).clone(), &[self], move |g, _| {
            let dx = kernels::softmax_backward(saved.data(), g.data(), outer, len, inner);
            vec![Some(tensor(g.shape(), dx))]
        }))
    }

    pub fn softmax_last(&self) -> Result<Var<'t, T>> {
        self.softmax(self.shape().len().saturating_sub(1))
    }

    /// `x / sqrt(Σx² + eps)` along the last axis.
    pub fn l2_normalize_last(&self, eps: f64) -> Result<Var<'t, T>> {
        let c = *self.shape().last().ok_or_else(|| MptError::shape("l2_normalize", "rank 0"))?;
        if c == 0 {
            return Err(MptError::shape("l2_normalize", "empty axis"));
        }
        let eps = T::from_f64c(eps);
        let mut y = self.to_tensor();
        let mut norms = Vec::with_capacity(y.numel() / c);
        for row in y.data_mut().chunks_exact_mut(c) {
            let n = (kernels::dot(row, row) + eps).sqrt();
            norms.push(n);
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        let y = Rc::new(y);
        let saved = Rc::clone(&y);
        Ok(self.tape.record((*y).clone(), &[self], move |g, _| {
            let mut dx = g.clone();
            for ((drow, yrow), &n) in dx
                .data_mut()
                .chunks_exact_mut(c)
                .zip(saved.data().chunks_exact(c))
                .zip(&norms)
            {
                let proj = kernels::dot(drow, yrow);
                for (d, &yv) in drow.iter_mut().zip(yrow) {
                    *d = (*d - yv * proj) / n;
                }
            }
            vec![Some(dx)]
        }))
    }

    pub fn gather(&self, map: &GatherMap) -> Result<Var<'t, T>> {
        if map.src_len != self.value.numel() {
            return Err(MptError::shape(
                "gather",
                format!("map built for {} elements, input has {}", map.src_len, self.value.numel()),
            ));
        }
        let out = tops::gather(&self.value, &map.index, map.out_shape.clone())?;
        let index = Rc::clone(&map.index);
        let shape = self.shape().to_vec();
        Ok(self.tape.record(out, &[self], move |g, _| {
            let mut dx = vec![T::zero(); shape.iter().product()];
            for (&i, &gv) in index.iter().zip(g.data()) {
                if i != NONE {
                    dx[i as usize] += gv;
                }
            }
            vec![Some(tensor(&shape, dx))]
        }))
    }

    pub fn pixel_shuffle(&self, r: usize, dir: ShuffleDirection) -> Result<Var<'t, T>> {
        let (idx, shape) = tops::pixel_shuffle_index(self.shape(), r, dir)?;
        self.gather(&GatherMap::new(idx, self.value.numel(), shape)?)
    }

    /// Channels `[start, start + len)` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let c = *self.shape().last().unwrap_or(&0);
        if start + len > c {
            return Err(MptError::shape("slice_last", format!("{}..{} of {}", start, start + len, c)));
        }
        let rows = self.value.numel() / c.max(1);
        let idx = (0..rows)
            .flat_map(|r| (start..start + len).map(move |ch| (r * c + ch) as u32))
            .collect();
        let mut shape = self.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = len;
        self.gather(&GatherMap::new(idx, self.value.numel(), shape)?)
    }

    /// Concatenates along the last axis.
    pub fn concat_last(parts: &[&Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| MptError::invalid("concat", "no inputs"))?;
        let lead = &first.shape()[..first.shape().len() - 1];
        let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap_or(&0)).collect();
        for p in parts {
            if &p.shape()[..p.shape().len() - 1] != lead {
                return Err(MptError::shape("concat", format!("{:?} vs {:?}", p.shape(), first.shape())));
            }
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.value.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let part_shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
        Ok(first.tape.record(tensor(&shape, out), parts, move |g, _| {
            let mut grads: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
            for row in g.data().chunks_exact(total) {
                let mut off = 0;
                for (gr, &w) in grads.iter_mut().zip(&widths) {
                    gr.extend_from_slice(&row[off..off + w]);
                    off += w;
                }
            }
            grads
                .into_iter()
                .zip(&part_shapes)
                .map(|(d, s)| Some(tensor(s, d)))
                .collect()
        }))
    }

    /// Separable resampling with fixed taps (a linear map; backward is its transpose).
    pub fn resample(&self, rows: Rc<Taps>, cols: Rc<Taps>) -> Result<Var<'t, T>> {
        let dims = self.value.nhwc()?;
        let out = tops::resample_forward(self.value.data(), dims, &rows, &cols);
        let shape = tops::spatial_shape(self.shape(), dims.0, rows.len(), cols.len(), dims.3);
        let xshape = self.shape().to_vec();
        Ok(self.tape.record(tensor(&shape, out), &[self], move |g, _| {
            vec![Some(tensor(&xshape, tops::resample_backward(g.data(), dims, &rows, &cols)))]
        }))
    }

    /// Single-level orthonormal Haar transform; the output stacks the bands
    /// along channels as `[LL | LH | HL | HH]`.
    pub fn haar_dwt(&self) -> Result<Var<'t, T>> {
        let out = crate::freq::haar_forward_stacked(&self.value)?;
        let xshape = self.shape().to_vec();
        Ok(self.tape.record(out, &[self], move |g, _| {
            let dx = crate::freq::haar_inverse_stacked(g).expect("band shape");
            vec![Some(dx.reshape(xshape.clone()).expect("same numel"))]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([4], &[1.0, -2.0, 0.5, 3.0]).unwrap());
        let loss = x.mul(&x).unwrap().sum();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[2.0, -4.0, 1.0, 6.0]);
    }

    #[test]
    fn affine_chain_gradient_is_broadcast_coefficient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([3], &[1.0, 2.0, 3.0]).unwrap());
        let loss = x.scale(2.5).add_scalar(4.0).sum();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[2.5, 2.5, 2.5]);
    }

    #[test]
    fn second_backward_is_rejected_until_reset() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones([2]));
        let loss = x.sum();
        assert!(tape.backward(&loss).is_ok());
        assert!(matches!(tape.backward(&loss), Err(MptError::Backward(_))));
        tape.reset_backward();
        assert!(tape.backward(&loss).is_ok());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones([2]));
        assert!(tape.backward(&x).is_err());
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones([2]));
        let unused = tape.leaf(Tensor::ones([3]));
        let loss = x.sum();
        let g = tape.backward(&loss).unwrap();
        assert!(g.get(&unused).is_none());
        assert_eq!(g.get_or_zeros(&unused).data(), &[0.0; 3]);
    }

    #[test]
    fn shared_input_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([2], &[3.0, 4.0]).unwrap());
        let y = x.add(&x).unwrap().mul(&x).unwrap().sum();
        let g = tape.backward(&y).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[12.0, 16.0]);
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let tape = Tape::<f32>::no_grad();
        let x = tape.leaf(Tensor::ones([2]));
        let y = x.mul(&x).unwrap();
        assert!(!y.is_tracked());
        assert!(tape.is_empty());
    }
}
