//! Numerical verification: finite-difference gradient checks and naive oracles.

mod checks;
mod gradcheck;

pub use checks::*;
pub use gradcheck::{gradcheck, GradReport};

use crate::blocks::{rel_pos_index, BlockSpec, LN_EPS};
use crate::error::{MptError, Result};
use crate::network::ParameterStore;
use crate::tensor::{Element, Tensor};

fn f64s<T: Element>(store: &ParameterStore<T>, prefix: &str, name: &str) -> Result<Vec<f64>> {
    Ok(store.require(&format!("{}.{}", prefix, name))?.to_f64_vec())
}

/// Plain window attention block, written with direct loops over windows and pixels.
///
/// Covers the unshifted, full-scale, depthwise-projection case on maps whose sides are
/// multiples of the window width.
pub fn reference_window_attention<T: Element>(
    x: &Tensor<T>,
    store: &ParameterStore<T>,
    prefix: &str,
    spec: &BlockSpec,
) -> Result<Tensor<f64>> {
    let (n, h, w, c) = x.nhwc()?;
    let (m, heads, d) = (spec.m, spec.heads, spec.head_dim());
    if !spec.scale.is_one() || spec.shifted || !spec.variants.npconv || h % m != 0 || w % m != 0 || c != spec.dim {
        return Err(MptError::invalid("reference_window_attention", "unsupported configuration"));
    }
    let xv = x.to_f64_vec();
    let gamma = f64s(store, prefix, "cswa.norm.weight")?;
    let beta = f64s(store, prefix, "cswa.norm.bias")?;
    let mut xn = vec![0.0; xv.len()];
    for (px, out) in xv.chunks(c).zip(xn.chunks_mut(c)) {
        let mean = px.iter().sum::<f64>() / c as f64;
        let var = px.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        for i in 0..c {
            out[i] = (px[i] - mean) * rstd * gamma[i] + beta[i];
        }
    }
    let dw = |name: &str| -> Result<Vec<f64>> {
        let k = f64s(store, prefix, name)?;
        let mut out = vec![0.0; xn.len()];
        for b in 0..n {
            for i in 0..h {
                for j in 0..w {
                    for ch in 0..c {
                        let mut acc = 0.0;
                        for di in 0..3 {
                            for dj in 0..3 {
                                let (si, sj) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                                if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                    continue;
                                }
                                let src = ((b * h + si as usize) * w + sj as usize) * c + ch;
                                acc += xn[src] * k[(di * 3 + dj) * c + ch];
                            }
                        }
                        out[((b * h + i) * w + j) * c + ch] = acc;
                    }
                }
            }
        }
        Ok(out)
    };
    let (q, k, v) = (dw("cswa.q_dw")?, dw("cswa.k_dw")?, dw("cswa.v_dw")?);
    let table = f64s(store, prefix, "cswa.rel_bias")?;
    let bins = rel_pos_index(m);
    let mm = m * m;
    let scale = 1.0 / (d as f64).sqrt();
    let mut att = vec![0.0; xn.len()];
    let pix = |b: usize, wr: usize, wc: usize, p: usize| ((b * h + wr * m + p / m) * w + wc * m + p % m) * c;
    for b in 0..n {
        for wr in 0..h / m {
            for wc in 0..w / m {
                for head in 0..heads {
                    for p in 0..mm {
                        let qo = pix(b, wr, wc, p) + head * d;
                        let logits: Vec<f64> = (0..mm)
                            .map(|t| {
                                let ko = pix(b, wr, wc, t) + head * d;
                                let dot: f64 = (0..d).map(|e| q[qo + e] * k[ko + e]).sum();
                                dot * scale + table[bins[p * mm + t] * heads + head]
                            })
                            .collect();
                        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                        let z: f64 = ex.iter().sum();
                        for (t, e) in ex.iter().enumerate() {
                            let vo = pix(b, wr, wc, t) + head * d;
                            for i in 0..d {
                                att[qo + i] += e / z * v[vo + i];
                            }
                        }
                    }
                }
            }
        }
    }
    let pw = f64s(store, prefix, "cswa.proj.weight")?;
    let pb = f64s(store, prefix, "cswa.proj.bias")?;
    let mut out = xv.clone();
    for (a, o) in att.chunks(c).zip(out.chunks_mut(c)) {
        for j in 0..c {
            o[j] += pb[j] + (0..c).map(|i| a[i] * pw[i * c + j]).sum::<f64>();
        }
    }
    Tensor::new(vec![n, h, w, c], out)
}
