use std::fmt;
use std::rc::Rc;

use super::{gradcheck, reference_window_attention, GradReport};
use crate::autodiff::{GatherMap, Tape, Var};
use crate::blocks::{
    cswa_forward, fefn_forward, init_params, isca_forward, sub_block_forward, sub_block_params, AttentionKind, BlockSpec,
    FefnKind, Variants,
};
use crate::data::{
    decode_image, decode_store, decode_tensor, encode_image, encode_store, encode_tensor, Rng,
};
use crate::error::Result;
use crate::freq::{
    cr_basic, cr_extended, efcr_ex, efcr_objective, haar_dwt, haar_idwt, ContrastiveBatch, ExMode,
};
use crate::network::{build_model, mpt_forward, param_specs, MptConfig, ParameterStore, Params};
use crate::tensor::ops::{bicubic_taps, bilinear_taps, pixel_shuffle, ShuffleDirection};
use crate::tensor::{Element, Tensor};
use crate::windows::{
    cross_scale_index, cyclic_shift, window_merge, window_partition, DownsampleKind, ScaleSpec, WindowGrid,
};

/// Outcome of one named verification.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub fn random_tensor<T: Element>(shape: &[usize], rng: &mut Rng, lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64c(rng.uniform_range(lo, hi)))
}

/// Block parameters with wide random values so gradients are not vanishingly small.
fn wide_params<T: Element>(spec: &BlockSpec, prefix: &str, rng: &mut Rng) -> ParameterStore<T> {
    let mut store = init_params(&sub_block_params(spec, prefix), rng);
    widen(&mut store, rng);
    store
}

fn widen<T: Element>(store: &mut ParameterStore<T>, rng: &mut Rng) {
    for (name, t) in store.iter_mut() {
        let centre = if name.ends_with("norm.weight") || name.ends_with("temperature") { 1.0 } else { 0.0 };
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = T::from_f64c(centre + 0.3 * rng.uniform_range(-1.0, 1.0)));
    }
}

// ---------------------------------------------------------------- complexity and receptive field

/// Matmul multiply-accumulates of one CSWA layer on a `32 × 32 × 16` map with `M = 4`.
pub fn attention_macs(ratio: usize) -> Result<u64> {
    let spec = BlockSpec::new(16, 2, 4, ScaleSpec::from_ratio(ratio)?, 0, 2.6, Variants::default())?;
    let mut rng = Rng::new(11);
    let store: ParameterStore<f32> = wide_params(&spec, "b", &mut rng);
    let tape = Tape::no_grad();
    let params = store.leaves(&tape);
    let x = tape.constant(random_tensor(&[1, 32, 32, 16], &mut rng, -1.0, 1.0));
    cswa_forward(&x, &params, "b", &spec)?;
    Ok(tape.matmul_macs())
}

/// Bounding box rows, columns and nonzero count of the input gradient of output window `(0, 0)`
/// for one CSWA layer on a `16 × 16` map with `M = 4`.
pub fn window_footprint(ratio: usize, npconv: bool) -> Result<(usize, usize, usize)> {
    let v = Variants {
        npconv,
        ..Variants::default()
    };
    let spec = BlockSpec::new(8, 2, 4, ScaleSpec::from_ratio(ratio)?, 0, 2.6, v)?;
    let mut rng = Rng::new(12);
    let store: ParameterStore<f64> = wide_params(&spec, "b", &mut rng);
    let tape = Tape::new();
    let params = store.leaves(&tape);
    let x = tape.leaf(random_tensor(&[1, 16, 16, 8], &mut rng, -1.0, 1.0));
    let y = cswa_forward(&x, &params, "b", &spec)?;
    let mut idx = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            idx.extend((0..8).map(|c| ((i * 16 + j) * 8 + c) as u32));
        }
    }
    let window = y.gather(&GatherMap::new(idx, 16 * 16 * 8, vec![128])?)?;
    let grads = tape.backward(&window.sum())?;
    let g = grads.get_or_zeros(&x);
    let (mut rows, mut cols, mut count) = (Vec::new(), Vec::new(), 0);
    for p in 0..256 {
        if g.data()[p * 8..p * 8 + 8].iter().any(|v| *v != 0.0) {
            rows.push(p / 16);
            cols.push(p % 16);
            count += 1;
        }
    }
    let span = |v: &[usize]| v.iter().max().map_or(0, |mx| mx - v.iter().min().unwrap() + 1);
    Ok((span(&rows), span(&cols), count))
}

/// Largest deviation of CSWA (unit scale, no shift) from the loop-based window attention
/// over `instances` random configurations, evaluated in `T` against an f64 reference.
pub fn oracle_max_error<T: Element>(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let m = [2, 4][rng.below(2)];
        let heads = [1, 2, 4][rng.below(3)];
        let dim = heads * (1 + rng.below(4)) * 2;
        let (h, w) = (m * (1 + rng.below(3)), m * (1 + rng.below(3)));
        let n = 1 + rng.below(2);
        let spec = BlockSpec::new(dim, heads, m, ScaleSpec::one(), 0, 2.6, Variants::default())?;
        let store64: ParameterStore<f64> = wide_params(&spec, "b", &mut rng);
        let x64: Tensor<f64> = random_tensor(&[n, h, w, dim], &mut rng, -1.0, 1.0);
        let store: ParameterStore<T> = store64.cast();
        let x: Tensor<T> = x64.cast();
        let tape = Tape::no_grad();
        let params = store.leaves(&tape);
        let got = cswa_forward(&tape.constant(x.clone()), &params, "b", &spec)?.to_tensor();
        let want = reference_window_attention(&x.cast::<f64>(), &store.cast::<f64>(), "b", &spec)?;
        worst = worst.max(got.cast::<f64>().max_abs_diff(&want));
    }
    Ok(worst)
}

/// Key window of every query window visited by exactly `ratio²` query windows.
pub fn cross_scale_counts_ok() -> Result<bool> {
    for ratio in [1, 2, 4] {
        let gk = WindowGrid::new(8, 12, 4)?;
        let gq = WindowGrid::new(8 * ratio, 12 * ratio, 4)?;
        let idx = cross_scale_index(&gq, &gk, ScaleSpec::from_ratio(ratio)?)?;
        let mut counts = vec![0usize; gk.count()];
        for k in idx {
            counts[k] += 1;
        }
        if counts.iter().any(|&c| c != ratio * ratio) {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------- wavelet

/// Worst reconstruction error and relative energy imbalance over `count` random images.
pub fn haar_errors<T: Element>(count: usize, size: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = Rng::new(seed);
    let (mut recon, mut energy) = (0.0f64, 0.0f64);
    for _ in 0..count {
        let x: Tensor<T> = random_tensor(&[size, size, 3], &mut rng, 0.0, 1.0);
        let b = haar_dwt(&x)?;
        recon = recon.max(haar_idwt(&b)?.max_abs_diff(&x));
        let e = |t: &Tensor<T>| t.data().iter().map(|v| v.to_f64c().powi(2)).sum::<f64>();
        let ex = e(&x);
        let eb = e(&b.ll) + e(&b.lh) + e(&b.hl) + e(&b.hh);
        energy = energy.max((ex - eb).abs() / ex);
    }
    Ok((recon, energy))
}

// ---------------------------------------------------------------- gradient checks

type Case = (String, Result<GradReport>);

fn case<T: Element, F>(out: &mut Vec<Case>, name: &str, inputs: Vec<Tensor<T>>, per: usize, f: F)
where
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    out.push((name.to_string(), gradcheck(&inputs, per, f)));
}

/// Inputs of a block gradcheck: image followed by every parameter.
fn block_inputs<T: Element>(x: Tensor<T>, store: &ParameterStore<T>) -> (Vec<Tensor<T>>, Vec<String>) {
    let mut inputs = vec![x];
    let mut names = Vec::new();
    for (k, v) in store.iter() {
        names.push(k.to_string());
        inputs.push(v.clone());
    }
    (inputs, names)
}

fn bind<'t, T: Element>(names: &[String], vars: &[Var<'t, T>]) -> Params<'t, T> {
    Params::from_vars(names.iter().cloned().zip(vars.iter().cloned()))
}

/// Elementary operations.
pub fn op_gradchecks<T: Element>() -> Vec<(String, Result<GradReport>)> {
    let mut rng = Rng::new(21);
    let mut r = |shape: &[usize]| random_tensor::<T>(shape, &mut rng, -1.0, 1.0);
    let mut out = Vec::new();
    let (a, b) = (r(&[2, 3, 4]), r(&[2, 3, 4]));
    case(&mut out, "add", vec![a.clone(), b.clone()], 24, |_, v| v[0].add(&v[1])?.mul(&v[0]));
    case(&mut out, "sub", vec![a.clone(), b.clone()], 24, |_, v| v[0].sub(&v[1])?.mul(&v[1]));
    case(&mut out, "mul", vec![a.clone(), b.clone()], 24, |_, v| v[0].mul(&v[1]));
    let den = b.map(|x| x + T::from_f64c(2.0));
    case(&mut out, "div", vec![a.clone(), den], 24, |_, v| v[0].div(&v[1]));
    case(&mut out, "scale_add_scalar", vec![a.clone()], 24, |_, v| {
        v[0].scale(-1.7).add_scalar(0.4).mul(&v[0])
    });
    case(&mut out, "add_bcast", vec![a.clone(), r(&[3, 4])], 24, |_, v| v[0].add_bcast(&v[1])?.mul(&v[0]));
    case(&mut out, "mul_groups", vec![a.clone(), r(&[3])], 24, |_, v| v[0].mul_groups(&v[1], 4));
    case(&mut out, "sum_mean", vec![a.clone()], 24, |_, v| {
        v[0].mul(&v[0])?.sum().add(&v[0].mean())
    });
    // small operands keep the f32 loss value from swamping the difference quotient
    let near = r(&[2, 3]).map(|x| x * T::from_f64c(0.5));
    let far = r(&[2, 3]).map(|x| x * T::from_f64c(0.3) + T::from_f64c(1.0));
    case(&mut out, "mean_abs_diff", vec![near.clone(), far.clone()], 6, |_, v| v[0].mean_abs_diff(&v[1]));
    case(&mut out, "mean_abs_diff_per_sample", vec![near, far], 6, |_, v| {
        v[0].mean_abs_diff_per_sample(&v[1])
    });
    case(&mut out, "reshape", vec![a.clone()], 24, |_, v| v[0].reshape(vec![6, 4])?.mul(&v[0].reshape(vec![6, 4])?));
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let sa = if ta { [2, 4, 3] } else { [2, 3, 4] };
        let sb = if tb { [2, 5, 4] } else { [2, 4, 5] };
        case(&mut out, &format!("matmul_t_{}{}", ta as u8, tb as u8), vec![r(&sa), r(&sb)], 40, move |_, v| {
            v[0].matmul_t(&v[1], ta, tb)
        });
    }
    case(&mut out, "matmul_broadcast", vec![r(&[2, 3, 4]), r(&[4, 2])], 24, |_, v| v[0].matmul(&v[1]));
    case(&mut out, "linear", vec![a.clone(), r(&[4, 5]), r(&[5])], 24, |_, v| v[0].linear(&v[1], Some(&v[2])));
    let img = r(&[1, 5, 5, 2]);
    case(&mut out, "conv2d", vec![img.clone(), r(&[3, 3, 2, 3]), r(&[3])], 50, |_, v| {
        v[0].conv2d(&v[1], Some(&v[2]), 1, 1, 1)
    });
    case(&mut out, "conv2d_stride2", vec![img.clone(), r(&[3, 3, 2, 2])], 50, |_, v| {
        v[0].conv2d(&v[1], None, 2, 1, 1)
    });
    case(&mut out, "conv2d_depthwise", vec![img.clone(), r(&[3, 3, 1, 2])], 50, |_, v| {
        v[0].conv2d(&v[1], None, 1, 1, 2)
    });
    let even = r(&[1, 4, 6, 2]);
    case(&mut out, "avg_pool2d", vec![even.clone()], 48, |_, v| v[0].avg_pool2d(2, 2));
    case(&mut out, "max_pool2d", vec![even.clone()], 48, |_, v| v[0].max_pool2d(2, 2));
    case(&mut out, "layer_norm", vec![a.clone(), r(&[4]), r(&[4])], 24, |_, v| {
        v[0].layer_norm(&v[1], &v[2], 1e-5)
    });
    case(&mut out, "gelu", vec![a.map(|x| x * T::from_f64c(3.0))], 24, |_, v| Ok(v[0].gelu()));
    case(&mut out, "softmax_axis1", vec![a.clone()], 24, |_, v| v[0].softmax(1));
    case(&mut out, "softmax_last", vec![a.clone()], 24, |_, v| v[0].softmax_last());
    case(&mut out, "l2_normalize_last", vec![a.clone()], 24, |_, v| v[0].l2_normalize_last(1e-12));
    case(&mut out, "gather", vec![a.clone()], 24, |_, v| {
        let idx: Vec<u32> = (0..30).map(|i| ((i * 7) % 25) as u32).collect();
        let idx: Vec<u32> = idx.into_iter().map(|i| if i == 24 { u32::MAX } else { i }).collect();
        v[0].gather(&GatherMap::new(idx, 24, vec![5, 6])?)
    });
    case(&mut out, "pixel_shuffle_down", vec![r(&[1, 4, 4, 2])], 32, |_, v| {
        v[0].pixel_shuffle(2, ShuffleDirection::Down)
    });
    case(&mut out, "pixel_shuffle_up", vec![r(&[1, 2, 2, 8])], 32, |_, v| {
        v[0].pixel_shuffle(2, ShuffleDirection::Up)
    });
    case(&mut out, "slice_concat", vec![a.clone(), b.clone()], 24, |_, v| {
        let s = v[0].slice_last(1, 2)?;
        Var::concat_last(&[&s, &v[1]])
    });
    case(&mut out, "resample_bicubic", vec![r(&[1, 8, 8, 1])], 64, |_, v| {
        v[0].resample(Rc::new(bicubic_taps(8, 2)), Rc::new(bicubic_taps(8, 2)))
    });
    case(&mut out, "resample_bilinear", vec![r(&[1, 5, 4, 1])], 20, |_, v| {
        v[0].resample(Rc::new(bilinear_taps(5, 7)), Rc::new(bilinear_taps(4, 3)))
    });
    case(&mut out, "haar_dwt", vec![r(&[1, 4, 6, 2])], 48, |_, v| v[0].haar_dwt());
    out
}

fn block_case<T: Element, F>(out: &mut Vec<Case>, name: &str, spec: BlockSpec, seed: u64, shape: &[usize], f: F)
where
    F: for<'t> Fn(&Var<'t, T>, &Params<'t, T>, &BlockSpec) -> Result<Var<'t, T>>,
{
    let mut rng = Rng::new(seed);
    let store = wide_params::<T>(&spec, "b", &mut rng);
    let x = random_tensor(shape, &mut rng, -1.0, 1.0);
    let (inputs, names) = block_inputs(x, &store);
    case(out, name, inputs, 6, |_, v| f(&v[0], &bind(&names, &v[1..]), &spec));
}

/// Attention branches, feed-forward variants and the sub-block.
pub fn block_gradchecks<T: Element>() -> Vec<(String, Result<GradReport>)> {
    let mut out = Vec::new();
    let spec = |ratio: usize, index: usize, v: Variants| {
        BlockSpec::new(4, 2, 2, ScaleSpec::from_ratio(ratio).unwrap(), index, 2.6, v).unwrap()
    };
    let d = Variants::default();
    block_case::<T, _>(&mut out, "cswa_s1", spec(1, 0, d), 31, &[1, 4, 4, 4], |x, p, s| cswa_forward(x, p, "b", s));
    block_case::<T, _>(&mut out, "cswa_s1/2_shifted", spec(2, 1, d), 32, &[1, 6, 5, 4], |x, p, s| {
        cswa_forward(x, p, "b", s)
    });
    let wa = Variants {
        attention: AttentionKind::Wa,
        npconv: false,
        ..d
    };
    block_case::<T, _>(&mut out, "wa_linear_qkv", spec(2, 1, wa), 33, &[1, 4, 4, 4], |x, p, s| cswa_forward(x, p, "b", s));
    for kind in [
        DownsampleKind::NoShortcut,
        DownsampleKind::PoolOnly,
        DownsampleKind::MaxPool,
        DownsampleKind::StridedConv,
        DownsampleKind::Bicubic,
    ] {
        let v = Variants { downsample: kind, ..d };
        block_case::<T, _>(&mut out, &format!("cswa_{}", kind.name()), spec(2, 0, v), 34, &[1, 4, 4, 4], |x, p, s| {
            cswa_forward(x, p, "b", s)
        });
    }
    block_case::<T, _>(&mut out, "isca", spec(1, 0, d), 35, &[2, 3, 3, 4], |x, p, s| isca_forward(x, p, "b", s));
    for kind in FefnKind::ALL {
        let v = Variants { fefn: *kind, ..d };
        let mut rng = Rng::new(36);
        let s = spec(1, 0, v);
        let store = wide_params::<T>(&s, "b", &mut rng);
        let x1 = random_tensor(&[1, 2, 2, 4], &mut rng, -1.0, 1.0);
        let x2 = random_tensor(&[1, 2, 2, 4], &mut rng, -1.0, 1.0);
        let (mut inputs, names) = block_inputs(x1, &store);
        inputs.insert(1, x2);
        case(&mut out, &format!("fefn_{}", kind.name()), inputs, 6, |_, v| {
            fefn_forward(&v[0], &v[1], &bind(&names, &v[2..]), "b", &s)
        });
    }
    block_case::<T, _>(&mut out, "sub_block", spec(2, 1, d), 37, &[1, 4, 4, 4], |x, p, s| {
        sub_block_forward(x, p, "b", s)
    });
    out
}

/// Two-stage network small enough for finite differences.
pub fn tiny_config() -> MptConfig {
    let mut cfg = MptConfig::desk();
    cfg.dims = vec![4, 8];
    cfg.heads = vec![1, 2];
    cfg.blocks = vec![2, 2];
    cfg.scales = vec![
        vec![ScaleSpec::from_ratio(2).unwrap(), ScaleSpec::one()],
        vec![ScaleSpec::one(), ScaleSpec::one()],
    ];
    cfg.window = 2;
    cfg
}

/// Full network and the contrastive objectives.
pub fn model_gradchecks<T: Element>() -> Vec<(String, Result<GradReport>)> {
    let mut out = Vec::new();
    let cfg = tiny_config();
    let mut rng = Rng::new(41);
    let mut store: ParameterStore<T> = match build_model(&cfg, 41) {
        Ok(s) => s,
        Err(e) => return vec![("mpt_tiny".into(), Err(e))],
    };
    widen(&mut store, &mut rng);
    let x = random_tensor(&[1, 6, 6, 3], &mut rng, 0.0, 1.0);
    let (inputs, names) = block_inputs(x, &store);
    case(&mut out, "mpt_tiny", inputs, 3, |_, v| mpt_forward(&bind(&names, &v[1..]), &cfg, &v[0]));

    let sh = [2, 2, 2, 3];
    let base: Tensor<T> = random_tensor(&sh, &mut rng, 0.0, 1.0);
    let apart = |x: &Tensor<T>, rng: &mut Rng| -> Tensor<T> {
        let d: Tensor<T> = Tensor::from_fn(sh.to_vec(), |_| T::zero());
        let mut bands = haar_dwt(&d).expect("even image");
        for b in [&mut bands.ll, &mut bands.lh, &mut bands.hl, &mut bands.hh] {
            b.data_mut().iter_mut().for_each(|v| *v = T::from_f64c(if rng.below(2) == 0 { 0.3 } else { -0.3 }));
        }
        x.zip_map(&haar_idwt(&bands).expect("even image"), |a, b| a + b).expect("same shape")
    };
    // compared pairs differ by ±0.3 in every band so no step crosses a kink of |·|
    let gt = apart(&base, &mut rng);
    let input = apart(&base, &mut rng);
    let b_in = apart(&input, &mut rng);
    let b_out = apart(&b_in, &mut rng);
    let extra_gt = apart(&base, &mut rng);
    let imgs = vec![base, b_out, gt, input, b_in, extra_gt];
    // output, b_out, gt, input, b_in, extra gt
    case(&mut out, "efcr_objective", imgs.clone(), 48, |_, v| {
        let cb = ContrastiveBatch {
            gt: Some(v[2].clone()),
            input: v[3].clone(),
            output: v[0].clone(),
            b_in: Some(v[4].clone()),
            b_out: Some(v[1].clone()),
            kernel_sizes: vec![3, 5],
        };
        let (pos, neg) = cr_basic(&cb)?;
        let ext = cr_extended(&cb)?;
        let l1 = v[0].mean_abs_diff(cb.gt.as_ref().unwrap())?;
        Ok(efcr_objective(&l1, &pos, &neg, &ext, 0.5)?.0)
    });
    for (name, mode) in [("efcr_ex_labeled", ExMode::LabeledExtra), ("efcr_ex_unlabeled", ExMode::UnlabeledExtra)] {
        case(&mut out, name, imgs.clone(), 48, move |_, v| {
            let c = |i: usize| v[i].clone();
            let main = ContrastiveBatch {
                gt: Some(c(2)),
                input: c(3),
                output: v[0].clone(),
                b_in: None,
                b_out: None,
                kernel_sizes: vec![],
            };
            let extra = ContrastiveBatch {
                gt: Some(c(5)),
                input: c(3),
                output: v[0].clone(),
                b_in: Some(c(4)),
                b_out: Some(v[1].clone()),
                kernel_sizes: vec![3, 3],
            };
            let (pos, neg, ext) = efcr_ex(&main, &extra, mode)?;
            let l1 = v[0].mean_abs_diff(&c(2))?;
            Ok(efcr_objective(&l1, &pos, &neg, &ext, 0.5)?.0)
        });
    }
    out
}

/// Every gradient check, in reporting order.
pub fn all_gradchecks<T: Element>() -> Vec<(String, Result<GradReport>)> {
    let mut v = op_gradchecks::<T>();
    v.extend(block_gradchecks::<T>());
    v.extend(model_gradchecks::<T>());
    v
}

// ---------------------------------------------------------------- roundtrips

/// Exact-roundtrip and malformed-input checks of layout transforms and file formats.
pub fn roundtrip_checks() -> Vec<Check> {
    let mut rng = Rng::new(51);
    let mut out = Vec::new();
    let x: Tensor<f32> = random_tensor(&[2, 9, 7, 3], &mut rng, -1.0, 1.0);
    let win = window_partition(&x, 4).and_then(|(w, g)| window_merge(&w, &g, true));
    out.push(Check::new("window_partition_merge", win.as_ref().is_ok_and(|y| *y == x), "2×9×7×3, M=4"));
    let shift = cyclic_shift(&x, 2, false).and_then(|s| cyclic_shift(&s, 2, true));
    let moved = cyclic_shift(&x, 2, false).is_ok_and(|s| s != x);
    out.push(Check::new("cyclic_shift", moved && shift.is_ok_and(|y| y == x), "offset 2 and back"));
    let ps = pixel_shuffle(&x.clone().reshape(vec![2, 9, 7, 3]).unwrap(), 1, ShuffleDirection::Down)
        .is_ok();
    let y: Tensor<f32> = random_tensor(&[1, 8, 6, 4], &mut rng, -1.0, 1.0);
    let shuffled = pixel_shuffle(&y, 2, ShuffleDirection::Down).and_then(|d| pixel_shuffle(&d, 2, ShuffleDirection::Up));
    out.push(Check::new("pixel_shuffle", ps && shuffled.is_ok_and(|z| z == y), "r=2 down then up"));

    let img: Tensor<f32> = Tensor::from_fn([5, 4, 3], |i| ((i * 37) % 256) as f32 / 255.0);
    let gray: Tensor<f32> = Tensor::from_fn([3, 6, 1], |i| ((i * 91) % 256) as f32 / 255.0);
    let img_ok = [&img, &gray].iter().all(|t| {
        encode_image(t)
            .and_then(|b| decode_image::<f32>(&b))
            .is_ok_and(|back| back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()))
    });
    out.push(Check::new("image_files", img_ok, "PPM and PGM bit-exact"));

    let t: Tensor<f32> = random_tensor(&[3, 1, 4], &mut rng, -1e3, 1e3);
    let tensor_ok = encode_tensor(&t)
        .and_then(|b| decode_tensor::<f32>(&b))
        .is_ok_and(|back| back.shape() == t.shape() && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let t64: Tensor<f64> = random_tensor(&[7], &mut rng, -1.0, 1.0);
    let t64_ok = encode_tensor(&t64).and_then(|b| decode_tensor::<f64>(&b)).is_ok_and(|back| back == t64);
    out.push(Check::new("tensor_files", tensor_ok && t64_ok, "f32 and f64 bit-exact"));

    let store = build_model::<f32>(&tiny_config(), 3);
    let ckpt_ok = store.as_ref().is_ok_and(|s| {
        encode_store(s)
            .and_then(|b| decode_store::<f32>(&b))
            .is_ok_and(|back| back == *s && back.names().eq(s.names()))
    });
    let order_ok = param_specs(&tiny_config()).is_ok_and(|specs| {
        store.as_ref().is_ok_and(|s| specs.iter().map(|p| p.name.as_str()).eq(s.names()))
    });
    out.push(Check::new("checkpoint_files", ckpt_ok && order_ok, "store with metadata and order"));

    let good = encode_tensor(&t).unwrap();
    let mut corrupt: Vec<(&str, Vec<u8>)> = Vec::new();
    let mut m = good.clone();
    m[1] = b'Q';
    corrupt.push(("magic", m));
    let mut v = good.clone();
    v[4] = 2;
    corrupt.push(("version", v));
    corrupt.push(("truncated", good[..good.len() - 3].to_vec()));
    let mut long = good.clone();
    long.extend([0, 0, 0, 0]);
    corrupt.push(("oversized", long));
    let mut shape = good.clone();
    shape[8] = 0xFF;
    corrupt.push(("shape", shape));
    let tensor_rejects = corrupt.iter().all(|(_, b)| decode_tensor::<f32>(b).is_err());
    let ck = store.as_ref().map(|s| encode_store(s).unwrap()).unwrap_or_default();
    let store_rejects = (1..ck.len()).step_by(97).all(|cut| decode_store::<f32>(&ck[..cut]).is_err());
    let images: [&[u8]; 4] = [b"P6\n2 2\n255\n\x00", b"P7\n1 1\n255\n\x00", b"P5\n1 1\n15\n\x00", b"P5\n-1 1\n255\n"];
    let image_rejects = images.iter().all(|b| decode_image::<f32>(b).is_err());
    out.push(Check::new(
        "malformed_files_rejected",
        tensor_rejects && store_rejects && image_rejects,
        format!("{} tensor corruptions, truncated checkpoints, {} bad images", corrupt.len(), images.len()),
    ));
    out
}

/// Checks run by the command-line self test.
pub fn selftest<T: Element>() -> Vec<Check> {
    let mut out = Vec::new();
    let tol = GradReport::tolerance(T::DTYPE);
    for (name, r) in all_gradchecks::<T>() {
        out.push(match r {
            Ok(rep) => Check::new(
                format!("gradcheck {}", name),
                rep.passes(T::DTYPE),
                format!("rel err {:.2e} (tol {:.0e}, {} elements)", rep.rel_err, tol, rep.checked),
            ),
            Err(e) => Check::new(format!("gradcheck {}", name), false, e.to_string()),
        });
    }
    out.push(match haar_errors::<T>(5, 32, 61) {
        Ok((recon, energy)) => Check::new(
            "haar_roundtrip",
            recon <= 1e-6 && energy <= 1e-5,
            format!("max err {:.2e}, energy imbalance {:.2e}", recon, energy),
        ),
        Err(e) => Check::new("haar_roundtrip", false, e.to_string()),
    });
    out.extend(roundtrip_checks());
    out.push(match cross_scale_counts_ok() {
        Ok(ok) => Check::new("cross_scale_index_counts", ok, "every key window shared by ratio² query windows"),
        Err(e) => Check::new("cross_scale_index_counts", false, e.to_string()),
    });
    out.push(match oracle_max_error::<T>(5, 71) {
        Ok(err) => Check::new("cswa_vs_window_attention", err <= 1e-5, format!("max abs err {:.2e}", err)),
        Err(e) => Check::new("cswa_vs_window_attention", false, e.to_string()),
    });
    let macs: Result<Vec<u64>> = [1, 2, 4].into_iter().map(attention_macs).collect();
    out.push(match macs {
        Ok(m) => Check::new("attention_macs_invariant", m.windows(2).all(|w| w[0] == w[1]), format!("{:?}", m)),
        Err(e) => Check::new("attention_macs_invariant", false, e.to_string()),
    });
    let fp: Result<Vec<_>> = [1, 2].into_iter().map(|r| window_footprint(r, false)).collect();
    out.push(match fp {
        Ok(f) => Check::new(
            "receptive_field_footprint",
            f[0] == (4, 4, 16) && f[1] == (8, 8, 64),
            format!("s=1 {:?}, s=1/2 {:?}", f[0], f[1]),
        ),
        Err(e) => Check::new("receptive_field_footprint", false, e.to_string()),
    });
    out
}
