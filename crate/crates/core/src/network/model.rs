use super::{MptConfig, ParameterStore, Params};
use crate::autodiff::{Tape, Var};
use crate::blocks::{sub_block_forward, sub_block_params, BlockSpec, ChannelKind, FefnKind, Init, ParamSpec};
use crate::data::Rng;
use crate::error::{MptError, Result};
use crate::tensor::ops::ShuffleDirection;
use crate::tensor::{Element, Tensor};
use crate::windows::{crop_index, replicate_pad_index, WindowGrid};

pub const INIT_STD: f64 = 0.02;

/// Normal with standard deviation [`INIT_STD`], redrawn outside ±2σ.
pub fn trunc_normal(rng: &mut Rng) -> f64 {
    loop {
        let z = rng.normal();
        if z.abs() <= 2.0 {
            return z * INIT_STD;
        }
    }
}

pub fn init_tensor<T: Element>(spec: &ParamSpec, rng: &mut Rng) -> Tensor<T> {
    match spec.init {
        Init::Zeros => Tensor::zeros(spec.shape.clone()),
        Init::Ones => Tensor::ones(spec.shape.clone()),
        Init::TruncNormal => Tensor::from_fn(spec.shape.clone(), |_| T::from_f64c(trunc_normal(rng))),
    }
}

/// Prefix of pyramid block `stage` on the encoder side, the bottleneck, or the decoder side.
fn block_prefix(cfg: &MptConfig, stage: usize, decoder: bool) -> String {
    if stage + 1 == cfg.stages() {
        "latent".to_string()
    } else if decoder {
        format!("dec{}", stage + 1)
    } else {
        format!("enc{}", stage + 1)
    }
}

/// Every parameter of the network in creation order.
pub fn param_specs(cfg: &MptConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let s = cfg.stages();
    let (cin, c0) = (cfg.in_channels, cfg.dims[0]);
    let mut out = vec![
        ParamSpec::new("in_conv.weight", &[3, 3, cin, c0], Init::TruncNormal),
        ParamSpec::new("in_conv.bias", &[c0], Init::Zeros),
    ];
    let pyramid = |out: &mut Vec<ParamSpec>, stage: usize, decoder: bool| -> Result<()> {
        let prefix = block_prefix(cfg, stage, decoder);
        for j in 0..cfg.blocks[stage] {
            out.extend(sub_block_params(&cfg.block_spec(stage, j)?, &format!("{}.b{}", prefix, j)));
        }
        Ok(())
    };
    for i in 0..s - 1 {
        pyramid(&mut out, i, false)?;
        out.push(ParamSpec::new(
            format!("down{}.weight", i + 1),
            &[4 * cfg.dims[i], cfg.dims[i + 1]],
            Init::TruncNormal,
        ));
    }
    pyramid(&mut out, s - 1, false)?;
    for i in (0..s - 1).rev() {
        out.push(ParamSpec::new(
            format!("up{}.weight", i + 1),
            &[cfg.dims[i + 1] / 4, cfg.dims[i]],
            Init::TruncNormal,
        ));
        pyramid(&mut out, i, true)?;
    }
    out.push(ParamSpec::new("out_conv.weight", &[3, 3, c0, cin], Init::TruncNormal));
    out.push(ParamSpec::new("out_conv.bias", &[cin], Init::Zeros));
    Ok(out)
}

/// Deterministically initialized parameters.
pub fn build_model<T: Element>(cfg: &MptConfig, seed: u64) -> Result<ParameterStore<T>> {
    let specs = param_specs(cfg)?;
    let mut rng = Rng::new(seed);
    let mut store = ParameterStore::new();
    for s in &specs {
        store.insert(s.name.clone(), init_tensor(s, &mut rng))?;
    }
    store.meta.config_hash = cfg.hash();
    store.meta.seed = seed;
    store.meta.config_text = cfg.to_kv();
    Ok(store)
}

/// Zeroes the output convolution; with the global residual the model is then the identity.
pub fn zero_head<T: Element>(store: &mut ParameterStore<T>) -> Result<()> {
    for name in ["out_conv.weight", "out_conv.bias"] {
        let t = store
            .get_mut(name)
            .ok_or_else(|| MptError::invalid("zero_head", format!("missing {}", name)))?;
        t.data_mut().iter_mut().for_each(|v| *v = T::zero());
    }
    Ok(())
}

pub fn param_count(cfg: &MptConfig) -> Result<usize> {
    Ok(param_specs(cfg)?.iter().map(ParamSpec::numel).sum())
}

fn pyramid_forward<'t, T: Element>(
    x: Var<'t, T>,
    params: &Params<'t, T>,
    cfg: &MptConfig,
    stage: usize,
    decoder: bool,
) -> Result<Var<'t, T>> {
    let prefix = block_prefix(cfg, stage, decoder);
    let mut f = x;
    for j in 0..cfg.blocks[stage] {
        let spec = cfg.block_spec(stage, j)?;
        f = sub_block_forward(&f, params, &format!("{}.b{}", prefix, j), &spec)?;
    }
    Ok(f)
}

/// Restores an image batch `[n, h, w, C_in]` (or a single `[h, w, C_in]` image).
pub fn mpt_forward<'t, T: Element>(params: &Params<'t, T>, cfg: &MptConfig, input: &Var<'t, T>) -> Result<Var<'t, T>> {
    let single = input.shape().len() == 3;
    let x = if single {
        let mut s = vec![1];
        s.extend_from_slice(input.shape());
        input.reshape(s)?
    } else {
        input.clone()
    };
    let [n, h, w, c] = *x.shape() else {
        return Err(MptError::shape("mpt_forward", format!("expected an image, got {:?}", input.shape())));
    };
    if c != cfg.in_channels {
        return Err(MptError::shape("mpt_forward", format!("{} channels, model takes {}", c, cfg.in_channels)));
    }
    let multiple = cfg.pad_multiple()?;
    let (hp, wp) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    let x0 = if (hp, wp) == (h, w) {
        x.clone()
    } else {
        x.gather(&replicate_pad_index(n, h, w, c, hp, wp)?)?
    };
    let s = cfg.stages();
    let mut f = x0.conv2d(params.get("in_conv.weight")?, Some(params.get("in_conv.bias")?), 1, 1, 1)?;
    let mut skips = Vec::with_capacity(s - 1);
    for i in 0..s - 1 {
        f = pyramid_forward(f, params, cfg, i, false)?;
        skips.push(f.clone());
        f = f
            .pixel_shuffle(2, ShuffleDirection::Down)?
            .linear(params.get(&format!("down{}.weight", i + 1))?, None)?;
    }
    f = pyramid_forward(f, params, cfg, s - 1, false)?;
    for i in (0..s - 1).rev() {
        f = f
            .pixel_shuffle(2, ShuffleDirection::Up)?
            .linear(params.get(&format!("up{}.weight", i + 1))?, None)?
            .add(&skips[i])?;
        f = pyramid_forward(f, params, cfg, i, true)?;
    }
    let mut out = f.conv2d(params.get("out_conv.weight")?, Some(params.get("out_conv.bias")?), 1, 1, 1)?;
    if cfg.global_residual {
        out = out.add(&x0)?;
    }
    if (hp, wp) != (h, w) {
        out = out.gather(&crop_index(n, hp, wp, c, h, w)?)?;
    }
    if !out.value().is_finite() {
        return Err(MptError::NonFinite("mpt_forward output".into()));
    }
    if single {
        out.reshape(input.shape().to_vec())
    } else {
        Ok(out)
    }
}

/// Inference on a plain tensor without recording a graph.
pub fn mpt_eval<T: Element>(store: &ParameterStore<T>, cfg: &MptConfig, input: &Tensor<T>) -> Result<Tensor<T>> {
    let tape = Tape::no_grad();
    let params = store.leaves(&tape);
    Ok(mpt_forward(&params, cfg, &tape.constant(input.clone()))?.to_tensor())
}

/// Analytic multiply-accumulate counts of one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FlopReport {
    pub conv_macs: u64,
    pub linear_macs: u64,
    /// Attention matmuls of both branches.
    pub attention_macs: u64,
    /// CSWA share of `attention_macs`.
    pub cswa_attention_macs: u64,
}

impl FlopReport {
    pub fn macs(&self) -> u64 {
        self.conv_macs + self.linear_macs + self.attention_macs
    }

    /// One multiply-accumulate counted as two floating-point operations.
    pub fn flops(&self) -> f64 {
        2.0 * self.macs() as f64
    }

    fn add(&mut self, o: FlopReport) {
        self.conv_macs += o.conv_macs;
        self.linear_macs += o.linear_macs;
        self.attention_macs += o.attention_macs;
        self.cswa_attention_macs += o.cswa_attention_macs;
    }
}

/// Counts for one sub-block on an `h × w` map.
pub fn sub_block_macs(spec: &BlockSpec, h: usize, w: usize) -> Result<FlopReport> {
    let c = spec.dim as u64;
    let grid = WindowGrid::with_multiple(h, w, spec.m, spec.multiple())?;
    let (hp, wp) = grid.padded();
    let r = spec.scale.ratio();
    let px = (h * w) as u64;
    let px_k = (hp / r * (wp / r)) as u64;
    let mut rep = FlopReport::default();
    if spec.variants.npconv {
        rep.conv_macs += 9 * c * (px + 2 * px_k);
    } else {
        rep.linear_macs += c * c * (px + 2 * px_k);
    }
    if !spec.scale.is_one() {
        let kind = spec.variants.downsample;
        if kind.has_conv() {
            rep.conv_macs += px_k * (r * r) as u64 * c;
        }
        if kind.has_linear() {
            rep.linear_macs += px_k * c * c;
        }
    }
    let mm = (spec.m * spec.m) as u64;
    let cswa = 2 * (hp * wp) as u64 * mm * c;
    rep.attention_macs += cswa;
    rep.cswa_attention_macs += cswa;
    rep.linear_macs += px * c * c;
    if spec.variants.channel == ChannelKind::Isca {
        let d = spec.head_dim() as u64;
        rep.linear_macs += px * c * 3 * c + px * c * c;
        rep.conv_macs += 9 * px * 3 * c;
        rep.attention_macs += 2 * px * c * d;
    }
    let hd = spec.hidden as u64;
    let wp_in = if spec.variants.fefn == FefnKind::CatGelu { 2 * hd } else { hd };
    rep.linear_macs += px * (2 * c * hd + wp_in * c);
    Ok(rep)
}

/// Analytic cost of one forward pass on an `h × w` input, padding included.
pub fn flops_estimate(cfg: &MptConfig, h: usize, w: usize) -> Result<FlopReport> {
    cfg.validate()?;
    let multiple = cfg.pad_multiple()?;
    let (hp, wp) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    let s = cfg.stages();
    let (cin, c0) = (cfg.in_channels as u64, cfg.dims[0] as u64);
    let full = (hp * wp) as u64;
    let mut rep = FlopReport {
        conv_macs: 2 * 9 * full * cin * c0,
        ..Default::default()
    };
    let pyramid = |rep: &mut FlopReport, stage: usize| -> Result<()> {
        let (sh, sw) = (hp >> stage, wp >> stage);
        for j in 0..cfg.blocks[stage] {
            rep.add(sub_block_macs(&cfg.block_spec(stage, j)?, sh, sw)?);
        }
        Ok(())
    };
    for i in 0..s {
        pyramid(&mut rep, i)?;
        if i + 1 < s {
            pyramid(&mut rep, i)?;
            let low = ((hp >> (i + 1)) * (wp >> (i + 1))) as u64;
            let (ci, cn) = (cfg.dims[i] as u64, cfg.dims[i + 1] as u64);
            rep.linear_macs += low * 4 * ci * cn;
            rep.linear_macs += ((hp >> i) * (wp >> i)) as u64 * (cn / 4) * ci;
        }
    }
    Ok(rep)
}
