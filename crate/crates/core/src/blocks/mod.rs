//! Cross-scale window attention, intra-scale channel attention, the
//! feature-enhancing feed-forward network, and the sub-block combining them.

mod relpos;

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{GatherMap, Var};
use crate::error::{MptError, Result};
use crate::network::Params;
use crate::tensor::{Element, Tensor};
use crate::windows::{
    downsample_var, npconv_var, pad_index, window_gather_index, window_merge_index, DownsampleKind,
    DownsampleParams, ScaleSpec, WindowGrid,
};

pub use relpos::{rel_pos_bias, rel_pos_index, RelPosBias};

pub const LN_EPS: f64 = 1e-5;
/// Added under the square root of the channel-attention L2 norm.
pub const L2_EPS: f64 = 1e-12;

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = MptError;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.name() == s.trim())
                    .ok_or_else(|| MptError::config(stringify!($name), format!("unknown value {:?}", s)))
            }
        }
    };
}

named_enum!(
    /// Spatial branch: cross-scale or plain window attention.
    AttentionKind { Cswa => "cswa", Wa => "wa" }
);
named_enum!(
    /// Channel branch; `none` feeds the spatial output to both FEFN inputs.
    ChannelKind { Isca => "isca", None => "none" }
);
named_enum!(
    FefnKind { Fefn => "fefn", CatGelu => "cat_gelu", AddGelu => "add_gelu", Reversed => "reversed" }
);

/// Architecture switches shared by every sub-block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variants {
    pub attention: AttentionKind,
    pub channel: ChannelKind,
    pub fefn: FefnKind,
    pub downsample: DownsampleKind,
    /// Depthwise Q/K/V generation; off uses bias-free linear projections.
    pub npconv: bool,
    /// Cyclic shift on every second sub-block.
    pub shift: bool,
}

impl Default for Variants {
    fn default() -> Self {
        Variants {
            attention: AttentionKind::Cswa,
            channel: ChannelKind::Isca,
            fefn: FefnKind::Fefn,
            downsample: DownsampleKind::Baseline,
            npconv: true,
            shift: true,
        }
    }
}

/// Geometry of one sub-block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockSpec {
    pub dim: usize,
    pub heads: usize,
    pub m: usize,
    pub scale: ScaleSpec,
    pub shifted: bool,
    pub hidden: usize,
    pub variants: Variants,
}

/// `round(α·C)` raised to the next multiple of `heads`.
pub fn fefn_hidden(dim: usize, alpha: f64, heads: usize) -> usize {
    let h = heads.max(1);
    let base = (alpha * dim as f64).round() as usize;
    base.div_ceil(h) * h
}

impl BlockSpec {
    pub fn new(dim: usize, heads: usize, m: usize, scale: ScaleSpec, index: usize, alpha: f64, variants: Variants) -> Result<Self> {
        if dim == 0 || heads == 0 || !dim.is_multiple_of(heads) {
            return Err(MptError::config("heads", format!("dimension {} not divisible by {} heads", dim, heads)));
        }
        if m == 0 {
            return Err(MptError::config("window", "window width must be positive"));
        }
        let scale = match variants.attention {
            AttentionKind::Wa => ScaleSpec::one(),
            AttentionKind::Cswa => scale,
        };
        Ok(BlockSpec {
            dim,
            heads,
            m,
            scale,
            shifted: variants.shift && index % 2 == 1,
            hidden: fefn_hidden(dim, alpha, heads),
            variants,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn offset(&self) -> usize {
        if self.shifted {
            self.m / 2
        } else {
            0
        }
    }

    /// Spatial multiple the block pads its input to.
    pub fn multiple(&self) -> usize {
        self.m * self.scale.ratio()
    }
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

/// Name, shape and initializer of one learnable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Parameters of one sub-block under `prefix`, in creation order.
pub fn sub_block_params(spec: &BlockSpec, prefix: &str) -> Vec<ParamSpec> {
    let c = spec.dim;
    let v = spec.variants;
    let p = |s: &str| format!("{}.{}", prefix, s);
    let mut out = vec![
        ParamSpec::new(p("cswa.norm.weight"), &[c], Init::Ones),
        ParamSpec::new(p("cswa.norm.bias"), &[c], Init::Zeros),
    ];
    for qkv in ["q", "k", "v"] {
        if v.npconv {
            out.push(ParamSpec::new(p(&format!("cswa.{}_dw", qkv)), &[3, 3, 1, c], Init::TruncNormal));
        } else {
            out.push(ParamSpec::new(p(&format!("cswa.{}_lin", qkv)), &[c, c], Init::TruncNormal));
        }
    }
    if !spec.scale.is_one() {
        let kind = v.downsample;
        if kind.has_conv() {
            let r = spec.scale.ratio();
            out.push(ParamSpec::new(p("cswa.down.conv"), &[r, r, 1, c], Init::TruncNormal));
        }
        if kind.has_linear() {
            out.push(ParamSpec::new(p("cswa.down.weight"), &[c, c], Init::TruncNormal));
            out.push(ParamSpec::new(p("cswa.down.bias"), &[c], Init::Zeros));
        }
    }
    let bins = (2 * spec.m - 1) * (2 * spec.m - 1);
    out.push(ParamSpec::new(p("cswa.rel_bias"), &[bins, spec.heads], Init::Zeros));
    out.push(ParamSpec::new(p("cswa.proj.weight"), &[c, c], Init::TruncNormal));
    out.push(ParamSpec::new(p("cswa.proj.bias"), &[c], Init::Zeros));

    if v.channel == ChannelKind::Isca {
        out.extend([
            ParamSpec::new(p("isca.norm.weight"), &[c], Init::Ones),
            ParamSpec::new(p("isca.norm.bias"), &[c], Init::Zeros),
            ParamSpec::new(p("isca.qkv"), &[c, 3 * c], Init::TruncNormal),
            ParamSpec::new(p("isca.qkv_dw"), &[3, 3, 1, 3 * c], Init::TruncNormal),
            ParamSpec::new(p("isca.temperature"), &[spec.heads], Init::Ones),
            ParamSpec::new(p("isca.proj.weight"), &[c, c], Init::TruncNormal),
            ParamSpec::new(p("isca.proj.bias"), &[c], Init::Zeros),
        ]);
    }

    let hd = spec.hidden;
    let wp_in = if v.fefn == FefnKind::CatGelu { 2 * hd } else { hd };
    out.extend([
        ParamSpec::new(p("fefn.w1"), &[c, hd], Init::TruncNormal),
        ParamSpec::new(p("fefn.b1"), &[hd], Init::Zeros),
        ParamSpec::new(p("fefn.w2"), &[c, hd], Init::TruncNormal),
        ParamSpec::new(p("fefn.b2"), &[hd], Init::Zeros),
        ParamSpec::new(p("fefn.wp"), &[wp_in, c], Init::TruncNormal),
        ParamSpec::new(p("fefn.bp"), &[c], Init::Zeros),
    ]);
    out
}

fn dims4<T: Element>(x: &Var<'_, T>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => Err(MptError::shape(op, format!("expected [n, h, w, c], got {:?}", x.shape()))),
    }
}

/// Cross-scale window attention with its input shortcut.
///
/// Queries come from the local map, keys and values from the `s`-downscaled
/// map; query window `(r, c)` attends to key window `(⌊r·s⌋, ⌊c·s⌋)`. On shifted
/// blocks both maps are rolled by half a window in their own grids.
pub fn cswa_forward<'t, T: Element>(x: &Var<'t, T>, params: &Params<'t, T>, prefix: &str, spec: &BlockSpec) -> Result<Var<'t, T>> {
    let (n, h, w, c) = dims4(x, "cswa")?;
    if c != spec.dim {
        return Err(MptError::shape("cswa", format!("{} channels for a {}-channel block", c, spec.dim)));
    }
    let g = |s: &str| params.get(&format!("{}.{}", prefix, s));
    let xn = x.layer_norm(g("cswa.norm.weight")?, g("cswa.norm.bias")?, LN_EPS)?;
    let r = spec.scale.ratio();
    let (m, heads, d) = (spec.m, spec.heads, spec.head_dim());
    let grid_q = WindowGrid::with_multiple(h, w, m, spec.multiple())?;
    let (hp, wp) = grid_q.padded();

    let project = |t: &Var<'t, T>, which: &str| -> Result<Var<'t, T>> {
        if spec.variants.npconv {
            npconv_var(t, g(&format!("cswa.{}_dw", which))?)
        } else {
            t.linear(g(&format!("cswa.{}_lin", which))?, None)
        }
    };
    let q = project(&xn, "q")?;
    let padded = if (hp, wp) == (h, w) {
        xn.clone()
    } else {
        xn.gather(&pad_index(n, h, w, c, hp, wp)?)?
    };
    let down = DownsampleParams {
        lin_w: params.opt(&format!("{}.cswa.down.weight", prefix)),
        lin_b: params.opt(&format!("{}.cswa.down.bias", prefix)),
        conv_w: params.opt(&format!("{}.cswa.down.conv", prefix)),
    };
    let xs = downsample_var(&padded, spec.scale, spec.variants.downsample, &down)?;
    let k = project(&xs, "k")?;
    let v = project(&xs, "v")?;

    let offset = spec.offset();
    let grid_k = WindowGrid::new(hp / r, wp / r, m)?;
    let q_map = window_gather_index(n, &grid_q, grid_q.rows, grid_q.cols, 1, c, heads, offset)?;
    let kv_map = window_gather_index(n, &grid_k, grid_q.rows, grid_q.cols, r, c, heads, offset)?;
    let qw = q.gather(&q_map)?;
    let kw = k.gather(&kv_map)?;
    let vw = v.gather(&kv_map)?;

    let bias = rel_pos_bias(g("cswa.rel_bias")?, m, heads)?;
    let logits = qw
        .matmul_t(&kw, false, true)?
        .scale(1.0 / (d as f64).sqrt())
        .add_bcast(&bias)?;
    let attn = logits.softmax_last()?;
    let out = attn.matmul(&vw)?;
    let merged = out.gather(&window_merge_index(n, &grid_q, c, heads, offset)?)?;
    merged
        .linear(g("cswa.proj.weight")?, Some(g("cswa.proj.bias")?))?
        .add(x)
}

/// `[n, h, w, 3C]` channel block starting at `start` to `[n, heads, d, h·w]`.
fn channel_major_index(n: usize, hw: usize, total: usize, start: usize, heads: usize, d: usize) -> Result<GatherMap> {
    let mut idx = Vec::with_capacity(n * heads * d * hw);
    for b in 0..n {
        for head in 0..heads {
            for e in 0..d {
                let ch = start + head * d + e;
                idx.extend((0..hw).map(|p| ((b * hw + p) * total + ch) as u32));
            }
        }
    }
    GatherMap::new(idx, n * hw * total, vec![n, heads, d, hw])
}

fn spatial_major_index(n: usize, h: usize, w: usize, heads: usize, d: usize) -> Result<GatherMap> {
    let (hw, c) = (h * w, heads * d);
    let mut idx = Vec::with_capacity(n * hw * c);
    for b in 0..n {
        for p in 0..hw {
            idx.extend((0..c).map(|ch| ((b * c + ch) * hw + p) as u32));
        }
    }
    GatherMap::new(idx, n * hw * c, vec![n, h, w, c])
}

/// Intra-scale channel attention with its input shortcut.
pub fn isca_forward<'t, T: Element>(x: &Var<'t, T>, params: &Params<'t, T>, prefix: &str, spec: &BlockSpec) -> Result<Var<'t, T>> {
    let (n, h, w, c) = dims4(x, "isca")?;
    if c != spec.dim {
        return Err(MptError::shape("isca", format!("{} channels for a {}-channel block", c, spec.dim)));
    }
    let g = |s: &str| params.get(&format!("{}.{}", prefix, s));
    let (heads, d) = (spec.heads, spec.head_dim());
    let xn = x.layer_norm(g("isca.norm.weight")?, g("isca.norm.bias")?, LN_EPS)?;
    let qkv = xn
        .linear(g("isca.qkv")?, None)?
        .conv2d(g("isca.qkv_dw")?, None, 1, 1, 3 * c)?;
    let hw = h * w;
    let q = qkv
        .gather(&channel_major_index(n, hw, 3 * c, 0, heads, d)?)?
        .l2_normalize_last(L2_EPS)?;
    let k = qkv
        .gather(&channel_major_index(n, hw, 3 * c, c, heads, d)?)?
        .l2_normalize_last(L2_EPS)?;
    let v = qkv.gather(&channel_major_index(n, hw, 3 * c, 2 * c, heads, d)?)?;
    let attn = q
        .matmul_t(&k, false, true)?
        .mul_groups(g("isca.temperature")?, d * d)?
        .softmax_last()?;
    let out = attn.matmul(&v)?.gather(&spatial_major_index(n, h, w, heads, d)?)?;
    out.linear(g("isca.proj.weight")?, Some(g("isca.proj.bias")?))?
        .add(x)
}

/// Feature-enhancing feed-forward network: `W_p(gelu(x2')⊙x1') + x1` by default.
pub fn fefn_forward<'t, T: Element>(
    x1: &Var<'t, T>,
    x2: &Var<'t, T>,
    params: &Params<'t, T>,
    prefix: &str,
    spec: &BlockSpec,
) -> Result<Var<'t, T>> {
    if x1.shape() != x2.shape() {
        return Err(MptError::shape("fefn", format!("{:?} vs {:?}", x1.shape(), x2.shape())));
    }
    let g = |s: &str| params.get(&format!("{}.{}", prefix, s));
    let a = x1.linear(g("fefn.w1")?, Some(g("fefn.b1")?))?;
    let b = x2.linear(g("fefn.w2")?, Some(g("fefn.b2")?))?;
    let mixed = match spec.variants.fefn {
        FefnKind::Fefn => b.gelu().mul(&a)?,
        FefnKind::Reversed => a.gelu().mul(&b)?,
        FefnKind::AddGelu => a.add(&b)?.gelu(),
        FefnKind::CatGelu => Var::concat_last(&[&a, &b])?.gelu(),
    };
    mixed.linear(g("fefn.wp")?, Some(g("fefn.bp")?))?.add(x1)
}

/// Spatial and channel branches on the same input, fused by the feed-forward network.
pub fn sub_block_forward<'t, T: Element>(x: &Var<'t, T>, params: &Params<'t, T>, prefix: &str, spec: &BlockSpec) -> Result<Var<'t, T>> {
    let x1 = cswa_forward(x, params, prefix, spec)?;
    let x2 = match spec.variants.channel {
        ChannelKind::Isca => isca_forward(x, params, prefix, spec)?,
        ChannelKind::None => x1.clone(),
    };
    fefn_forward(&x1, &x2, params, prefix, spec)
}

/// Freshly initialized parameters for a set of specs, for tests and tools.
pub fn init_params<T: Element>(specs: &[ParamSpec], rng: &mut crate::data::Rng) -> crate::network::ParameterStore<T> {
    let mut store = crate::network::ParameterStore::new();
    for s in specs {
        store
            .insert(s.name.clone(), crate::network::init_tensor(s, rng))
            .expect("spec names are unique");
    }
    store
}

/// Plain-tensor sub-block evaluation.
pub fn sub_block_eval<T: Element>(
    x: &Tensor<T>,
    store: &crate::network::ParameterStore<T>,
    prefix: &str,
    spec: &BlockSpec,
) -> Result<Tensor<T>> {
    let tape = crate::autodiff::Tape::no_grad();
    let params = store.leaves(&tape);
    Ok(sub_block_forward(&tape.constant(x.clone()), &params, prefix, spec)?.to_tensor())
}
