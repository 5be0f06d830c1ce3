use std::fmt::Write as _;

use crate::blocks::{AttentionKind, BlockSpec, ChannelKind, FefnKind, Variants};
use crate::error::{MptError, Result};
use crate::windows::{validate_schedule, DownsampleKind, ScaleSpec};

/// Full architecture description.
#[derive(Clone, Debug, PartialEq)]
pub struct MptConfig {
    pub in_channels: usize,
    /// Feature width of each stage; the last stage is the bottleneck.
    pub dims: Vec<usize>,
    pub heads: Vec<usize>,
    /// Sub-blocks per pyramid block.
    pub blocks: Vec<usize>,
    /// Scale of every sub-block, coarse to fine.
    pub scales: Vec<Vec<ScaleSpec>>,
    pub window: usize,
    pub alpha: f64,
    pub global_residual: bool,
    pub variants: Variants,
}

fn scales(stages: &[&[usize]]) -> Vec<Vec<ScaleSpec>> {
    stages
        .iter()
        .map(|s| s.iter().map(|&r| ScaleSpec::from_ratio(r).expect("preset ratio")).collect())
        .collect()
}

impl MptConfig {
    /// Published configuration.
    pub fn paper() -> Self {
        MptConfig {
            in_channels: 3,
            dims: vec![40, 80, 160, 320],
            heads: vec![1, 2, 4, 8],
            blocks: vec![6, 6, 6, 6],
            scales: scales(&[
                &[8, 8, 4, 4, 1, 1],
                &[4, 4, 2, 2, 1, 1],
                &[2, 2, 2, 2, 1, 1],
                &[2, 2, 2, 2, 1, 1],
            ]),
            window: 8,
            alpha: 2.6,
            global_residual: true,
            variants: Variants::default(),
        }
    }

    /// Small configuration for CPU experiments.
    pub fn desk() -> Self {
        MptConfig {
            in_channels: 3,
            dims: vec![8, 16, 32, 64],
            heads: vec![1, 2, 4, 8],
            blocks: vec![2, 2, 2, 2],
            scales: scales(&[&[4, 1], &[2, 1], &[2, 1], &[1, 1]]),
            window: 4,
            alpha: 2.6,
            global_residual: true,
            variants: Variants::default(),
        }
    }

    /// Named presets: `paper`, `desk`, and the pyramid-scale ablations `paper-v1..v3`.
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = match name {
            "paper" | "paper-v1" | "paper-v2" | "paper-v3" => Self::paper(),
            "desk" => Self::desk(),
            _ => return Err(MptError::config("preset", format!("unknown preset {:?}", name))),
        };
        match name {
            "paper-v1" => cfg.scales = scales(&[&[1; 6], &[1; 6], &[1; 6], &[1; 6]]),
            "paper-v2" => {
                cfg.scales = scales(&[
                    &[16, 16, 8, 8, 1, 1],
                    &[8, 8, 4, 4, 1, 1],
                    &[4, 4, 2, 2, 1, 1],
                    &[4, 4, 2, 2, 1, 1],
                ])
            }
            "paper-v3" => {
                cfg.scales = scales(&[
                    &[4, 4, 2, 2, 1, 1],
                    &[2, 2, 2, 2, 1, 1],
                    &[2, 2, 2, 2, 1, 1],
                    &[2, 2, 2, 2, 1, 1],
                ])
            }
            _ => {}
        }
        Ok(cfg)
    }

    pub fn stages(&self) -> usize {
        self.dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.dims.len();
        if s == 0 {
            return Err(MptError::config("dims", "at least one stage required"));
        }
        if self.heads.len() != s || self.blocks.len() != s || self.scales.len() != s {
            return Err(MptError::config(
                "dims",
                format!(
                    "{} stages but {} head counts, {} block counts, {} scale lists",
                    s,
                    self.heads.len(),
                    self.blocks.len(),
                    self.scales.len()
                ),
            ));
        }
        if self.in_channels == 0 {
            return Err(MptError::config("in_channels", "must be positive"));
        }
        if self.window == 0 {
            return Err(MptError::config("window", "must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(MptError::config("alpha", "must be positive"));
        }
        for i in 0..s {
            if self.dims[i] == 0 {
                return Err(MptError::config("dims", format!("stage {} has zero width", i + 1)));
            }
            if self.heads[i] == 0 || !self.dims[i].is_multiple_of(self.heads[i]) {
                return Err(MptError::config(
                    "heads",
                    format!("stage {} width {} not divisible by {} heads", i + 1, self.dims[i], self.heads[i]),
                ));
            }
            if self.blocks[i] == 0 || !self.blocks[i].is_multiple_of(2) {
                return Err(MptError::config("blocks", format!("stage {} needs an even, positive count", i + 1)));
            }
            if self.scales[i].len() != self.blocks[i] {
                return Err(MptError::config(
                    "scales",
                    format!("stage {} has {} scales for {} sub-blocks", i + 1, self.scales[i].len(), self.blocks[i]),
                ));
            }
            validate_schedule(&self.scales[i]).map_err(|e| MptError::config("scales", e.to_string()))?;
            if i + 1 < s && !self.dims[i + 1].is_multiple_of(4) {
                return Err(MptError::config(
                    "dims",
                    format!("stage {} width {} must be divisible by 4 for pixel shuffle", i + 2, self.dims[i + 1]),
                ));
            }
        }
        Ok(())
    }

    pub fn block_spec(&self, stage: usize, index: usize) -> Result<BlockSpec> {
        BlockSpec::new(
            self.dims[stage],
            self.heads[stage],
            self.window,
            self.scales[stage][index],
            index,
            self.alpha,
            self.variants,
        )
    }

    /// Spatial multiple the input is padded to so every stage tiles.
    pub fn pad_multiple(&self) -> Result<usize> {
        let mut multiple = 1usize;
        for stage in 0..self.stages() {
            for j in 0..self.blocks[stage] {
                let need = self.block_spec(stage, j)?.multiple() << stage;
                multiple = lcm(multiple, need);
            }
        }
        Ok(multiple)
    }

    /// Flat `key=value` description, reloadable with [`MptConfig::apply`].
    pub fn to_kv(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let sc = self
            .scales
            .iter()
            .map(|s| s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join(";");
        let v = &self.variants;
        let mut out = String::new();
        let _ = writeln!(out, "in_channels={}", self.in_channels);
        let _ = writeln!(out, "dims={}", join(&self.dims));
        let _ = writeln!(out, "heads={}", join(&self.heads));
        let _ = writeln!(out, "blocks={}", join(&self.blocks));
        let _ = writeln!(out, "scales={}", sc);
        let _ = writeln!(out, "window={}", self.window);
        let _ = writeln!(out, "alpha={}", self.alpha);
        let _ = writeln!(out, "global_residual={}", self.global_residual);
        let _ = writeln!(out, "attention={}", v.attention);
        let _ = writeln!(out, "channel={}", v.channel);
        let _ = writeln!(out, "fefn={}", v.fefn);
        let _ = writeln!(out, "downsample={}", v.downsample);
        let _ = writeln!(out, "npconv={}", v.npconv);
        let _ = writeln!(out, "shift={}", v.shift);
        out
    }

    pub const KEYS: [&'static str; 14] = [
        "in_channels",
        "dims",
        "heads",
        "blocks",
        "scales",
        "window",
        "alpha",
        "global_residual",
        "attention",
        "channel",
        "fefn",
        "downsample",
        "npconv",
        "shift",
    ];

    /// Sets one key; returns `false` when the key is not a model key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        let value = value.trim();
        match key {
            "in_channels" => self.in_channels = parse_num(key, value)?,
            "dims" => self.dims = parse_list(key, value)?,
            "heads" => self.heads = parse_list(key, value)?,
            "blocks" => self.blocks = parse_list(key, value)?,
            "scales" => {
                self.scales = value
                    .split(';')
                    .map(|stage| {
                        stage
                            .split(',')
                            .map(|s| s.parse::<ScaleSpec>().map_err(|e| MptError::config(key, e.to_string())))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            "window" => self.window = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "global_residual" => self.global_residual = parse_bool(key, value)?,
            "attention" => self.variants.attention = value.parse::<AttentionKind>().map_err(|e| MptError::config(key, e.to_string()))?,
            "channel" => self.variants.channel = value.parse::<ChannelKind>().map_err(|e| MptError::config(key, e.to_string()))?,
            "fefn" => self.variants.fefn = value.parse::<FefnKind>().map_err(|e| MptError::config(key, e.to_string()))?,
            "downsample" => self.variants.downsample = value.parse::<DownsampleKind>().map_err(|e| MptError::config(key, e.to_string()))?,
            "npconv" => self.variants.npconv = parse_bool(key, value)?,
            "shift" => self.variants.shift = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// FNV-1a hash of the canonical key=value text.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_kv().as_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

pub fn parse_num<N: std::str::FromStr>(key: &str, value: &str) -> Result<N> {
    value
        .trim()
        .parse::<N>()
        .map_err(|_| MptError::config(key, format!("invalid number {:?}", value)))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(MptError::config(key, format!("invalid boolean {:?}", other))),
    }
}

pub fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| parse_num::<usize>(key, s))
        .collect()
}

/// Parses flat `key=value` text; `#` starts a comment, blank lines are skipped.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(MptError::config(
                format!("line {}", line_no + 1),
                format!("expected key=value, got {:?}", line),
            ));
        };
        let k = k.trim().to_string();
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(MptError::config(k, "key given twice"));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["paper", "desk", "paper-v1", "paper-v2", "paper-v3"] {
            MptConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(MptConfig::preset("huge").is_err());
    }

    #[test]
    fn paper_values() {
        let c = MptConfig::preset("paper").unwrap();
        assert_eq!(c.alpha, 2.6);
        assert_eq!(c.dims, [40, 80, 160, 320]);
        assert_eq!(c.blocks, [6, 6, 6, 6]);
        assert_eq!(c.heads, [1, 2, 4, 8]);
    }

    #[test]
    fn kv_roundtrip() {
        let cfg = MptConfig::paper();
        let mut back = MptConfig::desk();
        for (k, v) in parse_kv_text(&cfg.to_kv()).unwrap() {
            assert!(back.apply(&k, &v).unwrap(), "{}", k);
        }
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn invalid_values_name_the_key() {
        let mut c = MptConfig::desk();
        let err = c.apply("window", "four").unwrap_err();
        assert!(err.to_string().contains("window"), "{}", err);
        c.blocks = vec![3, 2, 2, 2];
        assert!(c.validate().unwrap_err().to_string().contains("blocks"));
        let mut z = MptConfig::desk();
        z.dims = vec![0; 4];
        assert!(z.validate().is_err());
    }

    #[test]
    fn pad_multiples() {
        assert_eq!(MptConfig::desk().pad_multiple().unwrap(), 32);
        assert_eq!(MptConfig::paper().pad_multiple().unwrap(), 128);
    }

    #[test]
    fn kv_parser_rules() {
        let kv = parse_kv_text("# comment\na = 1\n\nb=x # trailing\n").unwrap();
        assert_eq!(kv, [("a".into(), "1".into()), ("b".into(), "x".into())]);
        assert!(parse_kv_text("novalue").is_err());
        assert!(parse_kv_text("a=1\na=2").is_err());
    }
}
