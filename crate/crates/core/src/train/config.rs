use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{MptError, Result};
use crate::network::{parse_kv_text, parse_num, MptConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EfcrMode {
    Off,
    Basic,
    ExLabeled,
    ExUnlabeled,
}

impl EfcrMode {
    pub const ALL: [EfcrMode; 4] = [EfcrMode::Off, EfcrMode::Basic, EfcrMode::ExLabeled, EfcrMode::ExUnlabeled];

    pub fn name(self) -> &'static str {
        match self {
            EfcrMode::Off => "off",
            EfcrMode::Basic => "basic",
            EfcrMode::ExLabeled => "ex_labeled",
            EfcrMode::ExUnlabeled => "ex_unlabeled",
        }
    }

    pub fn uses_extra(self) -> bool {
        matches!(self, EfcrMode::ExLabeled | EfcrMode::ExUnlabeled)
    }
}

impl fmt::Display for EfcrMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EfcrMode {
    type Err = MptError;

    /// Accepts `ex_labeled` and `ex-labeled` alike.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        EfcrMode::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| MptError::config("efcr", format!("unknown mode {:?}", s)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: MptConfig,
    pub iterations: u64,
    pub batch: usize,
    pub patch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Cap on the joint gradient norm; 0 disables clipping.
    pub grad_clip: f64,
    /// Scale of the contrastive term.
    pub beta: f64,
    pub efcr: EfcrMode,
    /// Root of model initialization and every data stream.
    pub seed: u64,
    pub extra_data: Option<PathBuf>,
    /// Steps between checkpoint writes; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub checkpoint_path: Option<PathBuf>,
    /// Steps between reported log lines; 0 silences reporting.
    pub log_every: u64,
}

impl TrainConfig {
    /// Published recipe.
    pub fn paper() -> Self {
        TrainConfig {
            model: MptConfig::paper(),
            iterations: 300_000,
            batch: 8,
            patch: 256,
            lr_max: 1e-4,
            lr_min: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            grad_clip: 0.0,
            beta: 1e-5,
            efcr: EfcrMode::Basic,
            seed: 0,
            extra_data: None,
            checkpoint_every: 10_000,
            checkpoint_path: None,
            log_every: 100,
        }
    }

    /// CPU-sized recipe used by the toy experiments.
    pub fn desk() -> Self {
        TrainConfig {
            model: MptConfig::desk(),
            iterations: 2000,
            batch: 4,
            patch: 32,
            lr_max: 2e-3,
            lr_min: 1e-5,
            efcr: EfcrMode::Off,
            checkpoint_every: 0,
            log_every: 100,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let model = MptConfig::preset(name)?;
        let mut tc = if name == "desk" { Self::desk() } else { Self::paper() };
        tc.model = model;
        Ok(tc)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.iterations == 0 {
            return Err(MptError::config("iterations", "must be positive"));
        }
        if self.batch == 0 {
            return Err(MptError::config("batch", "must be at least 1"));
        }
        if self.patch == 0 {
            return Err(MptError::config("patch", "must be positive"));
        }
        for (key, v) in [("lr_max", self.lr_max), ("lr_min", self.lr_min)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MptError::config(key, "must be finite and non-negative"));
            }
        }
        if self.lr_min > self.lr_max {
            return Err(MptError::config("lr_min", "exceeds lr_max"));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(MptError::config("grad_clip", "must be finite and non-negative"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(MptError::config("beta", "must be finite and non-negative"));
        }
        for (key, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(MptError::config(key, "must lie in [0, 1)"));
            }
        }
        if self.efcr.uses_extra() && self.extra_data.is_none() {
            return Err(MptError::config("extra_data", format!("required by efcr={}", self.efcr)));
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 17] = [
        "iterations",
        "batch",
        "patch",
        "lr_max",
        "lr_min",
        "beta1",
        "beta2",
        "eps",
        "weight_decay",
        "grad_clip",
        "beta",
        "efcr",
        "seed",
        "extra_data",
        "checkpoint_every",
        "checkpoint_path",
        "log_every",
    ];

    /// Sets a training or model key; returns `false` for unknown keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key {
            "iterations" => self.iterations = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "patch" => self.patch = parse_num(key, v)?,
            "lr_max" => self.lr_max = parse_num(key, v)?,
            "lr_min" => self.lr_min = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "grad_clip" => self.grad_clip = parse_num(key, v)?,
            "beta" => self.beta = parse_num(key, v)?,
            "efcr" => self.efcr = v.parse()?,
            "seed" => self.seed = parse_num(key, v)?,
            "extra_data" => self.extra_data = path(v),
            "checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "checkpoint_path" => self.checkpoint_path = path(v),
            "log_every" => self.log_every = parse_num(key, v)?,
            _ => return self.model.apply(key, v),
        }
        Ok(true)
    }

    /// Applies a config file's text; unknown keys are rejected by name.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv_text(text)? {
            if !self.apply(&k, &v)? {
                return Err(MptError::config(k, "unknown key"));
            }
        }
        Ok(())
    }

    /// Reloadable `key=value` text of model and training settings.
    pub fn to_kv(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = self.model.to_kv();
        let _ = writeln!(out, "iterations={}", self.iterations);
        let _ = writeln!(out, "batch={}", self.batch);
        let _ = writeln!(out, "patch={}", self.patch);
        let _ = writeln!(out, "lr_max={}", self.lr_max);
        let _ = writeln!(out, "lr_min={}", self.lr_min);
        let _ = writeln!(out, "beta1={}", self.beta1);
        let _ = writeln!(out, "beta2={}", self.beta2);
        let _ = writeln!(out, "eps={}", self.eps);
        let _ = writeln!(out, "weight_decay={}", self.weight_decay);
        let _ = writeln!(out, "grad_clip={}", self.grad_clip);
        let _ = writeln!(out, "beta={}", self.beta);
        let _ = writeln!(out, "efcr={}", self.efcr);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "extra_data={}", p(&self.extra_data));
        let _ = writeln!(out, "checkpoint_every={}", self.checkpoint_every);
        let _ = writeln!(out, "checkpoint_path={}", p(&self.checkpoint_path));
        let _ = writeln!(out, "log_every={}", self.log_every);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_recipe() {
        let tc = TrainConfig::paper();
        assert_eq!((tc.iterations, tc.batch, tc.patch), (300_000, 8, 256));
        assert_eq!((tc.lr_max, tc.lr_min, tc.beta), (1e-4, 1e-6, 1e-5));
        assert_eq!((tc.beta1, tc.beta2, tc.weight_decay), (0.9, 0.999, 1e-4));
        tc.validate().unwrap();
    }

    #[test]
    fn kv_roundtrip() {
        for name in ["paper", "desk"] {
            let mut tc = TrainConfig::preset(name).unwrap();
            tc.checkpoint_path = Some("out/c.mptt".into());
            let mut back = TrainConfig::desk();
            back.apply_text(&tc.to_kv()).unwrap();
            assert_eq!(back, tc);
        }
    }

    #[test]
    fn errors_name_the_key() {
        let mut tc = TrainConfig::desk();
        match tc.apply("batch", "two") {
            Err(MptError::Config { key, .. }) => assert_eq!(key, "batch"),
            other => panic!("{:?}", other.map(|_| ())),
        }
        assert!(matches!(tc.apply_text("bogus=1"), Err(MptError::Config { key, .. }) if key == "bogus"));
        tc.efcr = EfcrMode::ExLabeled;
        assert!(matches!(tc.validate(), Err(MptError::Config { key, .. }) if key == "extra_data"));
    }

    #[test]
    fn mode_names() {
        assert_eq!("ex-unlabeled".parse::<EfcrMode>().unwrap(), EfcrMode::ExUnlabeled);
        assert_eq!("basic".parse::<EfcrMode>().unwrap(), EfcrMode::Basic);
        assert!("full".parse::<EfcrMode>().is_err());
    }
}
