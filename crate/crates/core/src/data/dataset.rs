use std::fs;
use std::path::{Path, PathBuf};

use super::io::{load_image, save_image};
use super::synth::{mask_region_blur, synth_mask, synth_pair, Scene};
use super::Rng;
use crate::error::{MptError, Result};
use crate::network::fnv1a;
use crate::tensor::{Element, Tensor};

pub const SHARP_DIR: &str = "sharp";
pub const BLUR_DIR: &str = "blur";
pub const MASK_DIR: &str = "mask";
/// One pair in this many goes to validation.
pub const VAL_MODULUS: u64 = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T: Element = f32> {
    pub name: String,
    /// Missing for unlabeled data.
    pub sharp: Option<Tensor<T>>,
    pub blur: Tensor<T>,
    pub mask: Option<Tensor<T>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset<T: Element = f32> {
    pub samples: Vec<Sample<T>>,
    /// Files without a partner that were left out.
    pub skipped: usize,
}

fn list_images(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| MptError::io(dir, e))? {
        let entry = entry.map_err(|e| MptError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_file() && (name.ends_with(".ppm") || name.ends_with(".pgm")) {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

/// Whether a file name falls into the held-out split.
pub fn is_validation(name: &str) -> bool {
    fnv1a(name.as_bytes()).is_multiple_of(VAL_MODULUS)
}

impl<T: Element> Dataset<T> {
    /// Loads `<root>/blur`, pairing with `<root>/sharp` and `<root>/mask` by file name.
    ///
    /// With `labeled` every kept sample has a sharp image; without it the sharp
    /// directory is optional.
    pub fn load(root: &Path, labeled: bool) -> Result<Self> {
        let blur_dir = root.join(BLUR_DIR);
        let sharp_dir = root.join(SHARP_DIR);
        let mask_dir = root.join(MASK_DIR);
        if !blur_dir.is_dir() {
            return Err(MptError::invalid("dataset", format!("{} is not a directory", blur_dir.display())));
        }
        let has_sharp = sharp_dir.is_dir();
        if labeled && !has_sharp {
            return Err(MptError::invalid("dataset", format!("{} is not a directory", sharp_dir.display())));
        }
        let blur_names = list_images(&blur_dir)?;
        let sharp_names = if has_sharp { list_images(&sharp_dir)? } else { Vec::new() };
        let mut out = Dataset::default();
        out.skipped += sharp_names.iter().filter(|n| blur_names.binary_search(n).is_err()).count();
        for name in &blur_names {
            let paired = sharp_names.binary_search(name).is_ok();
            if has_sharp && !paired {
                out.skipped += 1;
                continue;
            }
            let blur: Tensor<T> = load_image(&blur_dir.join(name))?;
            let sharp = if paired {
                let s: Tensor<T> = load_image(&sharp_dir.join(name))?;
                if s.shape() != blur.shape() {
                    return Err(MptError::Format(format!(
                        "{}: sharp {:?} and blurred {:?} differ in shape",
                        name,
                        s.shape(),
                        blur.shape()
                    )));
                }
                Some(s)
            } else {
                None
            };
            let mask_path = mask_dir.join(Path::new(name).with_extension("pgm"));
            let mask = if mask_path.is_file() { Some(load_image(&mask_path)?) } else { None };
            out.samples.push(Sample {
                name: name.clone(),
                sharp,
                blur,
                mask,
            });
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.sharp.is_some())
    }

    /// Training and validation samples by file-name hash; validation is never empty for two or more samples.
    pub fn split(&self) -> (Vec<&Sample<T>>, Vec<&Sample<T>>) {
        let (mut val, mut train): (Vec<_>, Vec<_>) = self.samples.iter().partition(|s| is_validation(&s.name));
        if val.is_empty() && train.len() >= 2 {
            let pick = (0..train.len())
                .min_by_key(|&i| fnv1a(train[i].name.as_bytes()) % VAL_MODULUS)
                .unwrap();
            val.push(train.remove(pick));
        }
        (train, val)
    }
}

/// Options of the synthetic dataset writer.
#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub count: usize,
    pub size: usize,
    /// Cycles through every scene when `None`.
    pub scene: Option<Scene>,
    /// Blur only a random mask region and store the mask.
    pub mask: bool,
    pub feather: usize,
    pub seed: u64,
}

pub fn sample_name(i: usize) -> String {
    format!("{:04}.ppm", i)
}

/// Generates `count` pairs deterministically; sample `i` uses the seed split `i`.
pub fn synth_dataset<T: Element>(opts: &SynthOptions) -> Result<Vec<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)>> {
    let root = Rng::new(opts.seed);
    (0..opts.count)
        .map(|i| {
            let mut rng = root.split(i as u64);
            let scene = opts.scene.unwrap_or(Scene::ALL[i % Scene::ALL.len()]);
            let (sharp, blur) = synth_pair(&mut rng, opts.size, scene)?;
            if opts.mask {
                let m = synth_mask(&mut rng, opts.size);
                let composite = mask_region_blur(&sharp, &m, &mut rng, opts.feather)?;
                Ok((sharp, composite, Some(m)))
            } else {
                Ok((sharp, blur, None))
            }
        })
        .collect()
}

/// Writes a synthetic dataset under `root` and returns the written file paths.
pub fn write_synth_dataset(root: &Path, opts: &SynthOptions) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (i, (sharp, blur, mask)) in synth_dataset::<f32>(opts)?.into_iter().enumerate() {
        let name = sample_name(i);
        for (dir, img) in [(SHARP_DIR, &sharp), (BLUR_DIR, &blur)] {
            let p = root.join(dir).join(&name);
            save_image(&p, img)?;
            written.push(p);
        }
        if let Some(m) = mask {
            let p = root.join(MASK_DIR).join(Path::new(&name).with_extension("pgm"));
            save_image(&p, &m)?;
            written.push(p);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stable_and_nonempty() {
        let ds = Dataset::<f32> {
            samples: (0..32)
                .map(|i| Sample {
                    name: sample_name(i),
                    sharp: None,
                    blur: Tensor::zeros([1, 1, 1]),
                    mask: None,
                })
                .collect(),
            skipped: 0,
        };
        let (train, val) = ds.split();
        assert_eq!(train.len() + val.len(), 32);
        assert!(!val.is_empty());
        let (_, again) = ds.split();
        assert_eq!(val, again);
    }

    #[test]
    fn synth_dataset_is_deterministic() {
        let opts = SynthOptions {
            count: 3,
            size: 16,
            scene: None,
            mask: true,
            feather: 1,
            seed: 7,
        };
        let a = synth_dataset::<f32>(&opts).unwrap();
        assert_eq!(a, synth_dataset::<f32>(&opts).unwrap());
        assert!(a.iter().all(|(_, _, m)| m.is_some()));
    }
}
