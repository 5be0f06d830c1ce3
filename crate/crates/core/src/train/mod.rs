//! Training and evaluation loops.

mod config;

pub use config::{EfcrMode, TrainConfig};

use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::autodiff::{Tape, Var};
use crate::data::{augment_crop, Dataset, Rng, Sample};
use crate::error::{MptError, Result};
use crate::freq::{cr_basic, cr_extended, efcr_ex, efcr_objective, gaussian_reblur, ContrastiveBatch, ExMode, LossTerms};
use crate::metrics::{psnr, ssim};
use crate::network::{build_model, mpt_eval, mpt_forward, save_checkpoint, MptConfig, ParameterStore, Params};
use crate::optim::{clip_grad_norm, cosine_lr, AdamW};
use crate::tensor::{Element, Tensor};

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub step: u64,
    pub lr: f64,
    pub l1: f64,
    pub lcr: f64,
    pub total: f64,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step={} lr={} l1={} lcr={} total={}", self.step, self.lr, self.l1, self.lcr, self.total)
    }
}

/// Stacks `[h, w, c]` images of one shape into `[n, h, w, c]`.
pub fn stack<T: Element>(images: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| MptError::invalid("stack", "no images"))?;
    let mut shape = vec![images.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.numel() * images.len());
    for im in images {
        if im.shape() != first.shape() {
            return Err(MptError::shape("stack", format!("{:?} vs {:?}", im.shape(), first.shape())));
        }
        data.extend_from_slice(im.data());
    }
    Tensor::new(shape, data)
}

/// Reblurs every sample of a batch with its own drawn kernel.
pub fn reblur_batch<T: Element>(x: &Tensor<T>, rng: &mut Rng) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, h, w, c) = x.nhwc()?;
    let per = h * w * c;
    let mut data = Vec::with_capacity(x.numel());
    let mut ks = Vec::with_capacity(n);
    for i in 0..n {
        let one = Tensor::new(vec![h, w, c], x.data()[i * per..(i + 1) * per].to_vec())?;
        let (b, k) = gaussian_reblur(&one, rng)?;
        data.extend_from_slice(b.data());
        ks.push(k);
    }
    Ok((Tensor::new(x.shape().to_vec(), data)?, ks))
}

struct Batch<T: Element> {
    input: Tensor<T>,
    gt: Option<Tensor<T>>,
}

fn sample_batch<T: Element>(pool: &[&Sample<T>], rng: &mut Rng, batch: usize, patch: usize) -> Result<Batch<T>> {
    let mut inputs = Vec::with_capacity(batch);
    let mut gts = Vec::with_capacity(batch);
    for _ in 0..batch {
        let s = pool[rng.below(pool.len())];
        match &s.sharp {
            Some(sharp) => {
                let (b, g) = augment_crop((&s.blur, sharp), rng, patch)?;
                inputs.push(b);
                gts.push(g);
            }
            None => {
                let (b, _) = augment_crop((&s.blur, &s.blur), rng, patch)?;
                inputs.push(b);
            }
        }
    }
    Ok(Batch {
        input: stack(&inputs)?,
        gt: if gts.is_empty() { None } else { Some(stack(&gts)?) },
    })
}

/// Losses of one step and the parameter gradients.
pub struct StepResult<T: Element> {
    pub terms: LossTerms,
    pub grads: IndexMap<String, Tensor<T>>,
}

/// Stateful loop over training steps.
pub struct Trainer<'d, T: Element = f32> {
    pub tc: TrainConfig,
    pub store: ParameterStore<T>,
    pub opt: AdamW<T>,
    pub step: u64,
    pub log: Vec<LogEntry>,
    train: Vec<&'d Sample<T>>,
    extra: Vec<&'d Sample<T>>,
    data_rng: Rng,
    reblur_rng: Rng,
    extra_rng: Rng,
}

impl<'d, T: Element> Trainer<'d, T> {
    pub fn new(tc: TrainConfig, train: Vec<&'d Sample<T>>, extra: Vec<&'d Sample<T>>) -> Result<Self> {
        tc.validate()?;
        if train.is_empty() {
            return Err(MptError::invalid("train", "no training samples"));
        }
        if train.iter().any(|s| s.sharp.is_none()) {
            return Err(MptError::invalid("train", "main dataset must be paired"));
        }
        if tc.efcr.uses_extra() {
            if extra.is_empty() {
                return Err(MptError::invalid("train", "extra dataset is empty"));
            }
            if tc.efcr == EfcrMode::ExLabeled && extra.iter().any(|s| s.sharp.is_none()) {
                return Err(MptError::invalid("train", "labeled extra mode needs paired extra data"));
            }
        }
        let root = Rng::new(tc.seed);
        let store = build_model(&tc.model, tc.seed)?;
        Ok(Trainer {
            opt: AdamW::new(tc.beta1, tc.beta2, tc.eps, tc.weight_decay),
            store,
            step: 0,
            log: Vec::new(),
            train,
            extra,
            data_rng: root.split(1),
            reblur_rng: root.split(2),
            extra_rng: root.split(3),
            tc,
        })
    }

    fn objective<'t>(&mut self, tape: &'t Tape<T>, params: &Params<'t, T>, batch: &Batch<T>) -> Result<(Var<'t, T>, LossTerms)> {
        let cfg = &self.tc.model;
        let input = tape.constant(batch.input.clone());
        let gt = tape.constant(batch.gt.clone().expect("main batches are paired"));
        let output = mpt_forward(params, cfg, &input)?;
        let l1 = output.mean_abs_diff(&gt)?;
        let plain = |l1: Var<'t, T>| {
            let v = l1.value().item().to_f64c();
            let terms = LossTerms {
                l1: v,
                total: v,
                n: batch.input.shape()[0],
                ..LossTerms::default()
            };
            (l1, terms)
        };
        let beta = self.tc.beta;
        if self.tc.efcr == EfcrMode::Off || beta == 0.0 {
            return Ok(plain(l1));
        }
        let reblur = |x: &Tensor<T>, rng: &mut Rng| -> Result<(Var<'t, T>, Var<'t, T>, Vec<usize>)> {
            let (b_in, ks) = reblur_batch(x, rng)?;
            let b_in = tape.constant(b_in);
            let b_out = mpt_forward(params, cfg, &b_in)?;
            Ok((b_in, b_out, ks))
        };
        let main = |b_in: Option<Var<'t, T>>, b_out: Option<Var<'t, T>>, ks: Vec<usize>| ContrastiveBatch {
            gt: Some(gt.clone()),
            input: input.clone(),
            output: output.clone(),
            b_in,
            b_out,
            kernel_sizes: ks,
        };
        match self.tc.efcr {
            EfcrMode::Off => unreachable!(),
            EfcrMode::Basic => {
                let (b_in, b_out, ks) = reblur(&batch.input, &mut self.reblur_rng)?;
                let cb = main(Some(b_in), Some(b_out), ks);
                let (pos, neg) = cr_basic(&cb)?;
                let ext = cr_extended(&cb)?;
                efcr_objective(&l1, &pos, &neg, &ext, beta)
            }
            EfcrMode::ExLabeled | EfcrMode::ExUnlabeled => {
                let (bs, patch) = (self.tc.batch, self.tc.patch);
                let eb = sample_batch(&self.extra, &mut self.extra_rng, bs, patch)?;
                let e_input = tape.constant(eb.input.clone());
                let labeled = self.tc.efcr == EfcrMode::ExLabeled;
                let e_output = if labeled { mpt_forward(params, cfg, &e_input)? } else { e_input.clone() };
                let (b_in, b_out, ks) = reblur(&eb.input, &mut self.reblur_rng)?;
                let extra = ContrastiveBatch {
                    gt: eb.gt.map(|g| tape.constant(g)),
                    input: e_input,
                    output: e_output,
                    b_in: Some(b_in),
                    b_out: Some(b_out),
                    kernel_sizes: ks,
                };
                let mode = if labeled { ExMode::LabeledExtra } else { ExMode::UnlabeledExtra };
                let (pos, neg, ext) = efcr_ex(&main(None, None, Vec::new()), &extra, mode)?;
                efcr_objective(&l1, &pos, &neg, &ext, beta)
            }
        }
    }

    /// Loss and gradients on the next batch without updating parameters.
    pub fn compute_step(&mut self) -> Result<StepResult<T>> {
        let batch = sample_batch(&self.train, &mut self.data_rng, self.tc.batch, self.tc.patch)?;
        let tape = Tape::new();
        let store = self.store.clone();
        let params = store.leaves(&tape);
        let (total, terms) = match self.objective(&tape, &params, &batch) {
            Err(MptError::NonFinite(what)) => return Err(self.abort_with(&LossTerms::default(), &what)),
            r => r?,
        };
        if !terms.total.is_finite() {
            return Err(self.abort(&terms));
        }
        let grads = tape.backward(&total)?;
        let grads = params.collect_grads(&grads);
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(self.abort_with(&terms, &format!("gradient of {}", name)));
        }
        Ok(StepResult { terms, grads })
    }

    fn abort(&self, terms: &LossTerms) -> MptError {
        self.abort_with(terms, "loss")
    }

    fn abort_with(&self, terms: &LossTerms, what: &str) -> MptError {
        let mut detail = format!("{} at step {} ({:?})", what, self.step, terms);
        if let Some(path) = &self.tc.checkpoint_path {
            let dump = dump_path(path, self.step);
            match save_checkpoint(&self.store, &dump) {
                Ok(()) => detail.push_str(&format!("; state dumped to {}", dump.display())),
                Err(e) => detail.push_str(&format!("; state dump failed: {}", e)),
            }
        }
        MptError::NonFinite(detail)
    }

    /// One optimizer step.
    pub fn step(&mut self) -> Result<LogEntry> {
        let lr = cosine_lr(self.step, self.tc.iterations, self.tc.lr_max, self.tc.lr_min)?;
        let mut r = self.compute_step()?;
        clip_grad_norm(&mut r.grads, self.tc.grad_clip);
        self.opt.step(&mut self.store, &r.grads, lr)?;
        let entry = LogEntry {
            step: self.step,
            lr,
            l1: r.terms.l1,
            lcr: r.terms.l_cr,
            total: r.terms.total,
        };
        self.step += 1;
        self.log.push(entry);
        if let Some(path) = &self.tc.checkpoint_path {
            if self.tc.checkpoint_every > 0 && self.step.is_multiple_of(self.tc.checkpoint_every) {
                save_checkpoint(&self.store, path)?;
            }
        }
        Ok(entry)
    }
}

fn dump_path(path: &Path, step: u64) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(format!(".step{}.nonfinite", step));
    PathBuf::from(s)
}

/// Metrics of one restored image next to the unrestored baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
    pub baseline_l1: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Samples without ground truth that were left out.
    pub skipped: usize,
}

impl EvalReport {
    fn mean(&self, f: impl Fn(&EvalRow) -> f64) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_psnr(&self) -> f64 {
        self.mean(|r| r.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        self.mean(|r| r.ssim)
    }

    pub fn mean_l1(&self) -> f64 {
        self.mean(|r| r.l1)
    }

    pub fn baseline_psnr(&self) -> f64 {
        self.mean(|r| r.baseline_psnr)
    }

    pub fn baseline_ssim(&self) -> f64 {
        self.mean(|r| r.baseline_ssim)
    }

    pub fn baseline_l1(&self) -> f64 {
        self.mean(|r| r.baseline_l1)
    }
}

fn mean_abs<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64c() - y.to_f64c()).abs())
        .sum::<f64>()
        / a.numel().max(1) as f64
}

/// Restores one image and clamps it to `[0, 1]`.
pub fn deblur<T: Element>(store: &ParameterStore<T>, cfg: &MptConfig, img: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(mpt_eval(store, cfg, img)?.map(|v| v.max(T::zero()).min(T::one())))
}

/// PSNR, SSIM and L1 of restored and unrestored images against ground truth, in sample order.
pub fn evaluate<T: Element>(store: &ParameterStore<T>, cfg: &MptConfig, samples: &[&Sample<T>]) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for s in samples {
        let Some(sharp) = &s.sharp else {
            report.skipped += 1;
            continue;
        };
        let out = deblur(store, cfg, &s.blur)?;
        report.rows.push(EvalRow {
            image: s.name.clone(),
            psnr: psnr(&out, sharp, 1.0)?,
            ssim: ssim(&out, sharp)?,
            l1: mean_abs(&out, sharp),
            baseline_psnr: psnr(&s.blur, sharp, 1.0)?,
            baseline_ssim: ssim(&s.blur, sharp)?,
            baseline_l1: mean_abs(&s.blur, sharp),
        });
    }
    Ok(report)
}

/// Evaluates a dataset directory; unpaired files count as skipped.
pub fn evaluate_dir<T: Element>(store: &ParameterStore<T>, cfg: &MptConfig, root: &Path) -> Result<EvalReport> {
    let ds: Dataset<T> = Dataset::load(root, false)?;
    let samples: Vec<&Sample<T>> = ds.samples.iter().collect();
    let mut r = evaluate(store, cfg, &samples)?;
    r.skipped += ds.skipped;
    Ok(r)
}

/// Result of a full run.
pub struct TrainOutcome<T: Element = f32> {
    pub store: ParameterStore<T>,
    pub log: Vec<LogEntry>,
    pub validation: EvalReport,
}

/// Trains on the hash-selected training split and evaluates the held-out split.
pub fn train<T: Element>(
    tc: &TrainConfig,
    data: &Dataset<T>,
    extra: Option<&Dataset<T>>,
    mut on_log: impl FnMut(&LogEntry),
) -> Result<TrainOutcome<T>> {
    if tc.efcr.uses_extra() && extra.is_none() {
        return Err(MptError::config("extra_data", "required by the selected efcr mode"));
    }
    let (train_split, val_split) = data.split();
    let extra_samples: Vec<&Sample<T>> = extra.map(|d| d.samples.iter().collect()).unwrap_or_default();
    let mut trainer = Trainer::new(tc.clone(), train_split, extra_samples)?;
    while trainer.step < tc.iterations {
        let e = trainer.step()?;
        if tc.log_every > 0 && (e.step % tc.log_every == 0 || e.step + 1 == tc.iterations) {
            on_log(&e);
        }
    }
    if let Some(path) = &tc.checkpoint_path {
        save_checkpoint(&trainer.store, path)?;
    }
    let validation = evaluate(&trainer.store, &tc.model, &val_split)?;
    Ok(TrainOutcome {
        store: trainer.store,
        log: trainer.log,
        validation,
    })
}
