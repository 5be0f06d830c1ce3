use std::path::Path;

use mpt_core::data::{write_synth_dataset, Dataset, Sample, SynthOptions};
use mpt_core::network::{build_model, load_checkpoint, save_checkpoint, zero_head, MptConfig};
use mpt_core::optim::cosine_lr;
use mpt_core::train::{evaluate, train, EfcrMode, TrainConfig, Trainer};
use mpt_core::verify::tiny_config;
use mpt_core::MptError;

fn dataset(root: &Path, count: usize, seed: u64) -> Dataset<f32> {
    let opts = SynthOptions {
        count,
        size: 32,
        scene: None,
        mask: false,
        feather: 0,
        seed,
    };
    write_synth_dataset(root, &opts).unwrap();
    Dataset::load(root, true).unwrap()
}

fn small(iterations: u64) -> TrainConfig {
    let mut tc = TrainConfig::desk();
    tc.iterations = iterations;
    tc.batch = 2;
    tc.patch = 16;
    tc
}

#[test]
fn log_steps_and_learning_rates_follow_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), 6, 1);
    let tc = small(5);
    let mut seen = Vec::new();
    let out = train(&tc, &ds, None, |e| seen.push(*e)).unwrap();
    assert_eq!(out.log.len(), 5);
    for (i, e) in out.log.iter().enumerate() {
        assert_eq!(e.step, i as u64);
        assert_eq!(e.lr, cosine_lr(i as u64, 5, tc.lr_max, tc.lr_min).unwrap());
        assert_eq!(e.lcr, 0.0);
        assert_eq!(e.total, e.l1);
    }
    // step 0 and the last step are always reported
    assert_eq!(seen.iter().map(|e| e.step).collect::<Vec<_>>(), [0, 4]);
    assert!(out.log[0].to_string().starts_with("step=0 lr=0.002 l1="));
}

#[test]
fn same_seed_reproduces_the_log_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), 6, 2);
    let mut tc = small(4);
    tc.efcr = EfcrMode::Basic;
    tc.beta = 0.5;
    let a = train(&tc, &ds, None, |_| {}).unwrap();
    let b = train(&tc, &ds, None, |_| {}).unwrap();
    let bits = |log: &[mpt_core::train::LogEntry]| log.iter().map(|e| (e.l1.to_bits(), e.lcr.to_bits(), e.total.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a.log), bits(&b.log));
    assert_eq!(a.store, b.store);
    tc.seed = 1;
    let c = train(&tc, &ds, None, |_| {}).unwrap();
    assert_ne!(bits(&a.log), bits(&c.log));
}

#[test]
fn basic_with_zero_beta_matches_off_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), 6, 3);
    let off = small(3);
    let mut basic = off.clone();
    basic.efcr = EfcrMode::Basic;
    basic.beta = 0.0;
    let a = train(&off, &ds, None, |_| {}).unwrap();
    let b = train(&basic, &ds, None, |_| {}).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.store, b.store);
}

#[test]
fn contrastive_term_is_logged_and_added() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), 6, 4);
    let mut tc = small(2);
    tc.efcr = EfcrMode::Basic;
    tc.beta = 0.1;
    let out = train(&tc, &ds, None, |_| {}).unwrap();
    for e in &out.log {
        assert!(e.lcr > 0.0);
        assert!((e.total - (e.l1 + 0.1 * e.lcr)).abs() < 1e-6);
    }
}

#[test]
fn extra_modes_train_on_extra_data() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(&dir.path().join("main"), 6, 5);
    let extra = dataset(&dir.path().join("extra"), 4, 6);
    for mode in [EfcrMode::ExLabeled, EfcrMode::ExUnlabeled] {
        let mut tc = small(2);
        tc.efcr = mode;
        tc.extra_data = Some(dir.path().join("extra"));
        let out = train(&tc, &ds, Some(&extra), |_| {}).unwrap();
        assert!(out.log.iter().all(|e| e.lcr > 0.0 && e.total.is_finite()), "{}", mode);
        assert!(matches!(train(&tc, &ds, None, |_| {}), Err(MptError::Config { .. })));
    }
}

#[test]
fn gradients_reach_nearly_every_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), 6, 7);
    for efcr in [EfcrMode::Off, EfcrMode::Basic] {
        let mut tc = small(1);
        tc.efcr = efcr;
        let samples: Vec<&Sample<f32>> = ds.samples.iter().collect();
        let mut trainer = Trainer::new(tc, samples, Vec::new()).unwrap();
        let r = trainer.compute_step().unwrap();
        let total: usize = r.grads.values().map(|g| g.numel()).sum();
        let nonzero: usize = r.grads.values().map(|g| g.data().iter().filter(|v| **v != 0.0).count()).sum();
        assert!(nonzero as f64 >= 0.99 * total as f64, "{}: {} of {}", efcr, nonzero, total);
        let dead: Vec<&String> = r.grads.iter().filter(|(_, g)| g.data().iter().all(|v| *v == 0.0)).map(|(k, _)| k).collect();
        assert!(dead.is_empty(), "{:?}", dead);
    }
}

#[test]
fn identity_model_scores_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), 4, 8);
    let cfg = tiny_config();
    let mut store = build_model::<f32>(&cfg, 0).unwrap();
    zero_head(&mut store).unwrap();
    let samples: Vec<&Sample<f32>> = ds.samples.iter().collect();
    let report = evaluate(&store, &cfg, &samples).unwrap();
    assert_eq!(report.rows.len(), 4);
    for r in &report.rows {
        assert_eq!(r.psnr, r.baseline_psnr);
        assert_eq!(r.ssim, r.baseline_ssim);
        assert_eq!(r.l1, r.baseline_l1);
    }
}

#[test]
fn checkpoints_restore_model_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(&dir.path().join("d"), 6, 9);
    let mut tc = small(2);
    tc.model = tiny_config();
    tc.checkpoint_path = Some(dir.path().join("ck/model.mptt"));
    let out = train(&tc, &ds, None, |_| {}).unwrap();
    let (store, cfg) = load_checkpoint::<f32>(tc.checkpoint_path.as_ref().unwrap()).unwrap();
    assert_eq!(cfg, tc.model);
    assert_eq!(store, out.store);
    let (_, val) = ds.split();
    assert_eq!(evaluate(&store, &cfg, &val).unwrap(), out.validation);

    // a store whose parameter set disagrees with its own config is refused
    let other = dir.path().join("ck/other.mptt");
    let mut wrong = build_model::<f32>(&MptConfig::desk(), 0).unwrap();
    wrong.meta = store.meta.clone();
    save_checkpoint(&wrong, &other).unwrap();
    assert!(load_checkpoint::<f32>(&other).is_err());
}

#[test]
fn invalid_training_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path(), 4, 10);
    let mut tc = small(1);
    tc.patch = 64;
    assert!(train(&tc, &ds, None, |_| {}).is_err());
    let mut tc = small(1);
    tc.lr_min = 1.0;
    assert!(matches!(train(&tc, &ds, None, |_| {}), Err(MptError::Config { key, .. }) if key == "lr_min"));
}
