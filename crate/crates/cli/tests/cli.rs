use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mpt_core::data::{decode_image, encode_image};
use mpt_core::network::{build_model, save_checkpoint, zero_head, MptConfig};
use mpt_core::Tensor;

fn mpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpt")).args(args).output().expect("spawn mpt")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// The echoed configuration block of a train invocation.
fn echoed(o: &Output) -> String {
    stdout(o)
        .lines()
        .skip_while(|l| !l.starts_with("# resolved"))
        .take_while(|l| !l.starts_with("# end"))
        .map(|l| format!("{}\n", l))
        .collect()
}

fn read_dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["sharp", "blur"] {
        let mut names: Vec<_> = fs::read_dir(root.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for n in names {
            out.push((n.display().to_string(), fs::read(&n).unwrap()));
        }
    }
    out
}

#[test]
fn synth_is_rerunnable_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = mpt(&["synth", "--out", p(d), "--count", "8", "--size", "64", "--seed", "7"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (ra, rb) = (read_dir_bytes(&a), read_dir_bytes(&b));
    assert_eq!(ra.len(), 16);
    assert!(ra.iter().zip(&rb).all(|(x, y)| x.1 == y.1));
    let o = mpt(&["synth", "--out", p(&dir.path().join("c")), "--count", "8", "--size", "64", "--seed", "8"]);
    assert!(o.status.success());
    assert_ne!(read_dir_bytes(&dir.path().join("c"))[0].1, ra[0].1);
}

#[test]
fn synth_mask_writes_masks() {
    let dir = tempfile::tempdir().unwrap();
    let o = mpt(&["synth", "--out", p(dir.path()), "--count", "2", "--size", "32", "--mask", "--scene", "checker"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("mask/0000.pgm").is_file());
    let o = mpt(&["synth", "--out", p(dir.path()), "--scene", "meadow"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn identity_checkpoint_deblur_returns_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = build_model::<f32>(&MptConfig::desk(), 0).unwrap();
    zero_head(&mut store).unwrap();
    let ckpt = dir.path().join("id.mptt");
    save_checkpoint(&store, &ckpt).unwrap();
    // odd size exercises padding and cropping
    let img: Tensor<f32> = Tensor::from_fn([37, 45, 3], |i| ((i * 7919) % 256) as f32 / 255.0);
    let input = dir.path().join("x.ppm");
    fs::write(&input, encode_image(&img).unwrap()).unwrap();
    let out = dir.path().join("y.ppm");
    let o = mpt(&["deblur", "--ckpt", p(&ckpt), "--in", p(&input), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(&out).unwrap(), fs::read(&input).unwrap());
    assert_eq!(decode_image::<f32>(&fs::read(&out).unwrap()).unwrap(), img);
}

#[test]
fn train_eval_and_attn_dist_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert!(mpt(&["synth", "--out", p(&data), "--count", "4", "--size", "32"]).status.success());
    let ckpt = dir.path().join("m.mptt");
    let args = ["train", "--data", p(&data), "--iters", "2", "--batch", "1", "--patch", "16", "--out-ckpt", p(&ckpt)];
    let o = mpt(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("step=0 lr=0.002 l1="));
    assert!(ckpt.is_file());
    let csv = dir.path().join("out/eval.csv");
    let o = mpt(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--csv", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("image,psnr,ssim,nad"));
    assert_eq!(text.lines().count(), 5);

    let o = mpt(&["attn-dist", "--data", p(&data.join("sharp")), "--grid", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<f64> = stdout(&o)
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn preset_flag_precedence() {
    let o = mpt(&["train", "--preset", "paper", "--batch", "2", "--data", "/nonexistent", "--out-ckpt", "c"]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = echoed(&o);
    for line in ["batch=2", "dims=40,80,160,320", "blocks=6,6,6,6", "heads=1,2,4,8", "alpha=2.6", "beta=0.00001", "patch=256"] {
        assert!(cfg.lines().any(|l| l == line), "{} missing from\n{}", line, cfg);
    }
    let o = mpt(&["train", "--preset", "desk", "--data", "/nonexistent", "--out-ckpt", "c"]);
    let cfg = echoed(&o);
    assert!(cfg.contains("dims=8,16,32,64\n") && cfg.contains("window=4\n"));
}

#[test]
fn config_file_sits_between_preset_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.cfg");
    fs::write(&file, "# overrides\nbatch=3\nlr_max=0.001\nseed=9\n").unwrap();
    let base = ["train", "--config", p(&file), "--data", "/nonexistent", "--out-ckpt", "c"];
    let cfg = echoed(&mpt(&base));
    assert!(cfg.contains("\nbatch=3\n") && cfg.contains("\nlr_max=0.001\n") && cfg.contains("\nseed=9\n"));
    let mut flagged = base.to_vec();
    flagged.extend(["--batch", "5", "--seed", "4"]);
    let cfg = echoed(&mpt(&flagged));
    assert!(cfg.contains("\nbatch=5\n") && cfg.contains("\nlr_max=0.001\n") && cfg.contains("\nseed=4\n"));
}

#[test]
fn echoed_config_reloads_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    let first = echoed(&mpt(&[
        "train", "--preset", "paper", "--iters", "77", "--efcr", "basic", "--data", "/nonexistent", "--out-ckpt", "c",
    ]));
    let file = dir.path().join("resolved.cfg");
    fs::write(&file, &first).unwrap();
    let second = echoed(&mpt(&["train", "--preset", "desk", "--config", p(&file), "--data", "/nonexistent", "--out-ckpt", "c"]));
    assert_eq!(first, second);
}

#[test]
fn invalid_values_name_the_key_and_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.cfg");
    fs::write(&file, "windw=4\n").unwrap();
    let o = mpt(&["train", "--config", p(&file), "--data", "x", "--out-ckpt", "c"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("windw"));
    fs::write(&file, "batch=-1\n").unwrap();
    let o = mpt(&["train", "--config", p(&file), "--data", "x", "--out-ckpt", "c"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("batch"));
    let o = mpt(&["train", "--efcr", "ex-labeled", "--data", "x", "--out-ckpt", "c"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("extra_data"));
}

#[test]
fn usage_errors_exit_one_with_synopsis() {
    for args in [&["train", "--bogus"][..], &[][..], &["fly"][..], &["selftest", "--precision", "f16"][..]] {
        let o = mpt(args);
        assert_eq!(o.status.code(), Some(1), "{:?}", args);
        assert!(stderr(&o).to_lowercase().contains("usage"), "{:?}: {}", args, stderr(&o));
    }
    assert_eq!(mpt(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.mptt");
    fs::write(&bad, b"MPTT\x01\x00garbage").unwrap();
    let o = mpt(&["deblur", "--ckpt", p(&bad), "--in", "x.ppm", "--out", "y.ppm"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));
    let o = mpt(&["eval", "--ckpt", p(&dir.path().join("missing.mptt")), "--data", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    for precision in ["f32", "f64"] {
        let o = mpt(&["selftest", "--precision", precision]);
        let out = stdout(&o);
        assert!(o.status.success(), "{}", out);
        assert!(out.lines().filter(|l| l.starts_with("PASS ")).count() > 50);
        assert!(!out.contains("FAIL "));
        assert!(out.contains("PASS receptive_field_footprint"));
    }
}
