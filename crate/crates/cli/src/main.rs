use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use mpt_core::data::{load_image, save_image, write_synth_dataset, Dataset, Scene, SynthOptions, BLUR_DIR};
use mpt_core::metrics::{metrics_csv, AttnDistReport, MetricRow, DEFAULT_GRID};
use mpt_core::network::load_checkpoint;
use mpt_core::train::{deblur, evaluate_dir, train, EfcrMode, TrainConfig};
use mpt_core::verify::{selftest, Check};
use mpt_core::MptError;

/// Multi-pyramid transformer deblurring toolkit.
#[derive(Parser, Debug)]
#[command(name = "mpt", version, about)]
struct Cli {
    /// Root seed of every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Built-in configuration the config file and flags override.
    #[arg(long, global = true, value_parser = ["paper", "desk", "paper-v1", "paper-v2", "paper-v3"])]
    preset: Option<String>,
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic paired dataset.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint.
    Train(TrainArgs),
    /// Restore one image with a checkpoint.
    Deblur(DeblurArgs),
    /// Per-image PSNR and SSIM of a checkpoint on a paired dataset.
    Eval(EvalArgs),
    /// Normalized attention distance of every image in a directory.
    AttnDist(AttnDistArgs),
    /// Gradient checks, roundtrips and structural invariants.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// `cells`, `stripes`, `checker` or `mixed`.
    #[arg(long, default_value = "mixed")]
    scene: String,
    /// Blur only a random region and store its mask.
    #[arg(long)]
    mask: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    extra_data: Option<PathBuf>,
    #[arg(long)]
    efcr: Option<EfcrArg>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    out_ckpt: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EfcrArg {
    Off,
    Basic,
    ExLabeled,
    ExUnlabeled,
}

impl From<EfcrArg> for EfcrMode {
    fn from(a: EfcrArg) -> Self {
        match a {
            EfcrArg::Off => EfcrMode::Off,
            EfcrArg::Basic => EfcrMode::Basic,
            EfcrArg::ExLabeled => EfcrMode::ExLabeled,
            EfcrArg::ExUnlabeled => EfcrMode::ExUnlabeled,
        }
    }
}

#[derive(Args, Debug)]
struct DeblurArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Writes the per-image table here instead of standard output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AttnDistArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, value_enum, default_value = "f32")]
    precision: Precision,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Precision {
    F32,
    F64,
}

/// Preset, then config file, then flags.
fn resolve(cli: &Cli, overrides: &[(&str, String)]) -> Result<TrainConfig> {
    let mut tc = TrainConfig::preset(cli.preset.as_deref().unwrap_or("desk"))?;
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        tc.apply_text(&text)?;
    }
    if let Some(seed) = cli.seed {
        tc.seed = seed;
    }
    for (k, v) in overrides {
        tc.apply(k, v)?;
    }
    tc.validate()?;
    Ok(tc)
}

fn echo_config(tc: &TrainConfig) {
    println!("# resolved configuration");
    print!("{}", tc.to_kv());
    println!("# end configuration");
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let tc = resolve(cli, &[])?;
    let scene = match a.scene.as_str() {
        "mixed" => None,
        s => Some(s.parse::<Scene>()?),
    };
    let opts = SynthOptions {
        count: a.count,
        size: a.size,
        scene,
        mask: a.mask,
        feather: 4,
        seed: tc.seed,
    };
    let written = write_synth_dataset(&a.out, &opts)?;
    println!("wrote {} files under {}", written.len(), a.out.display());
    Ok(())
}

fn run_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut o: Vec<(&str, String)> = vec![("checkpoint_path", a.out_ckpt.display().to_string())];
    if let Some(p) = &a.extra_data {
        o.push(("extra_data", p.display().to_string()));
    }
    if let Some(m) = a.efcr {
        o.push(("efcr", EfcrMode::from(m).name().to_string()));
    }
    if let Some(v) = a.iters {
        o.push(("iterations", v.to_string()));
    }
    if let Some(v) = a.batch {
        o.push(("batch", v.to_string()));
    }
    if let Some(v) = a.patch {
        o.push(("patch", v.to_string()));
    }
    let tc = resolve(cli, &o)?;
    echo_config(&tc);
    let data: Dataset<f32> = Dataset::load(&a.data, true)?;
    if data.is_empty() {
        bail!("no paired images under {}", a.data.display());
    }
    let extra = match (&tc.extra_data, tc.efcr.uses_extra()) {
        (Some(p), true) => Some(Dataset::<f32>::load(p, tc.efcr == EfcrMode::ExLabeled)?),
        _ => None,
    };
    let (tr, val) = data.split();
    println!("train {} validation {} skipped {}", tr.len(), val.len(), data.skipped);
    let out = train(&tc, &data, extra.as_ref(), |e| println!("{}", e))?;
    let v = &out.validation;
    println!(
        "validation psnr={:.4} ssim={:.4} l1={:.6} baseline_psnr={:.4} baseline_ssim={:.4} baseline_l1={:.6}",
        v.mean_psnr(),
        v.mean_ssim(),
        v.mean_l1(),
        v.baseline_psnr(),
        v.baseline_ssim(),
        v.baseline_l1()
    );
    println!("checkpoint {}", a.out_ckpt.display());
    Ok(())
}

fn run_deblur(a: &DeblurArgs) -> Result<()> {
    let (store, cfg) = load_checkpoint::<f32>(&a.ckpt)?;
    let img = load_image::<f32>(&a.input)?;
    if img.shape()[2] != cfg.in_channels {
        bail!("{} has {} channels, checkpoint expects {}", a.input.display(), img.shape()[2], cfg.in_channels);
    }
    save_image(&a.out, &deblur(&store, &cfg, &img)?)?;
    Ok(())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let (store, cfg) = load_checkpoint::<f32>(&a.ckpt)?;
    let report = evaluate_dir(&store, &cfg, &a.data)?;
    let rows: Vec<MetricRow> = report
        .rows
        .iter()
        .map(|r| MetricRow {
            image: r.image.clone(),
            psnr: Some(r.psnr),
            ssim: Some(r.ssim),
            nad: None,
        })
        .collect();
    write_text(a.csv.as_deref(), &metrics_csv(&rows))?;
    eprintln!(
        "images {} skipped {} psnr={:.4} ssim={:.4} baseline_psnr={:.4} baseline_ssim={:.4}",
        report.rows.len(),
        report.skipped,
        report.mean_psnr(),
        report.mean_ssim(),
        report.baseline_psnr(),
        report.baseline_ssim()
    );
    Ok(())
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = e?.path();
        if p.is_file() && matches!(p.extension().and_then(|x| x.to_str()), Some("ppm" | "pgm")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn run_attn_dist(a: &AttnDistArgs) -> Result<()> {
    let mut files = image_files(&a.data)?;
    if files.is_empty() && a.data.join(BLUR_DIR).is_dir() {
        files = image_files(&a.data.join(BLUR_DIR))?;
    }
    if files.is_empty() {
        bail!("no PPM or PGM images under {}", a.data.display());
    }
    let images = files.iter().map(|p| load_image::<f64>(p)).collect::<mpt_core::Result<Vec<_>>>()?;
    let label = a.data.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let report = AttnDistReport::compute(&images, a.grid, label)?;
    let rows: Vec<MetricRow> = files
        .iter()
        .zip(&report.per_image)
        .map(|(p, &nad)| MetricRow {
            image: p.file_name().unwrap().to_string_lossy().into_owned(),
            psnr: None,
            ssim: None,
            nad: Some(nad),
        })
        .collect();
    write_text(a.csv.as_deref(), &metrics_csv(&rows))?;
    eprintln!("dataset {} grid {} mean nad {:.6}", report.dataset_label, report.patch_grid, report.mean);
    Ok(())
}

fn run_selftest(a: &SelftestArgs) -> bool {
    let checks: Vec<Check> = match a.precision {
        Precision::F32 => selftest::<f32>(),
        Precision::F64 => selftest::<f64>(),
    };
    for c in &checks {
        println!("{}", c);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {} failed", checks.len(), failed);
    failed == 0
}

/// Usage line of the subcommand named on the command line, or of the whole tool.
fn synopsis() -> String {
    let mut cmd = Cli::command();
    let named = std::env::args()
        .skip(1)
        .find_map(|a| cmd.get_subcommands().find(|s| s.get_name() == a).map(|s| s.get_name().to_string()));
    match named.and_then(|n| cmd.find_subcommand_mut(&n).cloned()) {
        Some(mut sub) => sub.render_usage().to_string().replacen("Usage: ", "Usage: mpt ", 1),
        None => cmd.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", synopsis());
            }
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => run_synth(&cli, a),
        Command::Train(a) => run_train(&cli, a),
        Command::Deblur(a) => run_deblur(a),
        Command::Eval(a) => run_eval(a),
        Command::AttnDist(a) => run_attn_dist(a),
        Command::Selftest(a) => {
            return if run_selftest(a) { ExitCode::SUCCESS } else { ExitCode::from(2) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            let usage = matches!(e.downcast_ref::<MptError>(), Some(MptError::Config { .. }));
            if usage {
                eprintln!("\n{}\nFor more information, try '--help'.", synopsis());
            }
            ExitCode::from(if usage { 1 } else { 2 })
        }
    }
}
