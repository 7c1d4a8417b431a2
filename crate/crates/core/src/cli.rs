//! `maf` command-line interface.
//!
//! Artifacts are written atomically; progress goes to stderr and results to
//! stdout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ablation::{report_csv, run_ablation};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config_file::RunConfig;
use crate::dataset::{read_dataset, write_dataset, LoadedDataset, MANIFEST};
use crate::error::{MafError, Result};
use crate::model::init_params;
use crate::synth::{generate_synthetic, Sample, SynthSpec, DEFAULT_NOISE_STD};
use crate::tensor_file::{load_tensor, write_atomic};
use crate::train::{evaluate, train_with_progress};
use crate::visualize::attention_overlay;

#[derive(Debug, Parser)]
#[command(name = "maf", version, about = "Multi-attention fusion drowsiness classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with `train/` and `test/` splits.
    Gen(GenArgs),
    /// Train a model and write `model.ckpt` and `history.csv`.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write `predictions.csv`.
    Eval(EvalArgs),
    /// Run the module ablation and LANet-count sweep.
    Ablate(AblateArgs),
    /// Render the fused attention map of one image as a PPM overlay.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// `key=value` run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Total samples across both splits.
    #[arg(long, default_value_t = 1536)]
    pub count: usize,
    /// Fraction of samples placed in the test split.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    pub occlusion: f64,
    #[arg(long, default_value_t = DEFAULT_NOISE_STD)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset root produced by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A split directory, or a dataset root (its `test/` split is used).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A `1×H×W` MAFT image.
    #[arg(long)]
    pub image: PathBuf,
    /// Output `.ppm` path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the text meant for stdout.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| MafError::Config(e.to_string()))?;
    execute(cli.command)
}

pub fn execute(command: Command) -> Result<String> {
    match command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Visualize(a) => cmd_visualize(&a),
    }
}

fn load_run_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_threads<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(MafError::Config("--jobs must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| MafError::Contract(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MafError::io(dir, e))
}

fn cell_counts(samples: &[Sample]) -> [[usize; 2]; 2] {
    let mut cells = [[0; 2]; 2];
    for s in samples {
        cells[s.label][s.occluded as usize] += 1;
    }
    cells
}

/// Writes both splits into a staging directory and renames it into place.
pub fn cmd_gen(a: &GenArgs) -> Result<String> {
    let cfg = load_run_config(&a.common)?;
    if !(0.0..1.0).contains(&a.test_fraction) {
        return Err(MafError::Config(format!("test_fraction ({}) must lie in [0, 1)", a.test_fraction)));
    }
    let seed = a.common.seed.unwrap_or(cfg.train.seed);
    let spec = SynthSpec::new(cfg.model.image_size, a.count, seed)
        .with_occlusion(a.occlusion)
        .with_noise(a.noise);
    let samples = generate_synthetic(&spec)?;
    let n_test = (a.count as f64 * a.test_fraction).round() as usize;
    let (train, test) = samples.split_at(a.count - n_test);
    if a.out.exists() {
        return Err(MafError::Config(format!("{} already exists", a.out.display())));
    }
    let parent = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    create_dir(parent)?;
    let name = a.out.file_name().ok_or_else(|| MafError::Config("--out needs a directory name".into()))?;
    let staging = parent.join(format!(".{}.partial", name.to_string_lossy()));
    let _ = fs::remove_dir_all(&staging);
    let staged = write_dataset(&staging.join("train"), train).and_then(|_| write_dataset(&staging.join("test"), test));
    if let Err(e) = staged.and_then(|_| fs::rename(&staging, &a.out).map_err(|e| MafError::io(&a.out, e))) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }

    let mut out = String::new();
    for (split, set) in [("train", train), ("test", test)] {
        let cells = cell_counts(set);
        for (label, row) in cells.iter().enumerate() {
            for (occ, n) in row.iter().enumerate() {
                let _ = writeln!(out, "{split} label={label} occluded={} count={n}", occ == 1);
            }
        }
    }
    let _ = writeln!(out, "total={}", samples.len());
    Ok(out)
}

fn load_split(dir: &Path) -> Result<LoadedDataset> {
    if !dir.join(MANIFEST).is_file() {
        return Err(MafError::Config(format!("{} has no {MANIFEST}", dir.display())));
    }
    read_dataset(dir)
}

pub fn cmd_train(a: &TrainArgs) -> Result<String> {
    let cfg = load_run_config(&a.common)?;
    let train_set = load_split(&a.data.join("train"))?;
    let test_set = load_split(&a.data.join("test"))?;
    let params = init_params(&cfg.model, cfg.train.seed)?;
    let (params, history) = with_threads(a.common.jobs, || {
        train_with_progress(&cfg.model, params, &train_set.samples, &test_set.samples, &cfg.train, |r| {
            eprintln!(
                "epoch {:>3} lr {:.5} loss {:.4} train_acc {:.4} test_acc {:.4} test_f1 {:.4}",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc, r.test_f1
            );
        })
    })??;
    create_dir(&a.out)?;
    save_checkpoint(a.out.join("model.ckpt"), &cfg.model, &params)?;
    write_atomic(&a.out.join("history.csv"), history.to_csv().as_bytes())?;
    write_atomic(&a.out.join("config.txt"), cfg.to_text().as_bytes())?;
    let last = history.last().expect("at least one epoch");
    Ok(format!("acc={:.4} f1={:.4}\n", last.test_acc, last.test_f1))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let (config, params) = load_checkpoint(&a.checkpoint)?;
    let split = if a.data.join(MANIFEST).is_file() {
        a.data.clone()
    } else {
        a.data.join("test")
    };
    let data = load_split(&split)?;
    if data.samples.iter().any(|s| s.image.shape() != [1, config.image_size.0, config.image_size.1]) {
        return Err(MafError::Config(format!(
            "dataset images do not match the checkpoint's image_size {:?}",
            config.image_size
        )));
    }
    let eval = with_threads(a.common.jobs, || evaluate(&params, &data.samples, &config))??;
    let mut csv = String::from("path,label,pred\n");
    for (e, p) in data.entries.iter().zip(&eval.predictions) {
        let _ = writeln!(csv, "{},{},{}", e.path, e.label, p);
    }
    create_dir(&a.out)?;
    write_atomic(&a.out.join("predictions.csv"), csv.as_bytes())?;
    Ok(format!("acc={:.4} f1={:.4}\n", eval.acc, eval.f1))
}

pub fn cmd_ablate(a: &AblateArgs) -> Result<String> {
    let cfg = load_run_config(&a.common)?;
    let train_set = load_split(&a.data.join("train"))?;
    let test_set = load_split(&a.data.join("test"))?;
    create_dir(&a.out)?;
    let jobs = a.common.jobs.unwrap_or_else(rayon::current_num_threads);
    let rows = run_ablation(&cfg, &train_set.samples, &test_set.samples, jobs, Some(&a.out), |job, acc, f1| {
        eprintln!("{} n={} seed={} acc={acc:.4} f1={f1:.4}", job.variant, job.n, job.seed);
    })?;
    let report = report_csv(&rows);
    write_atomic(&a.out.join("ablation.csv"), report.as_bytes())?;
    Ok(report)
}

pub fn cmd_visualize(a: &VisualizeArgs) -> Result<String> {
    let (config, params) = load_checkpoint(&a.checkpoint)?;
    let raw = load_tensor(&a.image)?;
    let image = match raw.shape() {
        [h, w] => raw.reshape(&[1, *h, *w])?,
        _ => raw,
    };
    let overlay = attention_overlay(&params, &config, &image)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_atomic(&a.out, &overlay.to_ppm())?;
    Ok(format!("wrote {}×{} overlay to {}\n", overlay.width, overlay.height, a.out.display()))
}

/// Entry point used by the binary.
pub fn main() -> std::process::ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match execute(cli.command) {
        Ok(out) => {
            print!("{out}");
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}

