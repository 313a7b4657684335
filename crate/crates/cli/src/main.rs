use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use recipe_cli::config::RunConfig;
use recipe_cli::dataset::Dataset;
use recipe_cli::eval::{cmd_ensemble, cmd_eval, EvalMode};
use recipe_cli::preview::augment_preview;
use recipe_cli::synthetic::{make_synthetic, nearest_centroid_accuracy, SyntheticSpec};
use recipe_cli::train::{train, TrainOptions};
use recipe_cli::{exit_code, UsageError};
use recipe_core::gradcheck::{run_all, AuditOptions};

#[derive(Parser)]
#[command(name = "recipe", version, about = "Train, evaluate and ensemble a compact image classifier")]
struct Cli {
    /// Run configuration (flat key = value file)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core); results do not depend on it
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, e.g. --set epochs=5 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Train one stage and write a checkpoint and log
    Train {
        /// Start from this checkpoint (overrides init_checkpoint)
        #[arg(long)]
        init: Option<PathBuf>,
        /// Allow metric-loss training without a cross-entropy checkpoint
        #[arg(long)]
        from_scratch: bool,
    },
    /// Write a probability file for a checkpoint and report top-1
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Samples to evaluate (defaults to val_manifest)
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "on")]
        tta: Switch,
    },
    /// Average probability files and report member and ensemble top-1
    Ensemble {
        /// Manifest holding the labels (defaults to val_manifest)
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Dump each augmentation stage for the first N training samples
    AugmentPreview {
        #[arg(long, default_value_t = 8)]
        n: usize,
    },
    /// Run the finite-difference gradient audits
    GradCheck {
        #[arg(long, default_value_t = 50)]
        points: usize,
        /// Scale analytic gradients by 1 + F before comparing (negative control)
        #[arg(long, default_value_t = 0.0, hide = true)]
        perturb: f64,
    },
    /// Generate the seeded synthetic texture dataset
    MakeSynthetic {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 50)]
        val_per_class: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
}

/// `println!` that stops quietly when stdout is closed (e.g. piped into `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim(), Path::new("."))?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.resolve_paths()?;
    Ok(cfg)
}

fn labels_manifest(given: &Option<PathBuf>, cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    given
        .clone()
        .or_else(|| cfg.val_manifest.clone())
        .ok_or_else(|| UsageError("no manifest given and val_manifest is not set".into()).into())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global().context("configuring worker threads")?;
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Train { init, from_scratch } => {
            if let Some(init) = init {
                cfg.init_checkpoint = Some(std::path::absolute(init)?);
            }
            let outcome = train(&cfg, &TrainOptions { from_scratch })?;
            outcome.warnings.iter().for_each(|w| eprintln!("{w}"));
            for r in &outcome.records {
                out!("epoch {:>3}  step {:>6}  lr {:.5}  loss {:.4}  top1 {:.4}", r.epoch, r.step, r.lr, r.loss, r.top1);
            }
            out!("checkpoint: {}", outcome.checkpoint.display());
        }
        Command::Eval { checkpoint, manifest, tta } => {
            let manifest = labels_manifest(&manifest, &cfg)?;
            let mode = match tta {
                Switch::On => EvalMode::Tta,
                Switch::Off => EvalMode::Single,
            };
            let outcome = cmd_eval(&cfg, &checkpoint, &manifest, mode)?;
            out!("top1 {:.4} over {} samples", outcome.top1, outcome.samples);
            out!("probabilities: {}", outcome.probs_path.display());
        }
        Command::Ensemble { manifest, files } => {
            let manifest = labels_manifest(&manifest, &cfg)?;
            let outcome = cmd_ensemble(&files, &manifest, cfg.classes, &cfg.out_dir)?;
            for (f, t) in files.iter().zip(&outcome.member_top1) {
                out!("member {}  top1 {t:.4}", f.display());
            }
            out!("ensemble top1 {:.4}", outcome.top1);
            out!("probabilities: {}", outcome.fused_path.display());
        }
        Command::AugmentPreview { n } => {
            let files = augment_preview(&cfg, n)?;
            out!("wrote {} files to {}", files.len(), cfg.out_dir.display());
        }
        Command::GradCheck { points, perturb } => {
            let opts = AuditOptions { seed: cfg.seed, points, corrupt: perturb, ..AuditOptions::default() };
            let reports = run_all(&opts)?;
            reports.iter().for_each(|r| out!("{r}"));
            if !reports.iter().all(|r| r.passed()) {
                return Ok(ExitCode::from(1));
            }
        }
        Command::MakeSynthetic { classes, per_class, val_per_class, size } => {
            let spec = SyntheticSpec { classes, train_per_class: per_class, val_per_class, size, seed: cfg.seed };
            let out = make_synthetic(&spec, &cfg.out_dir)?;
            out!("train manifest: {}", out.train_manifest.display());
            out!("val manifest: {}", out.val_manifest.display());
            let train = Dataset::read(&out.train_manifest, classes)?;
            let val = Dataset::read(&out.val_manifest, classes)?;
            if !val.is_empty() && !train.is_empty() {
                out!("nearest-centroid baseline val top1 {:.4}", nearest_centroid_accuracy(&train, &val, classes)?);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
