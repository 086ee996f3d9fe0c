use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vidsal::models::ModelKind;
use vidsal::pipeline::{self, CropMode, RunConfig};
use vidsal::{Error, Result};

/// Relative `--out` paths are resolved against this directory when set.
const OUTPUT_ROOT_ENV: &str = "VIDSAL_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "vidsal", version, about = "Temporal masks and Grad-CAM for small video classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config, or a run.json whose config snapshot is reused.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; replaced if it holds an earlier run.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic motion dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        clips_per_class: Option<usize>,
    },
    /// Train one classifier on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// conv3d or convlstm.
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Temporal masks, Grad-CAM and crop search for a set of clips.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated clip ids; defaults to the validation split.
        #[arg(long, value_delimiter = ',')]
        clips: Vec<String>,
        #[arg(long)]
        max_clips: Option<usize>,
        /// Mask optimisation steps.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, value_parser = parse_crop)]
        crop: Option<CropMode>,
        #[arg(long)]
        no_images: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare the explanations of two models.
    Compare {
        #[command(flatten)]
        common: Common,
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
    },
}

fn parse_crop(s: &str) -> std::result::Result<CropMode, String> {
    match s {
        "none" => Ok(CropMode::None),
        "events" => Ok(CropMode::Events),
        "all" => Ok(CropMode::All),
        _ => Err(format!("unknown crop mode {s:?} (none, events, all)")),
    }
}

fn resolve_out(out: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if out.is_relative() => Path::new(&root).join(out),
        _ => out.to_path_buf(),
    }
}

fn setup(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut config = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        config.seed = s;
    }
    Ok((config, resolve_out(&common.out)))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, clips_per_class } => {
            let (mut config, out) = setup(&common)?;
            if let Some(n) = clips_per_class {
                config.data.clips_per_class = n;
            }
            let ds = pipeline::run_generate(&config, &out)?;
            println!("generated {} train / {} val clips in {}", ds.train.len(), ds.val.len(), out.display());
        }
        Command::Train { common, model, data, epochs } => {
            let (mut config, out) = setup(&common)?;
            if let Some(e) = epochs {
                match model {
                    ModelKind::Conv3d => config.train.conv3d.epochs = Some(e),
                    ModelKind::Convlstm => config.train.convlstm.epochs = Some(e),
                }
            }
            let ckpt = pipeline::run_train(&config, model, &data, &out)?;
            println!("trained {model}: val accuracy {:.4}, saved to {}", ckpt.meta.val_accuracy, out.display());
        }
        Command::Explain { common, checkpoint, data, clips, max_clips, iterations, crop, no_images, jobs } => {
            let (mut config, out) = setup(&common)?;
            if !clips.is_empty() {
                config.explain.clips = clips;
            }
            if max_clips.is_some() {
                config.explain.max_clips = max_clips;
            }
            if let Some(n) = iterations {
                config.mask.iterations = n;
            }
            if let Some(c) = crop {
                config.explain.crop = c;
            }
            if no_images {
                config.explain.images = false;
            }
            let records = pipeline::run_explain(&config, &checkpoint, &data, &out, jobs)?;
            println!("explained {} clips into {}", records.len(), out.display());
        }
        Command::Compare { common, a, b, bins } => {
            let (mut config, out) = setup(&common)?;
            if let Some(n) = bins {
                config.compare.bins = n;
            }
            let summary = pipeline::run_compare(&config, &a, &b, &out)?;
            for c in &summary.comparisons {
                match &c.ttest {
                    Some(t) => println!("{:<16} t={:+.4} df={:.2} p={:.4}", c.metric, t.t, t.df, t.p),
                    None => println!("{:<16} {}", c.metric, c.ttest_error.as_deref().unwrap_or("no test")),
                }
            }
        }
    }
    Ok(())
}

fn report(e: &Error) {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    eprintln!("error kind={} message={:?}", e.kind(), msg);
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("error kind=usage message={:?}", format!("{msg}: {detail}"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
