use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use densecap::commands::{cmd_evaluate, cmd_generate, cmd_predict, cmd_train};
use densecap::RunConfig;

#[derive(Parser)]
#[command(name = "densecap", version, about = "Parallel dense video captioning on feature sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Single-threaded, reproducible numerics.
    #[arg(long)]
    deterministic: bool,
    /// Output directory or file.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Number of videos.
        #[arg(long)]
        videos: Option<usize>,
        /// Prefix of the generated video ids.
        #[arg(long)]
        id_prefix: Option<String>,
    },
    /// Train a model on a corpus.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        val_corpus: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Caption-only matching without timestamp supervision.
        #[arg(long)]
        weak_supervision: bool,
        /// Continue from a last checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Caption every video of a feature directory.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Feature directory or corpus root.
        #[arg(long)]
        features: PathBuf,
        /// Caption given proposals instead of detecting events.
        #[arg(long, requires = "proposals")]
        paragraph: bool,
        /// Proposal JSON (`{video_id: [[start, end], ...]}` or annotations).
        #[arg(long, requires = "paragraph")]
        proposals: Option<PathBuf>,
    },
    /// Score predictions against annotations.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        /// Annotation file or corpus root.
        #[arg(long)]
        annotations: PathBuf,
    },
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.deterministic {
        cfg.deterministic = true;
    }
    if let Some(o) = &common.output {
        cfg.paths.output = Some(o.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, videos, id_prefix } => {
            let mut cfg = base_config(&common)?;
            if let Some(n) = videos {
                cfg.videos = n;
            }
            if let Some(p) = id_prefix {
                cfg.synth.id_prefix = p;
            }
            let (out, s) = cmd_generate(&cfg)?;
            println!(
                "wrote {} videos with {} events (vocabulary {}) to {}",
                s.videos,
                s.events,
                s.vocab_size,
                out.display()
            );
        }
        Command::Train {
            common,
            corpus,
            val_corpus,
            epochs,
            weak_supervision,
            resume,
        } => {
            let mut cfg = base_config(&common)?;
            if corpus.is_some() {
                cfg.paths.corpus = corpus;
            }
            if val_corpus.is_some() {
                cfg.paths.val_corpus = val_corpus;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if weak_supervision {
                cfg.model.weak_supervision = true;
            }
            let (out, s) = cmd_train(&cfg, resume.as_deref())?;
            println!("trained {} epochs, final loss {:.4}", s.epochs, s.final_loss);
            if let (Some(e), Some(f)) = (s.best_epoch, s.best_f1) {
                println!("best validation F1 {f:.4} at epoch {e}");
            }
            println!("checkpoints and log in {}", out.display());
        }
        Command::Predict {
            common,
            checkpoint,
            features,
            paragraph,
            proposals,
        } => {
            let cfg = base_config(&common)?;
            let out = cfg.paths.output.context("--output is required for predict")?;
            let proposals = if paragraph { proposals } else { None };
            let n = cmd_predict(&checkpoint, &features, proposals.as_deref(), &out, cfg.deterministic)?;
            println!("wrote {n} events to {}", out.display());
        }
        Command::Evaluate {
            common,
            predictions,
            annotations,
        } => {
            let cfg = base_config(&common)?;
            let report = cmd_evaluate(&predictions, &annotations)?;
            if let Some(out) = cfg.paths.output {
                std::fs::write(&out, serde_json::to_string_pretty(&report)?)
                    .with_context(|| format!("writing {}", out.display()))?;
            }
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
