//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tripletgen::error::{Error, ErrorKind};
use tripletgen_cli::commands::*;
use tripletgen_cli::config::{RunConfig, Stage};

#[derive(Parser)]
#[command(
    name = "tripletgen",
    about = "Cascaded triplet-conditioned diffusion: dataset prep, training, generation, analysis, evaluation",
    version
)]
struct Cli {
    /// Configuration file (TOML); overrides the preset, flags override both.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Configuration preset: desk or paper.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,

    /// Run seed override (toy seed for make-toy, train/generate seed, eval seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Allow writing into an existing non-empty output directory.
    #[arg(long, global = true, default_value_t = false)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a TripletWorld dataset directory (PNGs + annotation JSON).
    MakeToy {
        /// Number of frames (overrides data.n_frames).
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train the base or super-resolution denoiser.
    Train {
        #[arg(long)]
        stage: String,
        /// Dataset directory (annotation.json + frames/).
        #[arg(long)]
        data: PathBuf,
        /// Resume from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample images for a prompt from trained checkpoints.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sr_ckpt: Option<PathBuf>,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Embedding-space analyses and balance-weight audits.
    Analyze {
        /// Embedding-table file to analyze.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Dataset directory to analyze.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint providing the learned token table.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Alignment probe file (short caption + long captions).
        #[arg(long)]
        probe: Option<PathBuf>,
    },
    /// FID, oracle alignment, and plugin alignment scores.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        /// Caption file for the generated images (one per line).
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// Plugin feature tables keyed by file name.
        #[arg(long)]
        real_features: Option<PathBuf>,
        #[arg(long)]
        generated_features: Option<PathBuf>,
        /// Plugin embedding tables for the CLIP-style score.
        #[arg(long)]
        image_embeddings: Option<PathBuf>,
        #[arg(long)]
        text_embeddings: Option<PathBuf>,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, Error> {
    let preset = RunConfig::preset(&cli.preset)?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load_over(preset, path)?,
        None => preset,
    };
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::MakeToy { .. } => cfg.data.toy.seed = seed,
            Command::Train { .. } | Command::Generate { .. } => cfg.diffusion.seed = seed,
            Command::Evaluate { .. } | Command::Analyze { .. } => cfg.eval.seed = seed,
        }
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf, Error> {
    cli.out
        .clone()
        .ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = resolve_config(&cli)?;
    match &cli.command {
        Command::MakeToy { frames } => {
            if let Some(n) = frames {
                config.data.n_frames = *n;
            }
            cmd_make_toy(&MakeToyArgs { config, out_dir: out_dir(&cli)?, force: cli.force })
        }
        Command::Train { stage, data, resume } => {
            let stage: Stage = stage.parse()?;
            cmd_train(&TrainArgs {
                config,
                stage,
                data_dir: data.clone(),
                out_dir: out_dir(&cli)?,
                force: cli.force,
                resume: resume.clone(),
            })
            .map(|_| ())
        }
        Command::Generate { ckpt, sr_ckpt, prompt, count } => cmd_generate(&GenerateArgs {
            seed: config.diffusion.seed,
            config,
            base_ckpt: ckpt.clone(),
            sr_ckpt: sr_ckpt.clone(),
            prompt: prompt.clone(),
            count: *count,
            out_dir: out_dir(&cli)?,
            force: cli.force,
        })
        .map(|_| ()),
        Command::Analyze { table, data, ckpt, probe } => cmd_analyze(&AnalyzeArgs {
            config,
            table: table.clone(),
            data_dir: data.clone(),
            ckpt: ckpt.clone(),
            probe: probe.clone(),
            out_dir: out_dir(&cli)?,
            force: cli.force,
        }),
        Command::Evaluate {
            real,
            generated,
            prompts,
            real_features,
            generated_features,
            image_embeddings,
            text_embeddings,
        } => cmd_evaluate(&EvaluateArgs {
            config,
            real_dir: real.clone(),
            generated_dir: generated.clone(),
            prompts: prompts.clone(),
            real_features: real_features.clone(),
            generated_features: generated_features.clone(),
            image_embeddings: image_embeddings.clone(),
            text_embeddings: text_embeddings.clone(),
            out_dir: out_dir(&cli)?,
            force: cli.force,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Config => ExitCode::from(2),
                ErrorKind::Data => ExitCode::from(3),
                ErrorKind::Numeric => ExitCode::from(4),
            }
        }
    }
}
