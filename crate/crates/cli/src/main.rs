//! `mage`: one binary wiring the whole pipeline — dataset synthesis,
//! two-stage training, clip generation, evaluation, and attention export.
//! Exit codes: 0 success, 1 usage/config error, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mage_cli::commands::evaluate::EvalMode;
use mage_cli::commands::generate::GenerateArgs;
use mage_cli::commands::visualize::VisualizeArgs;
use mage_cli::commands::{self};
use mage_cli::config::{Overrides, RunConfig};
use mage_cli::CliError;

#[derive(Parser)]
#[command(
    name = "mage",
    version,
    about = "Text-and-image conditioned video generation on synthetic datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset with manifest, fingerprint, and split-exclusivity report.
    Datagen {
        #[command(flatten)]
        flags: Overrides,
    },
    /// Train the frame tokenizer and save a stage-tagged checkpoint.
    TrainVqvae {
        #[command(flatten)]
        flags: Overrides,
        /// Continue training from an existing tokenizer checkpoint.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
        /// Accept a checkpoint trained on a dataset with a different fingerprint.
        #[arg(long)]
        allow_fingerprint_mismatch: bool,
    },
    /// Train the video generator on top of a frozen tokenizer checkpoint.
    TrainMage {
        #[command(flatten)]
        flags: Overrides,
        /// Tokenizer checkpoint the generator is trained against.
        #[arg(long, value_name = "CKPT")]
        vqvae: PathBuf,
        /// Continue training from an existing generator checkpoint.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
        /// Accept checkpoints trained on a dataset with a different fingerprint.
        #[arg(long)]
        allow_fingerprint_mismatch: bool,
    },
    /// Generate clips from a first frame and a caption.
    Generate {
        #[command(flatten)]
        flags: Overrides,
        /// Generator checkpoint.
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        /// Tokenizer checkpoint for encoding the frame and decoding tokens.
        #[arg(long, value_name = "CKPT")]
        vqvae: PathBuf,
        /// First frame as a PNG at the model's resolution.
        #[arg(long, value_name = "PNG")]
        image: PathBuf,
        /// Caption conditioning the motion.
        #[arg(long)]
        caption: String,
    },
    /// Score a checkpoint on the held-out split and write JSON + markdown reports.
    Evaluate {
        #[command(flatten)]
        flags: Overrides,
        /// Generator checkpoint.
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        /// Tokenizer checkpoint.
        #[arg(long, value_name = "CKPT")]
        vqvae: PathBuf,
        /// Evaluation mode: deterministic (similarity + speed) or stochastic (diversity).
        #[arg(long, value_name = "MODE")]
        mode: String,
    },
    /// Export caption-to-frame cross-attention overlays for one input.
    VisualizeAttention {
        #[command(flatten)]
        flags: Overrides,
        /// Generator checkpoint.
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        /// Tokenizer checkpoint.
        #[arg(long, value_name = "CKPT")]
        vqvae: PathBuf,
        /// First frame as a PNG at the model's resolution.
        #[arg(long, value_name = "PNG")]
        image: PathBuf,
        /// Caption whose attention is visualized.
        #[arg(long)]
        caption: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Datagen { flags } => {
            let cfg = RunConfig::resolve(&flags)?;
            let out = commands::datagen::run(&cfg)?;
            println!("dataset {} written to {}", out.summary.kind, out.out_dir.display());
            println!(
                "  train/test: {}/{}  fingerprint: {}",
                out.summary.n_train,
                out.summary.n_test,
                commands::short_fp(&out.summary.fingerprint)
            );
            println!("  split exclusivity: {}", if out.exclusive { "pass" } else { "FAIL" });
            Ok(())
        }
        Command::TrainVqvae { flags, resume, allow_fingerprint_mismatch } => {
            let cfg = RunConfig::resolve(&flags)?;
            let out = commands::train::run_vqvae(&cfg, resume.as_deref(), allow_fingerprint_mismatch)?;
            println!("tokenizer checkpoint: {} (step {})", out.checkpoint.display(), out.steps);
            if let Some(loss) = out.final_loss {
                println!("  final training loss: {loss:.5}");
            }
            if let Some(p) = out.heldout_psnr {
                println!("  held-out reconstruction: {p:.2} dB over {} clips", out.heldout_clips);
            }
            Ok(())
        }
        Command::TrainMage { flags, vqvae, resume, allow_fingerprint_mismatch } => {
            let cfg = RunConfig::resolve(&flags)?;
            let out = commands::train::run_mage(
                &cfg,
                &vqvae,
                resume.as_deref(),
                allow_fingerprint_mismatch,
            )?;
            println!("generator checkpoint: {} (step {})", out.checkpoint.display(), out.steps);
            println!("  vocabulary: {} words", out.vocab_size);
            if let Some(acc) = out.heldout_token_accuracy {
                println!(
                    "  held-out token accuracy: {:.2}% over {} clips",
                    acc * 100.0,
                    out.heldout_samples
                );
            }
            Ok(())
        }
        Command::Generate { flags, checkpoint, vqvae, image, caption } => {
            let cfg = RunConfig::resolve(&flags)?;
            let args = GenerateArgs { checkpoint, vqvae, image, caption };
            let out = commands::generate::run(&cfg, &args)?;
            println!(
                "{} clip(s) at {} ms/frame ({} decoding)",
                out.clips.len(),
                out.frame_ms,
                if out.deterministic { "greedy" } else { "sampled" }
            );
            for c in &out.clips {
                println!("  {}", c.display());
            }
            if !out.unknown_words.is_empty() {
                println!("  unknown caption words: {}", out.unknown_words.join(", "));
            }
            Ok(())
        }
        Command::Evaluate { flags, checkpoint, vqvae, mode } => {
            let cfg = RunConfig::resolve(&flags)?;
            let mode = EvalMode::parse(&mode)?;
            let out = commands::evaluate::run(&cfg, &checkpoint, &vqvae, mode)?;
            println!("evaluation report: {}", out.report_json.display());
            print!("{}", out.report.to_markdown());
            if let Some(sweep) = &out.speed_sweep {
                println!("speed sweep (mean motion-end frame):");
                for p in sweep {
                    println!(
                        "  eta {:.1}: {:.2} over {} clips ({} ran past the horizon)",
                        p.eta, p.mean_end_frame, p.clips, p.no_end
                    );
                }
            }
            Ok(())
        }
        Command::VisualizeAttention { flags, checkpoint, vqvae, image, caption } => {
            let cfg = RunConfig::resolve(&flags)?;
            let args = VisualizeArgs { checkpoint, vqvae, image, caption };
            let out = commands::visualize::run(&cfg, &args)?;
            println!("{} attention overlays:", out.overlays.len());
            for p in &out.overlays {
                println!("  {}", p.display());
            }
            println!("values: {}", out.values_json.display());
            Ok(())
        }
    }
}
