use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mocha_asr::commands::{self, DecodeMode, CONFIG_ENV};
use mocha_asr::error::exit;
use mocha_asr::AppResult;

/// Streaming decoder-only speech recognition on a synthetic corpus.
#[derive(Debug, Parser)]
#[command(name = "mocha-asr", version)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Starting preset: full, no-minlt, lora-frozen-base, full-finetune, paper.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override one key, e.g. `--set train.lambda=0`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the train and test splits.
    Gendata {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// joint, stream-only or nonstream-only (overrides train.joint_mode).
        #[arg(long)]
        mode: Option<String>,
        /// Overrides train.total_steps.
        #[arg(long)]
        steps: Option<u64>,
        /// Per-step loss CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Decode a dataset into a hypothesis CSV.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// stream-greedy, nonstream-greedy or nonstream-beam.
        #[arg(long, default_value = "stream-greedy")]
        mode: String,
        /// Beam width for nonstream-beam (default: stream.beam_size).
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Stream a dataset and write per-token emission events.
    Latency {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        system: String,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Character error rate of a hypothesis CSV against a dataset.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        system: String,
        #[arg(long, default_value = "")]
        mode: String,
    },
    /// Finite-difference checks of every op and objective.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> AppResult<()> {
    let config = || commands::resolve_config(cli.preset.as_deref(), cli.config.as_deref(), &cli.sets);
    match &cli.command {
        Command::Gendata { out } => {
            let (train, test) = commands::gendata(&config()?, out)?;
            println!("wrote {} and {}", train.display(), test.display());
        }
        Command::Train { data, out, mode, steps, log } => {
            let mut sets = cli.sets.clone();
            if let Some(m) = mode {
                sets.push(format!("train.joint_mode={m}"));
            }
            if let Some(s) = steps {
                sets.push(format!("train.total_steps={s}"));
            }
            let cfg = commands::resolve_config(cli.preset.as_deref(), cli.config.as_deref(), &sets)?;
            let outcome = commands::cmd_train(&cfg, data, out, log.as_deref())?;
            if let Some(last) = outcome.losses.last() {
                println!(
                    "{} steps in {:.1} s, last l_total {:.4}; wrote {}",
                    outcome.losses.len(),
                    outcome.seconds,
                    last.l_total,
                    out.display()
                );
            }
        }
        Command::Decode { ckpt, data, mode, beam, out, jobs } => {
            let mode: DecodeMode = mode.parse()?;
            let mut sets = cli.sets.clone();
            if let Some(b) = beam {
                sets.push(format!("stream.beam_size={b}"));
            }
            let rows = commands::cmd_decode(ckpt, data, mode, &sets, *jobs, out)?;
            println!("decoded {} utterances into {}", rows.len(), out.display());
        }
        Command::Latency { ckpt, data, out, metrics, system, jobs } => {
            let row = commands::cmd_latency(ckpt, data, *jobs, out, metrics.as_deref(), system)?;
            println!(
                "CER {:.2}% | delay first {:.2} mid {:.2} last {:.2} avg {:.2} frames",
                row.cer, row.first, row.mid, row.last, row.avg
            );
        }
        Command::Eval { reference, hyp, metrics, system, mode } => {
            let row = commands::cmd_eval(reference, hyp, metrics.as_deref(), system, mode)?;
            println!("CER {:.2}%", row.cer);
        }
        Command::Gradcheck { seed } => {
            let checks = commands::cmd_gradcheck(*seed)?;
            for c in &checks {
                println!("{:<28} {:.2e} ok", c.name, c.report.worst());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            if let mocha_asr::AppError::GradCheck(_) = e {
                eprintln!("{e}");
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
