use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xmmr::config::{extract_overrides, load_settings, SEED_ENV};
use xmmr::error::{CliError, Result};
use xmmr::formats::Part;
use xmmr::pipeline;

/// Cross-modal metric learning: pretrain, train, embed, evaluate.
///
/// Every config key can be overridden with `--section.key value`.
#[derive(Parser, Debug)]
#[command(name = "xmmr", version)]
struct Cli {
    /// Flat `section.key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the base network; writes base_net.ckpt, s_img.txt and s_txt.txt.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the metric network; writes metric_net.ckpt and loss_trace.csv.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory holding the pretrain outputs.
        #[arg(long)]
        shared: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a metric_net checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Embed one split; writes q_img.txt, q_txt.txt and labels.txt.
    Embed {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        shared: PathBuf,
        /// Metric network checkpoint; without it the shared representations are used as is.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        part: String,
    },
    /// Print MAP for both tasks over all results and the top-k cutoff.
    Evaluate {
        /// Directory written by `embed`.
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Run base, semi_only, quad_only and full on one dataset and compare.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic benchmark and its manifest.
    Synthgen {
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(args: Vec<String>) -> Result<String> {
    let (rest, overrides) = extract_overrides(args)?;
    let cli = Cli::try_parse_from(rest).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            emit(&e.to_string());
            std::process::exit(0)
        }
        _ => CliError::usage(e.to_string()),
    })?;
    let env_seed = std::env::var(SEED_ENV).ok();
    let s = load_settings(cli.config.as_deref(), env_seed.as_deref(), &overrides)?;
    log::debug!("settings:\n{}", s.to_text());
    match cli.command {
        Command::Pretrain { manifest, out } => pipeline::cmd_pretrain(&manifest, &out, &s),
        Command::Train { manifest, shared, out, resume } => {
            pipeline::cmd_train(&manifest, &shared, &out, resume.as_deref(), &s)
        }
        Command::Embed { manifest, shared, model, out, part } => {
            let part = Part::from_tag(&part)
                .ok_or_else(|| CliError::usage(format!("--part must be train, val or test, got `{part}`")))?;
            pipeline::cmd_embed(&manifest, &shared, model.as_deref(), &out, part)
        }
        Command::Evaluate { embeddings } => pipeline::cmd_evaluate(&embeddings, &s),
        Command::Ablate { manifest, out } => {
            let report = pipeline::cmd_ablate(&manifest, &s)?;
            if let Some(out) = out {
                xmmr::formats::write_text(&out, &report)?;
            }
            Ok(report)
        }
        Command::Synthgen { out } => {
            let m = pipeline::cmd_synthgen(&out, &s)?;
            Ok(format!("wrote {}\n", m.display()))
        }
    }
}

/// Writes to stdout; a closed pipe (`xmmr ... | head`) is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args().collect()) {
        Ok(out) => {
            emit(&out);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
