//! `splitflow` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 numeric failure,
//! 4 external-service failure.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use splitflow_core::decomp::Template;
use splitflow_core::error::{Error, Result};

use commands::{Decomposer, EditMethod};

#[derive(Parser)]
#[command(
    name = "splitflow",
    about = "Inversion-free rectified-flow latent editing with flow decomposition and aggregation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the documented reference config file.
    InitConfig {
        /// Destination path (will not overwrite).
        #[arg(long, default_value = "splitflow.toml")]
        out: PathBuf,
    },
    /// Train the velocity field on the configured scene.
    Train {
        /// Experiment config (TOML).
        config: PathBuf,
    },
    /// Draw a source latent from the scene's source condition.
    SampleSource {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output latent path (.sfl binary, or .json).
        #[arg(long, default_value = "source.sfl")]
        out: PathBuf,
    },
    /// Edit a stored source latent.
    Edit {
        config: PathBuf,
        /// Source latent file (.sfl binary, or .json).
        source: PathBuf,
        #[arg(long, default_value = "splitflow")]
        method: String,
        /// One of: attribute, rule, llm, `manual:<file>`.
        #[arg(long, default_value = "attribute")]
        decomposer: String,
        /// Model file override (defaults to <output.dir>/models/field.sfm).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Fail instead of falling back to the rule-based decomposer.
        #[arg(long)]
        strict: bool,
    },
    /// Run the method/seed benchmark grid and emit CSV + plots.
    Bench {
        config: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Verify the aggregation inequality on random unit-vector sets.
    VfaCheck {
        #[arg(long, default_value_t = 10000)]
        trials: usize,
        /// Comma-separated vector dimensions to sample from.
        #[arg(long, default_value = "2,16,128")]
        dims: String,
        /// Smallest set size to sample.
        #[arg(long, default_value_t = 1)]
        k_min: usize,
        /// Largest set size to sample.
        #[arg(long, default_value_t = 8)]
        k_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Margin histogram CSV path.
        #[arg(long, default_value = "vfa_margins.csv")]
        out: PathBuf,
    },
    /// Decompose a source/target prompt pair into sub-prompts.
    Decompose {
        #[arg(long)]
        src: String,
        #[arg(long)]
        tgt: String,
        /// psi1 or psi2.
        #[arg(long, default_value = "psi1")]
        template: String,
        /// rule or llm.
        #[arg(long, default_value = "rule")]
        backend: String,
        /// Config providing the `[llm]` endpoint section.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Endpoint base URL (overrides the config).
        #[arg(long)]
        base_url: Option<String>,
        /// Model name for the endpoint.
        #[arg(long)]
        model: Option<String>,
        /// Fail instead of falling back to the rule-based splitter.
        #[arg(long)]
        strict: bool,
    },
    /// Generate a latent from the trained field (sanity checking).
    Generate {
        config: PathBuf,
        /// Option index per scene attribute, comma-separated (e.g. "1,0,1").
        #[arg(long)]
        options: String,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "generated.sfl")]
        out: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("'{p}' is not a valid number")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InitConfig { out } => commands::cmd_init_config(&out),
        Command::Train { config } => commands::cmd_train(&config),
        Command::SampleSource { config, seed, out } => {
            commands::cmd_sample_source(&config, seed, &out)
        }
        Command::Edit {
            config,
            source,
            method,
            decomposer,
            model,
            strict,
        } => {
            let method: EditMethod = method.parse()?;
            let decomposer: Decomposer = decomposer.parse()?;
            commands::cmd_edit(
                &config,
                &source,
                method,
                &decomposer,
                model.as_deref(),
                strict,
            )
        }
        Command::Bench { config, model } => commands::cmd_bench(&config, model.as_deref()),
        Command::VfaCheck {
            trials,
            dims,
            k_min,
            k_max,
            seed,
            out,
        } => {
            let dims = parse_usize_list(&dims)?;
            commands::cmd_vfa_check(trials, &dims, k_min, k_max, seed, &out)
        }
        Command::Decompose {
            src,
            tgt,
            template,
            backend,
            config,
            base_url,
            model,
            strict,
        } => {
            let template: Template = template.parse()?;
            commands::cmd_decompose(
                &src,
                &tgt,
                template,
                &backend,
                config.as_deref(),
                base_url.as_deref(),
                model.as_deref(),
                strict,
            )
        }
        Command::Generate {
            config,
            options,
            steps,
            seed,
            out,
            model,
        } => {
            let options = parse_usize_list(&options)?;
            commands::cmd_generate(&config, &options, steps, seed, &out, model.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
