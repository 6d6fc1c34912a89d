//! Thin command-line front end. All behavior lives in the library; this
//! binary only parses arguments, loads the run configuration, dispatches,
//! and maps errors to the exit-code contract (0 ok, 1 config, 2 partial).

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use capmas::cli::{
    self, cmd_author_variants, cmd_correct, cmd_detect, cmd_eval, cmd_sweep, CliError, EvalMode,
    Overrides, RunConfig,
};
use capmas::detectors::{DetectionMethod, DEFAULT_BIN_EDGES};

#[derive(Parser)]
#[command(
    name = "capmas",
    version,
    about = "Correct and evaluate hyper-detailed image captions"
)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true, default_value = "capmas.toml")]
    config: PathBuf,

    /// Override the pi threshold.
    #[arg(long, global = true)]
    pi: Option<f64>,

    /// Override the epsilon clamp constant.
    #[arg(long, global = true)]
    epsilon: Option<f64>,

    /// Override the worker concurrency.
    #[arg(long, global = true)]
    concurrency: Option<usize>,

    /// Override the response cache directory.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output format (json or csv).
    #[arg(long, global = true)]
    format: Option<String>,

    /// Override the output path.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose, verify, and correct every caption in a JSONL file.
    Correct {
        /// Caption records, one JSON object per line.
        #[arg(long)]
        captions: PathBuf,
    },
    /// Benchmark hallucination detectors on a labeled mention dataset.
    Detect {
        /// Detection samples, one JSON object per line.
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated methods (confidence,consistency,isolation).
        #[arg(long)]
        methods: Option<String>,
        /// Comma-separated token-index bin edges, starting at 0.
        #[arg(long)]
        bins: Option<String>,
    },
    /// Run one of the evaluation harnesses.
    Eval {
        #[command(subcommand)]
        which: EvalCommand,
    },
    /// Sweep pi values and report the factuality/coverage trade-off.
    Sweep {
        /// Captions with references, one JSON object per line.
        #[arg(long)]
        captions: PathBuf,
        /// Coverage questions, one JSON object per line.
        #[arg(long)]
        coverage: PathBuf,
        /// Comma-separated pi values, e.g. "1.0,0.5,0.3".
        #[arg(long, default_value = "1.0,0.5,0.3")]
        pi_list: String,
    },
    /// Generate meta-evaluation caption variants from clean captions.
    AuthorVariants {
        /// Clean captions with references, one JSON object per line.
        #[arg(long)]
        dataset: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Judge caption factuality against image and reference.
    Factuality {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Answer multiple-choice questions from captions alone.
    Coverage {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        captions: PathBuf,
    },
    /// Compare clean captions against perturbed variants.
    Meta {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Correlate metric decisions with human preferences.
    HumanCorr {
        #[arg(long)]
        dataset: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let format = cli
        .format
        .as_deref()
        .map(str::parse)
        .transpose()
        .map_err(CliError::Config)?;
    let overrides = Overrides {
        pi: cli.pi,
        epsilon: cli.epsilon,
        concurrency: cli.concurrency,
        cache_dir: cli.cache_dir,
        seed: cli.seed,
        format,
        output: cli.output,
    };
    let config = RunConfig::load(&cli.config, &overrides)?;

    match cli.command {
        Command::Correct { captions } => cmd_correct(&config, &captions),
        Command::Detect {
            dataset,
            methods,
            bins,
        } => {
            let methods: BTreeSet<DetectionMethod> = match methods {
                Some(raw) => cli::parse_methods(&raw)?,
                None => BTreeSet::from([
                    DetectionMethod::Confidence,
                    DetectionMethod::Consistency,
                    DetectionMethod::Isolation,
                ]),
            };
            let edges = match bins {
                Some(raw) => cli::parse_usize_list(&raw)?,
                None => DEFAULT_BIN_EDGES.to_vec(),
            };
            cmd_detect(&config, &dataset, &methods, &edges)
        }
        Command::Eval { which } => match which {
            EvalCommand::Factuality { dataset } => {
                cmd_eval(&config, &EvalMode::Factuality, &dataset)
            }
            EvalCommand::Coverage { dataset, captions } => cmd_eval(
                &config,
                &EvalMode::Coverage {
                    captions_file: captions,
                },
                &dataset,
            ),
            EvalCommand::Meta { dataset } => cmd_eval(&config, &EvalMode::Meta, &dataset),
            EvalCommand::HumanCorr { dataset } => cmd_eval(&config, &EvalMode::HumanCorr, &dataset),
        },
        Command::Sweep {
            captions,
            coverage,
            pi_list,
        } => {
            let pi_values = cli::parse_f64_list(&pi_list)?;
            cmd_sweep(&config, &captions, &coverage, &pi_values)
        }
        Command::AuthorVariants { dataset } => cmd_author_variants(&config, &dataset),
    }
}
