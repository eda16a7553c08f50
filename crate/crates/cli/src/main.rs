//! `lrselect`: generate synthetic corpora, train GMMs, score utterances by
//! likelihood ratio, select a subset and report its domain composition.
//!
//! Exit codes: 0 success, 2 usage or invalid input, 3 output I/O failure,
//! 4 numerical failure.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use log::LevelFilter;
use lrselect_core::gmm::{EmConfig, InitMethod};
use lrselect_core::scoring::ScoreMode;
use lrselect_core::selection::AutoBudgetConfig;

use commands::{SelectRule, TrainArgs};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "lrselect", version, about = "Likelihood-ratio training data selection")]
struct Cli {
    /// Seed for every random choice (corpus generation, EM initialization).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long, global = true, env = "LRSELECT_THREADS", default_value_t = 1)]
    threads: usize,

    /// off, error, warn, info, debug or trace.
    #[arg(long, global = true, env = "LRSELECT_LOG", default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Geometric,
    Arithmetic,
}

impl From<ModeArg> for ScoreMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Geometric => ScoreMode::Geometric,
            ModeArg::Arithmetic => ScoreMode::Arithmetic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    #[value(name = "kmeans++")]
    KmeansPlusPlus,
    Random,
}

impl From<InitArg> for InitMethod {
    fn from(m: InitArg) -> Self {
        match m {
            InitArg::KmeansPlusPlus => InitMethod::KmeansPlusPlus,
            InitArg::Random => InitMethod::RandomFrames,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain corpus from a JSON domain spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Feature dimension; defaults to the length of the first mean vector.
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Train a diagonal-covariance GMM on a manifest or a subset of it.
    TrainGmm {
        #[arg(long)]
        manifest: PathBuf,
        /// Train only on the ids listed in this file, one per line.
        #[arg(long)]
        ids_file: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 50)]
        max_iterations: usize,
        #[arg(long, default_value_t = 1e-5)]
        rel_tol: f64,
        #[arg(long, default_value_t = 1e-3)]
        variance_floor_factor: f64,
        #[arg(long, value_enum, default_value_t = InitArg::KmeansPlusPlus)]
        init: InitArg,
        #[arg(long)]
        out_model: PathBuf,
    },
    /// Score every utterance by its target/background log-likelihood ratio.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        target_model: PathBuf,
        #[arg(long)]
        background_model: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Geometric)]
        mode: ModeArg,
        #[arg(long)]
        out_csv: PathBuf,
    },
    /// Select utterances under a budget or with an automatic threshold.
    #[command(group(ArgGroup::new("rule").required(true).args(["budget_hours", "budget_n", "auto"])))]
    Select {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        budget_hours: Option<f64>,
        #[arg(long)]
        budget_n: Option<usize>,
        /// Threshold at the mean of the heaviest component of a GMM fitted
        /// to the scores.
        #[arg(long)]
        auto: bool,
        #[arg(long, default_value_t = 3, requires = "auto")]
        auto_components: usize,
        #[arg(long)]
        out_json: PathBuf,
        #[arg(long)]
        out_ids: PathBuf,
    },
    /// Summarize a selection by domain against a labelled manifest.
    Report {
        #[arg(long)]
        selection: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        target_domain: String,
        /// Print the table on stdout instead of the JSON report.
        #[arg(long)]
        pretty: bool,
        #[arg(long)]
        out_json: Option<PathBuf>,
    },
}

fn setup(cli: &Cli) -> Result<(), CliError> {
    let level: LevelFilter = cli
        .log_level
        .parse()
        .map_err(|_| CliError::usage(format!("invalid --log-level {:?}", cli.log_level)))?;
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    if cli.threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot start thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    setup(&cli)?;
    let seed = cli.seed;
    match cli.command {
        Command::Gen { spec, out_dir, dim } => commands::gen(&spec, &out_dir, dim, seed),
        Command::TrainGmm {
            manifest,
            ids_file,
            k,
            max_iterations,
            rel_tol,
            variance_floor_factor,
            init,
            out_model,
        } => commands::train_gmm(TrainArgs {
            manifest: &manifest,
            ids_file: ids_file.as_deref(),
            out_model: &out_model,
            config: EmConfig {
                num_components: k,
                max_iterations,
                rel_tol,
                variance_floor_factor,
                seed,
                init: init.into(),
            },
        }),
        Command::Score {
            manifest,
            target_model,
            background_model,
            mode,
            out_csv,
        } => commands::score(&manifest, &target_model, &background_model, mode.into(), &out_csv),
        Command::Select {
            scores,
            budget_hours,
            budget_n,
            auto,
            auto_components,
            out_json,
            out_ids,
        } => {
            let rule = match (budget_hours, budget_n, auto) {
                (Some(h), None, false) => SelectRule::Hours(h),
                (None, Some(n), false) => SelectRule::Count(n),
                (None, None, true) => SelectRule::Auto(AutoBudgetConfig {
                    num_components: auto_components,
                    seed,
                    ..AutoBudgetConfig::default()
                }),
                _ => return Err(CliError::usage("choose exactly one of --budget-hours, --budget-n, --auto")),
            };
            commands::select(&scores, rule, &out_json, &out_ids)
        }
        Command::Report {
            selection,
            manifest,
            target_domain,
            pretty,
            out_json,
        } => commands::report(&selection, &manifest, &target_domain, pretty, out_json.as_ref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lrselect: error: {e}");
            e.exit_code()
        }
    }
}
