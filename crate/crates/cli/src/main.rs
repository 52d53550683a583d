//! `mcfa`: train, evaluate, ensemble and analyze multi-view sentence
//! classifiers.
//!
//! Every subcommand reads a run configuration (`--config`) and accepts any
//! config key as a `--key value` override, e.g. `--mode b1 --seed 7`.

mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand};

use config::{canonical_key, RunConfig, Settings, SEED_ENV};
use error::{CliError, EXIT_USAGE};
use run::{AnalysisKind, AnalyzeOptions, SplitKind};

const OVERRIDES_HELP: &str = "Any config key can also be given as `--key value` (or `--section.key value`), \
e.g. `--mode b2 --l2-lambda 0 --seed 7`. Flags win over the config file; MCFA_SEED is used when no seed is set.";

#[derive(Parser)]
#[command(name = "mcfa", version, about = "Multi-view sentence classification with context-fixing attachments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Run configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Which split of the configured data to use
    #[arg(long, value_enum, default_value = "test")]
    split: SplitKind,
    /// Fold to use under cross validation
    #[arg(long)]
    fold: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train per the config; prints `mode,n_views,mean_acc,std_acc`
    #[command(after_help = OVERRIDES_HELP)]
    Train {
        /// Run configuration file
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a saved model; prints `accuracy=<float>`
    #[command(after_help = OVERRIDES_HELP)]
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Per-example predictions CSV [default: <out_dir>/eval_<split>.csv]
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Average the class probabilities of two or more models
    #[command(after_help = OVERRIDES_HELP)]
    Ensemble {
        /// Repeat for every member
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        /// Per-example predictions CSV [default: <out_dir>/ensemble_<split>.csv]
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Write interpretability CSVs for a saved model
    #[command(after_help = OVERRIDES_HELP)]
    Analyze {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        kind: AnalysisKind,
        /// Principal components to keep (pca)
        #[arg(long, default_value_t = 2)]
        components: usize,
        /// Comma-separated example indices to query (neighbors) [default: first 5 of the split]
        #[arg(long, value_delimiter = ',')]
        queries: Option<Vec<usize>>,
        /// Neighbors per query (neighbors)
        #[arg(long, default_value_t = 5)]
        neighbors: usize,
        /// Output directory [default: <out_dir>/analysis]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the configured synthetic corpus as train/ and test/ corpus files
    #[command(name = "gen-synthetic", after_help = OVERRIDES_HELP)]
    GenSynthetic {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory [default: <out_dir>/corpus]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Pulls `--<config key> value` pairs out of `args`, leaving the rest for clap.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if canonical_key(&name).is_none() {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| CliError::config(format!("--{name} needs a value")))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

fn run_config(path: Option<&PathBuf>, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut settings = match path {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    settings.apply_overrides(overrides)?;
    let env_seed = std::env::var(SEED_ENV).ok();
    RunConfig::from_settings(&settings, env_seed.as_deref())
}

fn execute(command: Command, overrides: &[(String, String)]) -> Result<(), CliError> {
    match command {
        Command::Train { config } => {
            let run = run_config(config.as_ref(), overrides)?;
            println!("{}", run::cmd_train(&run)?);
        }
        Command::Eval { model, data, predictions } => {
            let run = run_config(data.config.as_ref(), overrides)?;
            let bundle = run::load_model(&model)?;
            let (ds, idx) = run::select(&run, data.split, data.fold)?;
            let out = predictions.unwrap_or_else(|| run.out_dir.join(format!("eval_{}.csv", data.split.name())));
            let acc = run::cmd_eval(&bundle, &ds, &idx, &out)?;
            println!("accuracy={acc}");
        }
        Command::Ensemble { models, data, predictions } => {
            let run = run_config(data.config.as_ref(), overrides)?;
            if models.len() < 2 {
                return Err(CliError::config(format!("an ensemble needs at least 2 models, got {}", models.len())));
            }
            let bundles = models.iter().map(|m| run::load_model(m)).collect::<Result<Vec<_>, _>>()?;
            let (ds, idx) = run::select(&run, data.split, data.fold)?;
            let out = predictions.unwrap_or_else(|| run.out_dir.join(format!("ensemble_{}.csv", data.split.name())));
            let acc = run::cmd_ensemble(&bundles, &ds, &idx, &out)?;
            println!("accuracy={acc}");
        }
        Command::Analyze {
            model,
            data,
            kind,
            components,
            queries,
            neighbors,
            out,
        } => {
            let run = run_config(data.config.as_ref(), overrides)?;
            let bundle = run::load_model(&model)?;
            let (ds, idx) = run::select(&run, data.split, data.fold)?;
            let opts = AnalyzeOptions {
                kind,
                components,
                queries,
                neighbors,
                out_dir: out.unwrap_or_else(|| run.out_dir.join("analysis")),
            };
            for path in run::cmd_analyze(&bundle, &ds, &idx, &opts)? {
                println!("{}", path.display());
            }
        }
        Command::GenSynthetic { config, out } => {
            let run = run_config(config.as_ref(), overrides)?;
            let out = out.unwrap_or_else(|| run.out_dir.join("corpus"));
            for path in run::cmd_gen_synthetic(&run, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.code);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match execute(cli.command, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
