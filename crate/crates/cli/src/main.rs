use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(
    name = "ime",
    version,
    about = "Train and evaluate IME temporal knowledge graph models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoints, a manifest and metrics.csv to --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory holding train.txt, valid.txt and test.txt; overrides the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from checkpoint.bin in --out.
        #[arg(long)]
        resume: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Filtered ranking metrics of a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        per_relation: bool,
        /// Where report_<split>.csv goes; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every loss term on a tiny synthetic batch.
    Gradcheck {
        /// Model settings; the desk profile when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Write a synthetic dataset as train/valid/test TSV files.
    Synth {
        #[arg(long, value_enum)]
        pattern: PatternArg,
        #[arg(long)]
        entities: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        relations: usize,
        #[arg(long, default_value_t = 1)]
        timestamps: usize,
    },
    /// Print the pooling weights and parameter norms of a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train once per value of one setting and tabulate test metrics as CSV.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Ring,
    Chain,
    Mixed,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SweepParam {
    Alpha,
    Beta,
    Gamma,
    Dim,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            out,
            data,
            resume,
            quiet,
        } => commands::train(&config, &out, data.as_deref(), resume, quiet),
        Command::Eval {
            checkpoint,
            split,
            per_relation,
            out,
        } => commands::eval(&checkpoint, &split, per_relation, out.as_deref()),
        Command::Gradcheck { config, tol, eps } => commands::gradcheck(config.as_deref(), tol, eps),
        Command::Synth {
            pattern,
            entities,
            seed,
            out,
            relations,
            timestamps,
        } => {
            let pattern = match pattern {
                PatternArg::Ring => ime_core::Pattern::Ring,
                PatternArg::Chain => ime_core::Pattern::Chain,
                PatternArg::Mixed => ime_core::Pattern::Mixed,
            };
            commands::synth(pattern, entities, relations, timestamps, seed, &out)
        }
        Command::Inspect { checkpoint } => commands::inspect(&checkpoint),
        Command::Sweep {
            param,
            values,
            config,
            data,
            out,
        } => commands::sweep(param, &values, config.as_deref(), data.as_deref(), &out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
