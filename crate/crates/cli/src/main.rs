mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reclaim::GenMode;

use crate::config::Overrides;

/// Attributed answer generation, dataset construction and evaluation.
#[derive(Debug, Parser)]
#[command(name = "reclaim", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment raw answers into tagged reference/claim training samples.
    BuildDataset {
        #[arg(long)]
        input: PathBuf,
        /// Training records; existing ids are skipped when resuming.
        #[arg(long)]
        output: PathBuf,
        /// Log of dropped samples (default: <output>.dropped.jsonl).
        #[arg(long)]
        dropped: Option<PathBuf>,
    },
    /// Remove samples with unlocatable or unsupported citations.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Summary report (default: <output>.report.json).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Removal log (default: <output>.removed.jsonl).
        #[arg(long)]
        removals: Option<PathBuf>,
    },
    /// Write claim-model training records, one per pair.
    ClaimSplit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Condition on all earlier pairs, not just the current reference.
        #[arg(long)]
        full_history: bool,
    },
    /// Print dataset statistics as JSON.
    Stats {
        #[arg(long)]
        input: PathBuf,
        /// Exact rational averages instead of floats.
        #[arg(long)]
        exact: bool,
    },
    /// Generate attributed answers.
    Generate(GenerateArgs),
    /// Score answers against evaluation examples.
    Evaluate {
        /// Evaluation examples (question, docs, qa_pairs / claims).
        #[arg(long)]
        examples: PathBuf,
        /// Answer records from `generate`.
        #[arg(long)]
        answers: PathBuf,
        /// Summary JSON (default: stdout only).
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Per-example metrics, one line each.
        #[arg(long)]
        per_example: Option<PathBuf>,
        /// Plain-text table.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        exact: bool,
        /// Do not resolve `[n]` markers in untagged answers.
        #[arg(long)]
        no_brackets: bool,
    },
    /// Prefix-tree utilities.
    Trie {
        #[command(subcommand)]
        command: TrieCommand,
    },
}

#[derive(Debug, Subcommand)]
enum TrieCommand {
    /// Print every path of each example's tree.
    Dump {
        #[arg(long)]
        input: PathBuf,
        /// Only this example.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        tokenizer: Option<String>,
    },
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Examples with question and docs.
    #[arg(long)]
    input: PathBuf,
    /// Answer records.
    #[arg(long)]
    output: PathBuf,
    /// Run manifest, one record per example (default: <output>.manifest.jsonl).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    mode: Option<GenMode>,
    #[arg(long, overrides_with = "unconstrained")]
    constrained: bool,
    #[arg(long, overrides_with = "constrained")]
    unconstrained: bool,
    /// Pair bounds by dataset: asqa (2-5) or eli5 (4-6).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    min_pairs: Option<usize>,
    #[arg(long)]
    max_pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tokenizer: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), commands::Failure> {
    let mut overrides = Overrides {
        threads: cli.threads,
        ..Overrides::default()
    };
    if let Command::Generate(g) = &cli.command {
        overrides.mode = g.mode;
        overrides.constrained = match (g.constrained, g.unconstrained) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => None,
        };
        overrides.preset = g.preset.clone();
        overrides.min_pairs = g.min_pairs;
        overrides.max_pairs = g.max_pairs;
        overrides.seed = g.seed;
        overrides.tokenizer = g.tokenizer.clone();
    }
    if let Command::Trie {
        command: TrieCommand::Dump { tokenizer, .. },
    } = &cli.command
    {
        overrides.tokenizer = tokenizer.clone();
    }
    let config = config::load_config(cli.config.as_deref(), &overrides).map_err(commands::Failure::from_config)?;
    if let Some(n) = config.threads {
        // ignore: a global pool may already exist in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::BuildDataset { input, output, dropped } => commands::build_dataset(&config, &input, &output, dropped),
        Command::Filter {
            input,
            output,
            report,
            removals,
        } => commands::filter(&config, &input, &output, report, removals),
        Command::ClaimSplit {
            input,
            output,
            full_history,
        } => commands::claim_split(&config, &input, &output, full_history),
        Command::Stats { input, exact } => commands::stats(&config, &input, exact),
        Command::Generate(g) => commands::generate(&config, cli.config.as_deref(), &g.input, &g.output, g.manifest),
        Command::Evaluate {
            examples,
            answers,
            summary,
            per_example,
            table,
            exact,
            no_brackets,
        } => commands::evaluate(
            &config,
            &commands::EvalPaths {
                examples,
                answers,
                summary,
                per_example,
                table,
            },
            exact,
            !no_brackets,
        ),
        Command::Trie {
            command: TrieCommand::Dump { input, id, .. },
        } => commands::trie_dump(&config, &input, id.as_deref()),
    }
}
