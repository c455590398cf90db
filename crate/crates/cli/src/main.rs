//! `arglink`: command-line pipeline for argument-aware event linking.

mod artifact;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode as ProcessExit;

use clap::{Parser, Subcommand};

use crate::commands::*;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "arglink", version, about = "Argument-aware event linking")]
struct Cli {
    /// TOML file with one table per command; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic toy corpus.
    GenToy(GenToyArgs),
    /// Validate and normalize a knowledge base.
    BuildKb(BuildKbArgs),
    /// Tag queries with an event type and arguments.
    Tag(TagArgs),
    /// Render tagged queries as marker sequences.
    Format(FormatArgs),
    /// Train (or instantiate) the bi-encoder.
    TrainBi(TrainBiArgs),
    /// Embed the knowledge base.
    Index(IndexArgs),
    /// Top-k candidates per query.
    Retrieve(RetrieveArgs),
    /// Generate synthetic out-of-KB training queries.
    NegGen(NegGenArgs),
    /// Train the cross-scorer.
    TrainCross(TrainCrossArgs),
    /// Choose an entry or NIL per query.
    Link(LinkArgs),
    /// Score decisions against gold labels.
    Eval(EvalArgs),
    /// Compare evaluation reports.
    Report(ReportArgs),
}

macro_rules! dispatch {
    ($cfg:expr, $args:expr, $name:literal, $run:path) => {
        $run(config::merge(&$args, &$cfg, $name)?)
    };
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenToy(a) => dispatch!(cfg, a, "gen-toy", gen_toy),
        Command::BuildKb(a) => dispatch!(cfg, a, "build-kb", build_kb),
        Command::Tag(a) => dispatch!(cfg, a, "tag", tag),
        Command::Format(a) => dispatch!(cfg, a, "format", format),
        Command::TrainBi(a) => dispatch!(cfg, a, "train-bi", train_bi),
        Command::Index(a) => dispatch!(cfg, a, "index", index),
        Command::Retrieve(a) => dispatch!(cfg, a, "retrieve", retrieve),
        Command::NegGen(a) => dispatch!(cfg, a, "neg-gen", neg_gen),
        Command::TrainCross(a) => dispatch!(cfg, a, "train-cross", train_cross),
        Command::Link(a) => dispatch!(cfg, a, "link", link),
        Command::Eval(a) => dispatch!(cfg, a, "eval", eval),
        Command::Report(a) => dispatch!(cfg, a, "report", report),
    }
}

fn main() -> ProcessExit {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ProcessExit::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ProcessExit::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ProcessExit::from(e.code as u8)
        }
    }
}
