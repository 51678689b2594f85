//! `morphfit` command-line interface.
//!
//! Subcommands: `build-model`, `register`, `reconstruct`, `synth`,
//! `evaluate`. Exit codes: 0 on success, 1 for validation/input problems,
//! 2 for numeric failures. `MORPHFIT_THREADS` caps the register worker
//! pool.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use morphfit::Error;

#[derive(Parser)]
#[command(name = "morphfit", version, about = "Probabilistic non-rigid surface registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a low-rank shape model from a reference mesh and a Gaussian
    /// kernel, and serialize it.
    BuildModel(commands::build_model::BuildModelArgs),
    /// Register a model to one or more targets (sampling or deterministic
    /// baseline), writing one result directory per run.
    Register(commands::register::RegisterArgs),
    /// Register against a partial target and export the per-vertex
    /// normal/tangential uncertainty split with region labels.
    Reconstruct(commands::register::RegisterArgs),
    /// Generate deterministic synthetic benchmark meshes.
    Synth(commands::synth::SynthArgs),
    /// Summarize result directories into a plot-ready CSV.
    Evaluate(commands::evaluate::EvaluateArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::BuildModel(args) => commands::build_model::run(args),
        Command::Register(args) => commands::register::run(args, false),
        Command::Reconstruct(args) => commands::register::run(args, true),
        Command::Synth(args) => commands::synth::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Numeric(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
