use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::commands;
use crate::error::CliError;
use crate::run_config::schema;

#[derive(Debug, Parser)]
#[command(name = "malle", version, about = "Malleable-convolution denoisers: train, denoise, verify, bench, inspect")]
pub struct Cli {
    /// Worker threads; falls back to MALLE_THREADS, then 1.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on the configured corpus.
    Train(TrainArgs),
    /// Add noise to a clean image, denoise it and report PSNR.
    Denoise(DenoiseArgs),
    /// Run the oracle and finite-difference suites.
    Verify(VerifyArgs),
    /// FLOP, memory and latency report.
    Bench(BenchArgs),
    /// Compare a network's output with one grid cell's kernel applied everywhere.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration file of key=value lines.
    #[arg(long, visible_alias = "grid")]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. --set train.iterations=100 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for checkpoints, logs and the effective config.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from the state saved in --out.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this iteration, keeping a resumable state.
    #[arg(long)]
    pub stop_at: Option<usize>,
    /// Suppress progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// PPM/PGM input: clean when --sigma is given, otherwise already noisy.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Denoised image to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Synthesize AWGN at this level (0-255 scale) before denoising.
    #[arg(long)]
    pub sigma: Option<f32>,
    /// Noise seed used with --sigma.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Clean reference for PSNR when --in is already noisy.
    #[arg(long)]
    pub clean: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Oracle,
    Grad,
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    /// Random configurations in the oracle suite.
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
    /// Random draws per op in the gradient suite.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print only failures and the summary.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for bench.csv and the effective config.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Model checkpoint with at least one MalleConv layer.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Grid cell as row,col.
    #[arg(long, value_parser = parse_cell)]
    pub cell: (usize, usize),
    /// Side-by-side image of the default and swapped outputs.
    #[arg(long)]
    pub out: PathBuf,
    /// Layer index of the MalleConv to swap; defaults to the first one.
    #[arg(long)]
    pub layer: Option<usize>,
}

fn parse_cell(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected row,col, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad cell index `{v}`"));
    Ok((num(r)?, num(c)?))
}

fn threads(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n.max(1));
    }
    match std::env::var("MALLE_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map(|n| n.max(1)).map_err(|_| CliError::Config(format!("MALLE_THREADS must be an integer, got `{v}`"))),
        Err(_) => Ok(1),
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    malle_core::parallel::set_threads(threads(cli.threads)?);
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Denoise(a) => commands::denoise(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Inspect(a) => commands::inspect(&a),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cmd = Cli::command().after_help(schema()).mut_subcommands(|s| s.after_help(schema()));
    let parsed = cmd.try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_parsing() {
        assert_eq!(parse_cell("3,4"), Ok((3, 4)));
        assert!(parse_cell("3").is_err());
        assert!(parse_cell("a,1").is_err());
    }

    #[test]
    fn parser_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["malle", "verify", "--bogus"]), 2);
        assert_eq!(run(["malle"]), 2);
        assert_eq!(run(["malle", "train"]), 2);
        assert_eq!(run(["malle", "--help"]), 0);
    }
}
