use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

use commands::Ctx;

#[derive(Parser)]
#[command(name = "decaylab", version, about = "Unstable-state decay laws and TCSPC histogram analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the spectral density on an energy grid.
    Spectral(Common),
    /// Survival amplitude, probability and decay intensity on a time grid.
    Survival(Common),
    /// Per-channel decay probabilities and band intensities.
    Multichannel(Common),
    /// Synthesize Poisson-noised TCSPC histograms.
    Synth(Common),
    /// Fit one model family to a histogram.
    Fit(Common),
    /// Fit both families and compare them.
    Compare(Common),
    /// Turnover time and late-time power-law exponent.
    Asymptote(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the configured quadrature tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Leave creation timestamps out of outputs, for byte-identical reruns.
    #[arg(long)]
    no_timestamps: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (run, common): (fn(&Ctx) -> error::Result<()>, Common) = match cli.command {
        Command::Spectral(c) => (commands::spectral, c),
        Command::Survival(c) => (commands::survival, c),
        Command::Multichannel(c) => (commands::multichannel, c),
        Command::Synth(c) => (commands::synth, c),
        Command::Fit(c) => (commands::fit_cmd, c),
        Command::Compare(c) => (commands::compare, c),
        Command::Asymptote(c) => (commands::asymptote, c),
    };
    let ctx = Ctx {
        config: common.config,
        out: common.out,
        seed: common.seed,
        tol: common.tol,
        timestamps: !common.no_timestamps,
    };
    match run(&ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("decaylab: {e}");
            e.exit_code()
        }
    }
}
