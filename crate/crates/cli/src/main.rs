use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nbdebias_cli::commands;
use nbdebias_cli::config::RunConfig;
use nbdebias_cli::{exit_code, EXIT_CONFIG};

#[derive(Parser)]
#[command(
    name = "nbdebias",
    version,
    about = "Debiased recommendation under selection bias and neighborhood effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value config file, layered over the built-in defaults
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key; repeatable and applied after the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (same as `--set output.dir=DIR`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved configuration and exit
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build a semi-synthetic world, or a Coat-format train/test pair with `synth.format=coat`
    Synth(Common),
    /// Relative error of every estimator on every prediction matrix over several seeds
    Estimate(Common),
    /// Train a recommender on logged ratings and score it on held-out ratings
    Train(Common),
    /// Score a saved checkpoint on the held-out split
    Eval(Common),
    /// Empirical MSE over a bandwidth grid and at the plug-in optimal bandwidth
    SweepBandwidth(Common),
    /// Empirical bias and variance of the kernel estimators across bandwidths
    VerifyBiasVariance(Common),
}

type Runner = fn(&RunConfig) -> nbdebias::error::Result<Vec<PathBuf>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, Runner) = match &cli.command {
        Command::Synth(c) => (c, commands::synth),
        Command::Estimate(c) => (c, commands::estimate),
        Command::Train(c) => (c, commands::train),
        Command::Eval(c) => (c, commands::eval),
        Command::SweepBandwidth(c) => (c, commands::sweep),
        Command::VerifyBiasVariance(c) => (c, commands::verify),
    };
    let mut overrides = common.overrides.clone();
    if let Some(out) = &common.out {
        overrides.push(format!("output.dir={}", out.display()));
    }
    let cfg = match RunConfig::load(common.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if common.print_config {
        print!("{}{}", cfg.comment(), cfg.render());
        return ExitCode::SUCCESS;
    }
    match run(&cfg) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
