use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use delaystab_cli::{run, Options, Verb};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Spectrum,
    Synthesize,
    Certify,
    Simulate,
    Report,
}

/// Output-feedback stabilization of delayed reaction-diffusion plants.
#[derive(Debug, Parser)]
#[command(name = "delaystab", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,

    /// JSON job configuration.
    #[arg(long)]
    config: PathBuf,

    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Certify only this theorem (1, 2 or 3).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    theorem: Option<u8>,

    /// Simulate with the control input switched off.
    #[arg(long)]
    open_loop: bool,

    /// Use the published gains for the reference plant.
    #[arg(long)]
    paper_gains: bool,

    /// Certificate JSON for the Lyapunov diagnostic in `simulate`.
    #[arg(long)]
    certificate: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let verb = match args.command {
        Command::Spectrum => Verb::Spectrum,
        Command::Synthesize => Verb::Synthesize,
        Command::Certify => Verb::Certify,
        Command::Simulate => Verb::Simulate,
        Command::Report => Verb::Report,
    };
    let opts = Options {
        config: args.config,
        out: args.out,
        theorem: args.theorem,
        open_loop: args.open_loop,
        paper_gains: args.paper_gains,
        certificate: args.certificate,
    };
    match run(verb, &opts) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
