use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use gentest_cli::{run, Command, Stage};

/// Failing-test generation experiments on synthetic shape images.
#[derive(Parser, Debug)]
#[command(name = "gentest", version)]
struct Cli {
    /// synth, train-generator, inject-fault, train-classifier, adv-train,
    /// gen-tests, attack-pixel, analyze or full-experiment
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Resume full-experiment from this stage.
    #[arg(long)]
    stage: Option<Stage>,
    /// Worker threads for per-seed test generation.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli.command, &cli.config, cli.stage, cli.jobs) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
