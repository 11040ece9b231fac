mod args;
mod config;
mod run;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use config::{CliError, Config};
use run::Globals;

fn init_logging(quiet: bool) {
    let level = if quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("RUST_LOG")
        .format_timestamp(None)
        .init();
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let quiet = cli.quiet || cfg.global(None::<bool>, "quiet")?.unwrap_or(false);
    init_logging(quiet);
    if let Some(n) = cfg.global(cli.threads, "threads")? {
        if n == 0 {
            return config::usage("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Run(e.into()))?;
    }
    let g = Globals {
        seed: cfg.global(cli.seed, "seed")?,
        quiet,
    };
    run::dispatch(cli.command, &g, &cfg)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors and 0 for --help/--version
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
