use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use cev_fb_cli::{cmd_boundary, cmd_converge, cmd_price, cmd_sweep, parse, CliError, ConfigError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cevfb", version, about = "American put pricing under the CEV model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (flat `key = value` file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output CSV path; defaults to the config's `output` key, then stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for strikes and sweep points.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Value, delta and boundary for every strike.
    Price,
    /// Fixed-step boundary convergence over `h_list`.
    Converge,
    /// Sensitivity to the controller tolerance and safety factor.
    Sweep,
    /// Exercise boundary after every accepted step.
    Boundary,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| ConfigError {
        line: None,
        key: None,
        message: "--config is required".into(),
    })?;
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        line: None,
        key: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let config = parse(&text)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError { line: None, key: None, message: "--threads must be positive".into() }.into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| ConfigError { line: None, key: None, message: e.to_string() })?;

    let csv = pool.install(|| -> Result<String, CliError> {
        match cli.command {
            Command::Price => cmd_price(&config),
            Command::Converge => cmd_converge(&config),
            Command::Sweep => cmd_sweep(&config),
            Command::Boundary => {
                let (csv, violations) = cmd_boundary(&config)?;
                for (k, v) in config.strikes.iter().zip(violations) {
                    if v > 0 {
                        eprintln!("warning: strike {k}: boundary rose on {v} accepted steps");
                    }
                }
                Ok(csv)
            }
        }
    })?;

    match cli.out.as_ref().or(config.output.as_ref()) {
        Some(path) => fs::write(path, csv)?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cevfb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
