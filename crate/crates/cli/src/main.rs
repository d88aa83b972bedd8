use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use kls_cli::{parse_config, run_experiment, Command, ExperimentConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    Sample,
    Constants,
    Volume,
    Optimize,
    Cutplane,
    Sloc,
    Needles,
    Isotropy,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Command {
        match s {
            Sub::Sample => Command::Sample,
            Sub::Constants => Command::Constants,
            Sub::Volume => Command::Volume,
            Sub::Optimize => Command::Optimize,
            Sub::Cutplane => Command::Cutplane,
            Sub::Sloc => Command::Sloc,
            Sub::Needles => Command::Needles,
            Sub::Isotropy => Command::Isotropy,
        }
    }
}

/// Logconcave sampling experiments.
///
/// Every flag can also be set through the environment variable named in its
/// help; flags win over the environment, which wins over the config file.
#[derive(Debug, Parser)]
#[command(name = "kls", version)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,
    /// TOML experiment configuration.
    #[arg(long, env = "KLS_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "KLS_SEED")]
    seed: Option<u64>,
    /// Output directory (default: the `out` key, else the current directory).
    #[arg(long, env = "KLS_OUT")]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "KLS_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("{}: {e}", path.display());
                    return ExitCode::from(1);
                }
            };
            match parse_config(&text) {
                Ok(c) => c,
                Err(errors) => {
                    eprintln!("{}: invalid configuration", path.display());
                    eprintln!("{errors}");
                    return ExitCode::from(1);
                }
            }
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t as usize);
    }
    let out = cli
        .out
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    match run_experiment(&cfg, cli.command.into(), &out) {
        Ok(report) => {
            println!("{}", report.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
