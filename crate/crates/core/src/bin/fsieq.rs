use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fsieq::config::{load_config, parse_config};
use fsieq::run::{property_suite_config, run, RunOptions};
use fsieq::Error;

#[derive(Parser)]
#[command(name = "fsieq", version, about = "Equilibria of a spring-mounted rigid body in a steady stream")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Exec {
    /// Output directory (overrides output_dir of the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 or unset uses all cores
    #[arg(long, env = "FSIEQ_THREADS")]
    threads: Option<usize>,
    /// Single worker; CSV outputs are bitwise reproducible
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a JSON config
    Run {
        config: PathBuf,
        #[command(flatten)]
        exec: Exec,
    },
    /// Parse and validate a config without solving anything
    Validate { config: PathBuf },
    /// Run the built-in property suite
    Props {
        #[command(flatten)]
        exec: Exec,
    },
}

fn report(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, exec) = match cli.command {
        Command::Validate { config } => {
            return match std::fs::read_to_string(&config).map_err(Error::from).and_then(|t| parse_config(&t)) {
                Err(e) => report(&e),
                Ok(cfg) => match cfg.validate() {
                    Ok(()) => {
                        println!("{}: valid {:?} configuration", config.display(), cfg.scenario);
                        ExitCode::SUCCESS
                    }
                    Err(e) => report(&e),
                },
            };
        }
        Command::Run { config, exec } => match load_config(&config) {
            Ok(cfg) => (cfg, exec),
            Err(e) => return report(&e),
        },
        Command::Props { exec } => {
            let out = exec.out.clone().unwrap_or_else(|| PathBuf::from("fsieq-props"));
            (property_suite_config(&out), exec)
        }
    };
    let opts = RunOptions { out: exec.out, threads: exec.threads.filter(|&t| t > 0), deterministic: exec.deterministic };
    match run(&cfg, &opts) {
        Ok(outcome) => {
            println!(
                "{} artifacts written to {} (status {})",
                outcome.manifest.artifacts.len() + 1,
                outcome.dir.display(),
                outcome.status.code()
            );
            ExitCode::from(outcome.status.code() as u8)
        }
        Err(e) => report(&e),
    }
}
