use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use monospde_cli::{report, run, validate, CliError, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "monospde", version, about = "Run and report monospde studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and name the regime it instantiates.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Execute the configured study and write the artifact directory.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
        /// Artifact directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify an artifact directory and print its verdicts.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    dump_states: bool,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides { paths: self.paths, seed: self.seed, threads: self.threads, dump_states: self.dump_states }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, CliError> {
    match cmd {
        Command::Validate { config, flags } => {
            let cfg = ExperimentConfig::load(&config, &flags.overrides())?;
            let r = validate(&cfg)?;
            print!("{}", r.render());
            println!("digest: {}", cfg.digest());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, flags, out } => {
            let mut cfg = ExperimentConfig::load(&config, &flags.overrides())?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            let outcome = run(&cfg)?;
            println!(
                "{}: {} ({})",
                outcome.study.study,
                if outcome.study.verdict.pass { "PASS" } else { "FAIL" },
                outcome.study.verdict.detail
            );
            println!("artifacts in {}", outcome.dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dir } => {
            let summary = report(&dir)?;
            print!("{}", summary.text);
            Ok(if summary.all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}
