use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use parakernel_cli::{dump_grid, out_dir, run_one, suite, with_threads, CliError, ExperimentConfig};

/// Run parakernel verification experiments.
#[derive(Parser)]
#[command(name = "parakernel", version)]
struct Cli {
    /// Worker threads; 1 is the reference deterministic mode.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (default: $PARAKERNEL_OUT, then ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run { config: PathBuf },
    /// Run every config listed in a JSON manifest.
    Suite {
        manifest: PathBuf,
        /// Record errors and keep going instead of stopping at the first.
        #[arg(long)]
        continue_on_error: bool,
    },
    /// Write the ladder solutions of a coercivity or mu-scan config.
    DumpGrid { config: PathBuf },
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    let out = out_dir(cli.out);
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let done = with_threads(cli.threads, || run_one(&cfg, &out))??;
            for s in done.report.failing() {
                eprintln!("  failing: {} {:?}", s.name, s.values);
            }
            println!("{}: {} ({}) -> {}", cfg.id, done.report.verdict().tag(), done.outcome.tag(), done.files.json.display());
            Ok(done.outcome.ok())
        }
        Command::Suite { manifest, continue_on_error } => {
            let summary = with_threads(cli.threads, || {
                suite::run(&manifest, &out, continue_on_error, |e| match (&e.outcome, &e.error) {
                    (Some(o), _) => println!("{}: {}", e.id, o.tag()),
                    (None, Some(err)) => println!("{}: error: {err}", e.id),
                    (None, None) => {}
                })
            })??;
            println!("{}: {}/{} ok", summary.name, summary.passed, summary.experiments.len());
            Ok(summary.ok)
        }
        Command::DumpGrid { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            for path in with_threads(cli.threads, || dump_grid(&cfg, &out))?? {
                println!("{}", path.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
