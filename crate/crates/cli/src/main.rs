//! `topos`: build, intervene on, diff and serve world-model runs.
//!
//! Exit codes: 0 success (or no drift), 1 drift detected, 2 usage or
//! missing input, 3 pipeline failure.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use topos_cli::commands::{self, summary_lines, CliError, ExitCode};

#[derive(Parser)]
#[command(name = "topos", version, about = "Contextual world-model engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a run directory from a config file.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply an intervention spec to a run and write the counterfactual run.
    Intervene {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report drift between two runs; exits 1 when any drift is found.
    Diff { a: PathBuf, b: PathBuf },
    /// Generate a synthetic corpus with ground truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run built from a synthetic corpus against its ground truth.
    Score {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Earlier run to measure drift from.
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Serve a directory of runs over HTTP.
    Serve {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

/// Stdout writes that tolerate a closed pipe (`topos diff a b | head`).
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Build { config, out } => {
            let r = commands::cmd_build(&config, out.as_deref())?;
            say!("run: {}", r.run_dir.display());
            say!("{}", summary_lines(&r.summary));
            say!("recommendation: {}", r.recommendation);
        }
        Command::Intervene { base, spec, out } => {
            let r = commands::cmd_intervene(&base, &spec, out.as_deref())?;
            say!("run: {}", r.run_dir.display());
            let o = &r.run.outcome;
            say!(
                "{} modified claims ({} events, {} claim rows), {} appended events",
                o.modified_claims,
                o.modified_events,
                o.modified_claim_rows,
                o.appended_events
            );
            if let Some(s) = &r.run.substrate {
                say!(
                    "substrate baseline {} counterfactual {} (relative {:.4})",
                    s.baseline,
                    s.counterfactual,
                    s.effect.relative
                );
            }
            say!("{}", summary_lines(&r.run.bundle.summary));
            say!("drift entries: {}", r.run.diff.entry_count());
        }
        Command::Diff { a, b } => {
            let report = commands::cmd_diff(&a, &b)?;
            say!("{}", pretty(&report));
            if !report.is_empty() {
                return Ok(ExitCode::Drift);
            }
        }
        Command::Synth { spec, out } => {
            commands::cmd_synth(&spec, &out)?;
            say!("corpus: {}", out.display());
        }
        Command::Score { run, spec, against } => {
            say!(
                "{}",
                pretty(&commands::cmd_score(&run, &spec, against.as_deref())?)
            );
        }
        Command::Serve { runs, port } => {
            if !runs.is_dir() {
                return Err(CliError::Usage(format!(
                    "{} is not a directory",
                    runs.display()
                )));
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Usage(e.to_string()))?;
            eprintln!("serving {} on 127.0.0.1:{port}", runs.display());
            rt.block_on(topos_cli::service::serve(&runs, port))
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
    }
    Ok(ExitCode::Ok)
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                ExitCode::Usage as i32
            } else {
                0
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code as i32);
}
