use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use deepstop::config::{FileConfig, OutputFormat, Profile};
use deepstop::experiment::{emit_reports, run_experiment_collect, run_oracle};

/// Trains neural stopping policies and certifies them with Monte Carlo
/// lower/upper bounds.
#[derive(Parser)]
#[command(name = "deepstop", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, bound, and report every point of a config file.
    Run {
        /// TOML experiment description.
        #[arg(long)]
        config: PathBuf,
        /// Use the published sampling scale instead of the desk profile.
        #[arg(long)]
        paper_scale: bool,
        /// Output format, overriding the config file: csv or json.
        #[arg(long)]
        format: Option<String>,
        /// Output path, overriding the config file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; DEEPSTOP_THREADS and the config file are
        /// consulted when absent, then the machine's core count.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Solve the exact dynamic program of a scenario-tree config.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> deepstop::Result<ExitCode> {
    match cli.command {
        Command::Run { config, paper_scale, format, out, threads } => {
            let cfg = FileConfig::from_file(&config)?;
            let profile = if paper_scale { Profile::Paper } else { Profile::Desk };
            let mut run = cfg.resolve(profile)?;
            if let Some(f) = format {
                run.format = match f.as_str() {
                    "csv" => OutputFormat::Csv,
                    "json" => OutputFormat::Json,
                    other => {
                        return Err(deepstop::Error::InvalidConfig(format!(
                            "unknown output format {other:?}; expected \"csv\" or \"json\""
                        )))
                    }
                };
            }
            if let Some(o) = out {
                run.out = Some(o);
            }
            init_threads(threads.or_else(env_threads).or(run.threads));

            let (reports, failures) = run_experiment_collect(&run);
            if !reports.is_empty() {
                emit_reports(&reports, run.format, run.out.as_deref())?;
            }
            for f in &failures {
                eprintln!("error: {f}");
            }
            Ok(if failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Oracle { config } => {
            let cfg = FileConfig::from_file(&config)?;
            let run = cfg.resolve(Profile::Desk)?;
            let rows = run_oracle(&run)?;
            println!("problem_id,param_1,value,stop_nodes,total_nodes");
            for r in rows {
                println!(
                    "{},{},{},{},{}",
                    r.problem_id,
                    deepstop::experiment::fmt_sig6(r.param_1),
                    deepstop::experiment::fmt_sig6(r.value),
                    r.stop_nodes,
                    r.total_nodes
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn env_threads() -> Option<usize> {
    let raw = std::env::var("DEEPSTOP_THREADS").ok()?;
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            log::warn!("ignoring unparseable DEEPSTOP_THREADS={raw:?}");
            None
        }
    }
}

fn init_threads(requested: Option<usize>) {
    if let Some(n) = requested {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
}
