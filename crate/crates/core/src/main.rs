use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scm_active::config::{ExperimentConfig, OUTPUT_DIR_ENV};
use scm_active::harness::{read_trace, run_experiment, summarize, write_summary, write_trace};
use scm_active::Error;

/// Active learning of structural functions with GP beliefs.
#[derive(Parser)]
#[command(name = "scm-active", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write trace.csv and summary.csv.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory [default: config `run.output`, then $SCM_ACTIVE_OUT, then ./out]
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run only this policy (repeatable).
        #[arg(long = "policy")]
        policies: Vec<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Check a config without running it.
    Validate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Average a trace over trials.
    Summarize {
        trace: PathBuf,
        /// Output file [default: summary.csv next to the trace]
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

/// 1 = bad input (config, flags, trace format), 2 = failure while running.
enum Failure {
    Input(Error),
    Runtime(Error),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(e.into()))
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config).map_err(Failure::Input)?;
            let e = cfg.resolve().map_err(Failure::Input)?;
            let names: Vec<&str> = e.policies.iter().map(|p| p.name()).collect();
            println!(
                "ok: {} nodes, {} candidates, policies {}",
                e.truth.n_nodes(),
                e.candidates.len(),
                names.join(",")
            );
            Ok(())
        }
        Command::Run {
            config,
            out,
            seed,
            policies,
            trials,
            steps,
        } => {
            let mut cfg = ExperimentConfig::load(&config).map_err(Failure::Input)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if !policies.is_empty() {
                cfg.policy.names = policies;
            }
            if let Some(t) = trials {
                cfg.run.trials = t;
            }
            if let Some(s) = steps {
                cfg.run.steps = s;
            }
            let e = cfg.resolve().map_err(Failure::Input)?;
            let dir = out
                .or_else(|| cfg.run.output.clone())
                .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out"));
            std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(e.into()))?;
            eprintln!("{} candidates", e.candidates.len());

            let rows = run_experiment(&e);
            write_trace(create(&dir.join("trace.csv"))?, &rows).map_err(Failure::Runtime)?;
            let summary = summarize(&rows).map_err(Failure::Runtime)?;
            write_summary(create(&dir.join("summary.csv"))?, &summary).map_err(Failure::Runtime)?;
            eprintln!("wrote {}", dir.display());
            Ok(())
        }
        Command::Summarize { trace, out } => {
            let file = File::open(&trace).map_err(|e| Failure::Input(e.into()))?;
            let rows = read_trace(file).map_err(Failure::Input)?;
            let summary = summarize(&rows).map_err(Failure::Input)?;
            let out = out.unwrap_or_else(|| trace.with_file_name("summary.csv"));
            write_summary(create(&out)?, &summary).map_err(Failure::Runtime)?;
            Ok(())
        }
    }
}
