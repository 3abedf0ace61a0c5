//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on configuration errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::{ExperimentConfig, ExperimentKind};
use super::experiments::{run, RunOptions};
use crate::error::Error;
use crate::selftest::run_selftest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "lowrank", version, about = "Low-rank recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convergence traces per configuration.
    Converge(RunArgs),
    /// Recovery-rate grid.
    Phase(RunArgs),
    /// Regularity constant estimates.
    Rip(RunArgs),
    /// Error plateaus under dense noise.
    Tolerance(RunArgs),
    /// Runs the built-in example suite.
    Selftest,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's output.dir, else the current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides base_seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "LOWRANK_THREADS")]
    threads: Option<usize>,
    /// Leave wall-time columns empty.
    #[arg(long)]
    no_timing: bool,
}

fn expected(cmd: &Command) -> Option<ExperimentKind> {
    match cmd {
        Command::Converge(_) => Some(ExperimentKind::Convergence),
        Command::Phase(_) => Some(ExperimentKind::PhaseTransition),
        Command::Rip(_) => Some(ExperimentKind::RipAudit),
        Command::Tolerance(_) => Some(ExperimentKind::ToleranceSweep),
        Command::Selftest => None,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn cli_main<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    let want = expected(&cli.command);
    let args = match cli.command {
        Command::Selftest => {
            let checks = run_selftest();
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                let _ = writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let _ = writeln!(out, "{}/{} checks passed", checks.len() - failed, checks.len());
            return if failed == 0 { EXIT_OK } else { EXIT_RUNTIME };
        }
        Command::Converge(a) | Command::Phase(a) | Command::Rip(a) | Command::Tolerance(a) => a,
    };

    let mut cfg = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CONFIG;
        }
    };
    if Some(cfg.experiment) != want {
        let _ = writeln!(
            err,
            "error: {}: experiment is {:?}, which this subcommand does not run",
            args.config.display(),
            cfg.experiment.name()
        );
        return EXIT_CONFIG;
    }
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if args.threads == Some(0) {
        let _ = writeln!(err, "error: --threads must be at least 1");
        return EXIT_CONFIG;
    }
    let opts = RunOptions {
        out_dir: args.out.or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from(".")),
        threads: args.threads,
        timing: !args.no_timing,
    };
    match run(&cfg, &opts) {
        Ok(res) => {
            for line in &res.lines {
                let _ = writeln!(out, "{line}");
            }
            for f in &res.files {
                let _ = writeln!(out, "wrote {}", f.display());
            }
            EXIT_OK
        }
        Err(e @ Error::Config(_)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}
