//! `shellrig`: problem-file driven front end to `shellrig-core`.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails or the
//! computation errors out, 2 for unreadable or invalid input.

pub mod commands;
pub mod problem;
pub mod report;
pub mod validate;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde_json::json;
use shellrig_core::par;

use crate::commands::{Outcome, RunError};
use crate::problem::InputError;
use crate::report::{config_hash, Check, Report};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Energy,
    Gcm,
    Thicken,
    Extend,
    Minimize,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Energy => "energy",
            Command::Gcm => "gcm",
            Command::Thicken => "thicken",
            Command::Extend => "extend",
            Command::Minimize => "minimize",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "shellrig", version, about = "Fundamental forms, energies and rigidity checks for shells")]
pub struct Cli {
    pub command: Command,
    /// Problem file (JSON); optional for `validate`.
    pub problem: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-node CSV fields and traces.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Include wall time in the report (makes it run-dependent).
    #[arg(long)]
    pub timing: bool,
}

/// Everything `run` produces, before anything is written.
#[derive(Debug)]
pub struct Run {
    pub report: Report,
    pub tables: Vec<report::Table>,
    pub exit: i32,
}

fn input_failure(e: &InputError) -> i32 {
    eprintln!("shellrig: input error: {e}");
    EXIT_INPUT
}

/// Parses, runs and assembles the report. Returns `Err(exit_code)` on input
/// errors, which are reported on stderr.
pub fn execute(cli: &Cli) -> Result<Run, i32> {
    let start = Instant::now();
    let problem = match &cli.problem {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                input_failure(&InputError::new("", format!("cannot read {}: {e}", path.display())))
            })?;
            let file = problem::parse(&text).map_err(|e| input_failure(&e))?;
            Some(file)
        }
        None if cli.command == Command::Validate => None,
        None => return Err(input_failure(&InputError::new("", format!("`{}` needs a problem file", cli.command.name())))),
    };
    let hash = config_hash(&json!({
        "command": cli.command.name(),
        "problem": problem,
        "seed": cli.seed,
        "threads": cli.threads,
    }));
    let resolved = match problem {
        Some(file) if cli.command != Command::Validate => {
            Some(par::with_threads(cli.threads, || problem::resolve(file)).map_err(|e| input_failure(&e))?)
        }
        _ => None,
    };

    let outcome: Result<Outcome, RunError> = par::with_threads(cli.threads, || match cli.command {
        Command::Validate => Ok(Outcome { checks: validate::default_suite(cli.seed), ..Default::default() }),
        cmd => {
            let p = resolved.as_ref().expect("resolved for every command but validate");
            match cmd {
                Command::Energy => commands::energy(p),
                Command::Gcm => commands::gcm(p),
                Command::Thicken => commands::thicken(p),
                Command::Extend => commands::extend(p),
                Command::Minimize => commands::minimize_cmd(p, cli.seed),
                Command::Validate => unreachable!(),
            }
        }
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(RunError::Input(e)) => return Err(input_failure(&e)),
        Err(RunError::Core(e)) => Outcome {
            checks: vec![Check::flag(format!("{}.completed", cli.command.name()), false, e.to_string())],
            ..Default::default()
        },
    };
    let passed = outcome.checks.iter().all(|c| c.passed);
    let report = Report {
        command: cli.command.name().into(),
        problem: cli.problem.as_ref().map(|p| p.display().to_string()),
        config_hash: hash,
        seed: cli.seed,
        threads: cli.threads,
        results: outcome.results,
        checks: outcome.checks,
        passed,
        wall_time_s: cli.timing.then(|| start.elapsed().as_secs_f64()),
    };
    Ok(Run { report, tables: outcome.tables, exit: if passed { EXIT_PASS } else { EXIT_FAIL } })
}

/// Runs the command and writes its outputs; returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let run = match execute(cli) {
        Ok(r) => r,
        Err(code) => return code,
    };
    if let Some(dir) = &cli.csv {
        for t in &run.tables {
            if let Err(e) = t.write_to(dir) {
                eprintln!("shellrig: cannot write {}: {e}", dir.join(&t.file).display());
                return EXIT_FAIL;
            }
        }
    }
    let json = run.report.to_json();
    match &cli.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &json) {
                eprintln!("shellrig: cannot write {}: {e}", path.display());
                return EXIT_FAIL;
            }
            for c in &run.report.checks {
                println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
            }
        }
        None => print!("{json}"),
    }
    for c in run.report.checks.iter().filter(|c| !c.passed) {
        match &c.detail {
            Some(d) => eprintln!("shellrig: check failed: {} ({d})", c.name),
            None => eprintln!("shellrig: check failed: {} ({:e})", c.name, c.value),
        }
    }
    run.exit
}
