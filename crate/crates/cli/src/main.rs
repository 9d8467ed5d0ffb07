use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use holon_core::runtime::{RunOptions, World};
use holon_core::scenario::{self, parse_injection};
use holon_core::trace::Trace;

/// Exit code for unreadable or invalid inputs.
const INPUT_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "hpm", version, about = "Run and check holon scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop the run at this tick.
        #[arg(long)]
        until: Option<u64>,
        /// Extra sensation, e.g. `'SOS type=wildfire loc=loc(61.5, 23.8)'`; `@N` sets the tick.
        #[arg(long = "inject", value_name = "SPEC")]
        injections: Vec<String>,
        /// Trace output file; stdout when omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Check a trace against an assertions file.
    Verify { trace: PathBuf, assertions: PathBuf },
    /// Validate a scenario without running it.
    Check { scenario: PathBuf },
}

fn read(path: &PathBuf) -> Result<String, ExitCode> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(INPUT_ERROR)
    })
}

fn run(
    path: PathBuf,
    seed: Option<u64>,
    until: Option<u64>,
    injections: Vec<String>,
    trace: Option<PathBuf>,
) -> Result<ExitCode, ExitCode> {
    let scenario = scenario::load(&path).map_err(|errors| {
        for e in &errors.0 {
            eprintln!("error: {e}");
        }
        ExitCode::from(INPUT_ERROR)
    })?;
    let mut options = RunOptions { seed, until, injections: Vec::new() };
    for spec in &injections {
        let inj = parse_injection(spec, 1).map_err(|e| {
            eprintln!("error: --inject `{spec}`: {e}");
            ExitCode::from(INPUT_ERROR)
        })?;
        options.injections.push(inj);
    }
    let report = World::run(&scenario, &options);
    let text = report.trace.render();
    match &trace {
        Some(p) => fs::write(p, &text).map_err(|e| {
            eprintln!("error: {}: {e}", p.display());
            ExitCode::from(INPUT_ERROR)
        })?,
        None => print!("{text}"),
    }
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    if report.capped {
        eprintln!("stopped at t={} with events pending", report.end);
    }
    eprintln!("{} events, setup done at t={}, ended at t={}", report.trace.len(), report.setup_end, report.end);
    Ok(ExitCode::from(report.exit_code() as u8))
}

fn verify(trace: PathBuf, assertions: PathBuf) -> Result<ExitCode, ExitCode> {
    let parsed = Trace::parse(&read(&trace)?).map_err(|e| {
        eprintln!("error: {}: {e}", trace.display());
        ExitCode::from(INPUT_ERROR)
    })?;
    let results = scenario::verify(&parsed, &read(&assertions)?).map_err(|e| {
        eprintln!("error: {}: {e}", assertions.display());
        ExitCode::from(INPUT_ERROR)
    })?;
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("{tag} {}:{} {} ({})", assertions.display(), r.line, r.text, r.detail);
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn check(path: PathBuf) -> Result<ExitCode, ExitCode> {
    match scenario::load(&path) {
        Ok(s) => {
            let f = &s.file;
            println!(
                "ok: {} holons, {} compositions, {} collaborations, {} behaviours",
                f.holons.len(),
                f.compositions.len(),
                f.collaborations.len(),
                s.behaviour_count()
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(errors) => {
            for e in &errors.0 {
                eprintln!("error: {e}");
            }
            Ok(ExitCode::FAILURE)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, until, injections, trace } => run(scenario, seed, until, injections, trace),
        Command::Verify { trace, assertions } => verify(trace, assertions),
        Command::Check { scenario } => check(scenario),
    };
    result.unwrap_or_else(|code| code)
}
