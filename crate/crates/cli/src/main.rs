use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use dualact_cli::{execute, parse_config, write_outputs, CliError, RunConfig, Subcommand, CONFIG_ERROR_CODE};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Algebraic,
    Ibvp,
    Disloc,
    Fdmpoint,
    Verify,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Algebraic => Subcommand::Algebraic,
            Command::Ibvp => Subcommand::Ibvp,
            Command::Disloc => Subcommand::Disloc,
            Command::Fdmpoint => Subcommand::Fdmpoint,
            Command::Verify => Subcommand::Verify,
        }
    }
}

/// Dual variational solvers.
///
/// Exit status: 0 converged, 1 verification failure or I/O error,
/// 2 solver did not converge, 3 configuration error.
#[derive(Debug, Parser)]
#[command(name = "dualact", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML config; defaults are used for anything missing.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("DUALACT_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("DUALACT_THREADS must be a positive integer, got `{s}`")),
        },
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let sub = Subcommand::from(cli.command);
    let cfg = match &cli.config {
        Some(p) => parse_config(p),
        None => Ok(RunConfig::default()),
    }
    .and_then(|c| c.for_subcommand(sub));
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(CONFIG_ERROR_CODE);
        }
    };
    match threads_from_env() {
        Ok(Some(n)) => rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool setup")?,
        Ok(None) => {}
        Err(msg) => {
            eprintln!("error: {msg}");
            return Ok(CONFIG_ERROR_CODE);
        }
    }
    let out_dir = cli.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("dualact-out").join(sub.to_string()));

    let (outcome, status) = match execute(&cfg) {
        Ok(r) => r,
        Err(e @ CliError::Config(_)) => {
            eprintln!("error: {e}");
            return Ok(e.exit_code());
        }
        Err(e) => return Err(e.into()),
    };
    write_outputs(&outcome, &out_dir).with_context(|| format!("writing outputs to {}", out_dir.display()))?;

    let s = &outcome.summary;
    if let Some(checks) = s.metrics.get("checks").and_then(|c| c.as_object()) {
        for c in checks.values() {
            let pass = c["pass"].as_bool().unwrap_or(false);
            let note = c["note"].as_str().map(|n| format!(" ({n})")).unwrap_or_default();
            println!(
                "{} {:<28} {:.3e} {} {:.3e}{note}",
                if pass { "PASS" } else { "FAIL" },
                c["name"].as_str().unwrap_or_default(),
                c["value"].as_f64().unwrap_or(f64::NAN),
                c["relation"].as_str().unwrap_or_default(),
                c["tol"].as_f64().unwrap_or(f64::NAN),
            );
        }
    }
    println!(
        "{sub}: converged={} iterations={} grad_norm={:.3e} wall_time={:.2}s -> {}",
        s.converged,
        s.iterations,
        s.grad_norm,
        s.wall_time,
        out_dir.display()
    );
    for n in &s.notes {
        println!("note: {n}");
    }
    Ok(status.code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
