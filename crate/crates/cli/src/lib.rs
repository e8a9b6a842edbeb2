//! Command line driver for the `dualact` solvers.
//!
//! [`execute`] runs one configured experiment and returns its artifacts;
//! [`write_outputs`] puts them on disk.

pub mod config;
pub mod output;
pub mod runs;
pub mod verify;

use std::time::Instant;

use thiserror::Error;

pub use config::{parse_config, parse_config_str, ConfigError, RunConfig, Subcommand};
pub use output::{write_outputs, ConvergenceLog, FieldTable, Outcome, RunSummary};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write outputs: {0}")]
    Io(#[from] std::io::Error),
}

/// Process exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    VerifyFailed,
    NotConverged,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Converged => 0,
            Status::VerifyFailed => 1,
            Status::NotConverged => 2,
        }
    }
}

pub const CONFIG_ERROR_CODE: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => CONFIG_ERROR_CODE,
            CliError::Io(_) => 1,
        }
    }
}

/// Run the experiment selected by `cfg.subcommand`.
///
/// Solver failures do not abort: they are recorded in the summary and the
/// run is reported as not converged.
pub fn execute(cfg: &RunConfig) -> Result<(Outcome, Status), CliError> {
    let sub = cfg
        .subcommand
        .ok_or_else(|| ConfigError::Invalid { key: "subcommand".into(), reason: "no subcommand given".into() })?;
    let start = Instant::now();
    let mut summary = RunSummary::new(sub.to_string(), cfg.seed);
    let mut log = ConvergenceLog::default();
    let mut fields = None;
    let mut status = None;
    let result = match sub {
        Subcommand::Algebraic => runs::run_algebraic(cfg, &mut summary, &mut log),
        Subcommand::Ibvp => runs::run_ibvp(cfg, &mut summary, &mut log).map(|t| fields = Some(t)),
        Subcommand::Disloc => runs::run_disloc(cfg, &mut summary, &mut log).map(|t| fields = Some(t)),
        Subcommand::Fdmpoint => {
            runs::run_fdmpoint(cfg, &mut summary, &mut log);
            Ok(())
        }
        Subcommand::Verify => {
            let checks = verify::run_checks(&cfg.verify, cfg.seed);
            for (i, c) in checks.iter().enumerate() {
                log.push(&c.name, i, c.value, 0.0);
            }
            let all = checks.iter().all(|c| c.pass);
            summary.converged = all;
            summary.metric("passed", checks.iter().filter(|c| c.pass).count());
            summary.metric("failed", checks.iter().filter(|c| !c.pass).count());
            let map: serde_json::Map<String, serde_json::Value> = checks
                .iter()
                .map(|c| (c.name.clone(), serde_json::to_value(c).expect("plain data")))
                .collect();
            summary.metric("checks", serde_json::Value::Object(map));
            status = Some(if all { Status::Converged } else { Status::VerifyFailed });
            Ok(())
        }
    };
    if let Err(e) = result {
        log::error!("{sub} run failed: {e}");
        summary.converged = false;
        summary.notes.push(format!("solver error: {e}"));
    }
    summary.wall_time = start.elapsed().as_secs_f64();
    let status = status.unwrap_or(if summary.converged { Status::Converged } else { Status::NotConverged });
    Ok((Outcome { summary, convergence: log, fields }, status))
}
