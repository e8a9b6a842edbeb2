//! Run artifacts: `summary.json`, `convergence.csv` and `fields.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

/// Outcome of one run. Serialized with sorted keys.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub subcommand: String,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Primal residual norms by equation.
    pub residuals: BTreeMap<String, f64>,
    /// Errors against reference solutions.
    pub errors: BTreeMap<String, f64>,
    /// Problem-specific scalars, written at the top level.
    #[serde(flatten)]
    pub metrics: BTreeMap<String, Value>,
    pub notes: Vec<String>,
    /// Seconds; the only field expected to differ between identical runs.
    pub wall_time: f64,
}

impl RunSummary {
    pub fn new(subcommand: impl Into<String>, seed: u64) -> Self {
        Self { subcommand: subcommand.into(), seed, ..Self::default() }
    }

    pub fn metric(&mut self, key: &str, v: impl Into<Value>) {
        self.metrics.insert(key.to_string(), v.into());
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        // Going through `Value` sorts every object by key.
        let v = serde_json::to_value(self)?;
        let mut s = serde_json::to_string_pretty(&v)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub index: usize,
    pub solve: String,
    pub iteration: usize,
    pub grad_norm: f64,
    pub step: f64,
}

/// Convergence history across possibly several solves; `index` runs over the whole file.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceLog {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceLog {
    pub fn push(&mut self, solve: &str, iteration: usize, grad_norm: f64, step: f64) {
        let index = self.rows.len();
        self.rows.push(ConvergenceRow { index, solve: solve.to_string(), iteration, grad_norm, step });
    }

    pub fn extend_trace(&mut self, solve: &str, trace: &[dualact::optcore::IterationRecord]) {
        for r in trace {
            self.push(solve, r.iteration, r.grad_norm, r.step);
        }
    }
}

/// Nodal fields in long format: one row per (node, field).
#[derive(Debug, Clone, Default)]
pub struct FieldTable {
    pub coords: Vec<&'static str>,
    pub rows: Vec<(Vec<f64>, String, f64)>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: RunSummary,
    pub convergence: ConvergenceLog,
    pub fields: Option<FieldTable>,
}

pub fn write_outputs(out: &Outcome, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.json"), out.summary.to_json()?)?;

    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(dir.join("convergence.csv"))?;
    w.write_record(["index", "solve", "iteration", "grad_norm", "step"])?;
    for r in &out.convergence.rows {
        w.serialize(r)?;
    }
    w.flush()?;

    if let Some(table) = &out.fields {
        let mut w = csv::Writer::from_path(dir.join("fields.csv"))?;
        let mut header: Vec<&str> = table.coords.clone();
        header.extend(["field", "value"]);
        w.write_record(&header)?;
        let mut rec = Vec::with_capacity(header.len());
        for (coords, name, value) in &table.rows {
            rec.clear();
            rec.extend(coords.iter().map(|c| c.to_string()));
            rec.push(name.clone());
            rec.push(value.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_keys_are_sorted() {
        let mut s = RunSummary::new("ibvp", 1);
        s.metric("zeta", 1.0);
        s.metric("alpha", 2.0);
        let json = s.to_json().unwrap();
        let keys: Vec<&str> = json
            .lines()
            .filter(|l| l.starts_with("  \""))
            .map(|l| l.trim().split('"').nth(1).unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(keys.contains(&"alpha") && keys.contains(&"wall_time"));
    }

    #[test]
    fn convergence_index_is_global() {
        let mut log = ConvergenceLog::default();
        log.push("a", 0, 1.0, 1.0);
        log.push("a", 1, 0.1, 1.0);
        log.push("b", 0, 1.0, 1.0);
        assert_eq!(log.rows.iter().map(|r| r.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }
}
