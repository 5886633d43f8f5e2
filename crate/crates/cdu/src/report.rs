//! Report persistence. A report directory holds `report.json` (the full,
//! versioned report), `metrics.csv` (one row per task with the four
//! conditions; suite medians for suites) and `metrics_long.csv` (one row
//! per scenario, task and condition, for plotting).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Conditions, ScenarioReport, SuiteReport, REPORT_FORMAT_VERSION};

pub const REPORT_JSON: &str = "report.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_LONG_CSV: &str = "metrics_long.csv";
pub const METRICS_HEADER: &str = "task_id,before,after_drift,ae_baseline,unlearned";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Scenario(ScenarioReport),
    Suite(SuiteReport),
}

impl Report {
    pub fn format_version(&self) -> u32 {
        match self {
            Report::Scenario(r) => r.format_version,
            Report::Suite(r) => r.format_version,
        }
    }

    /// `(task_id, conditions)` rows of `metrics.csv`.
    pub fn task_rows(&self) -> Vec<(usize, Conditions)> {
        match self {
            Report::Scenario(r) => r.tasks.iter().map(|t| (t.task_id, Conditions::of(t))).collect(),
            Report::Suite(s) => s.summary.iter().map(|t| (t.task_id, t.median)).collect(),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(report: &Report) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for (id, c) in report.task_rows() {
        let [a, b, e, u] = c.values().map(cell);
        let _ = writeln!(out, "{id},{a},{b},{e},{u}");
    }
    out
}

pub fn metrics_long_csv(report: &Report) -> String {
    let mut out = String::from("scenario,task_id,condition,value,kept\n");
    let mut emit = |scenario: usize, r: &ScenarioReport, kept: bool| {
        for t in &r.tasks {
            for (name, v) in Conditions::NAMES.iter().zip(Conditions::of(t).values()) {
                let _ = writeln!(out, "{scenario},{},{name},{},{kept}", t.task_id, cell(v));
            }
        }
    };
    match report {
        Report::Scenario(r) => emit(0, r, true),
        Report::Suite(s) => s
            .scenarios
            .iter()
            .zip(&s.kept)
            .enumerate()
            .for_each(|(i, (r, k))| emit(i, r, *k)),
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json =
        serde_json::to_string_pretty(report).map_err(|e| Error::Data(format!("cannot serialize report: {e}")))?;
    write_file(&dir.join(REPORT_JSON), &json)?;
    write_file(&dir.join(METRICS_CSV), &metrics_csv(report))?;
    write_file(&dir.join(METRICS_LONG_CSV), &metrics_long_csv(report))
}

pub fn load_report(dir: &Path) -> Result<Report> {
    let path = dir.join(REPORT_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let report: Report = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if report.format_version() != REPORT_FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported report format version {}",
            path.display(),
            report.format_version()
        )));
    }
    Ok(report)
}

/// Human-readable summary for the terminal.
pub fn render_table(report: &Report) -> String {
    let mut out = String::new();
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    match report {
        Report::Scenario(r) => {
            let _ = writeln!(
                out,
                "scenario seed {}  C = {}  AE loss pre {:.4} post {:.4} unlearned {:.4}  ({:.1} s)",
                r.seed, r.regularization, r.ae_loss_pre, r.ae_loss_post, r.ae_loss_unlearned, r.runtime_seconds
            );
            for w in &r.warnings {
                let _ = writeln!(out, "warning: {w}");
            }
            if let Some(f) = &r.fault {
                let _ = writeln!(
                    out,
                    "fault {:?} on feature {} (parameter {:.4}) at {}",
                    f.kind, f.target, f.parameter, f.onset
                );
            }
        }
        Report::Suite(s) => {
            let _ = writeln!(
                out,
                "suite seed {}  scenarios {}  kept {}  filtered {}  (per-task medians)",
                s.seed,
                s.scenarios.len(),
                s.kept_count(),
                s.filtered
            );
            if let Some(w) = &s.warning {
                let _ = writeln!(out, "warning: {w}");
            }
        }
    }
    let _ = writeln!(
        out,
        "{:>7} {:>10} {:>12} {:>12} {:>10}",
        "task", "before", "after_drift", "ae_baseline", "unlearned"
    );
    for (id, c) in report.task_rows() {
        let [a, b, e, u] = c.values().map(fmt);
        let _ = writeln!(out, "{id:>7} {a:>10} {b:>12} {e:>12} {u:>10}");
    }
    out
}
