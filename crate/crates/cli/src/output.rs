//! Report files: JSON-lines results, CSV metrics/grids, and plain-text
//! summaries. Every file opens with a header (tool version, config hash,
//! seed) so a run can be reproduced exactly from its outputs.

use std::fmt::Write as _;
use std::path::Path;

use dmlcqr::dml::DmlEstimate;
use dmlcqr::sim::mc::{CoverageReport, EstimatorMetrics, McReport};
use dmlcqr::{Error, Result};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "dmlcqr";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the resolved semantic configuration (excludes thread count
/// and output locations, which do not affect results).
pub fn config_hash<T: serde::Serialize>(plan: &T) -> Result<String> {
    let canonical = serde_json::to_string(plan)
        .map_err(|e| Error::Parameter(format!("cannot serialize config: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn header_record(command: &str, hash: &str, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "record": "header",
        "tool": TOOL,
        "version": VERSION,
        "command": command,
        "config_hash": hash,
        "seed": seed,
    })
}

/// `# key: value` comment lines accepted by the CSV reader on re-ingest.
pub fn csv_header(command: &str, hash: &str, seed: u64) -> String {
    format!(
        "# tool: {TOOL} {VERSION}\n# command: {command}\n# config_hash: {hash}\n# seed: {seed}\n"
    )
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| Error::Schema(format!("cannot write {}: {e}", path.display())))
}

pub fn write_jsonl(path: &Path, records: &[serde_json::Value]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    write_text(path, &out)
}

fn fmt_g(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "NA".into()
    }
}

/// One result line per quantile level for the `estimate` command.
pub fn estimate_summary(estimates: &[DmlEstimate]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>6} {:>12} {:>12} {:>12} {:>12} {:>6} {:>6}",
        "tau", "theta", "se", "ci_lo", "ci_hi", "k", "mode"
    );
    for e in estimates {
        let _ = writeln!(
            s,
            "{:>6} {:>12} {:>12} {:>12} {:>12} {:>6} {:>6}",
            format!("{:.3}", e.tau),
            fmt_g(e.theta),
            fmt_g(e.se),
            fmt_g(e.ci_lo),
            fmt_g(e.ci_hi),
            e.k,
            e.mode,
        );
    }
    s
}

/// Long-format metrics CSV: exactly four metric rows (bias, sd, rmse, mae)
/// per estimator.
pub fn metrics_csv(head: &str, report: &McReport) -> String {
    let mut s = String::from(head);
    s.push_str("estimator,metric,value\n");
    for m in &report.metrics {
        for (name, value) in [
            ("bias", m.bias),
            ("sd", m.sd),
            ("rmse", m.rmse),
            ("mae", m.mae),
        ] {
            let _ = writeln!(s, "{},{},{}", m.estimator, name, value);
        }
    }
    s
}

fn metrics_table(metrics: &[EstimatorMetrics]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>6}",
        "estimator", "bias", "sd", "rmse", "mae", "mean_se", "reject", "fail"
    );
    for m in metrics {
        let _ = writeln!(
            s,
            "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>6}",
            m.estimator.to_string(),
            fmt_g(m.bias),
            fmt_g(m.sd),
            fmt_g(m.rmse),
            fmt_g(m.mae),
            fmt_g(m.mean_se),
            fmt_g(m.rejection_rate),
            m.failures,
        );
    }
    s
}

/// Monte-Carlo study summary table.
pub fn simulate_summary(report: &McReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "n = {}, p = {}, tau = {}, theta = {}, reps = {}",
        report.n, report.p, report.tau, report.theta_true, report.reps
    );
    s.push_str(&metrics_table(&report.metrics));
    s
}

/// One rejection-rate matrix (rows r2_d, columns r2_y) per estimator.
pub fn coverage_csv(
    head: &str,
    report: &CoverageReport,
    estimator: &str,
    r2_d_grid: &[f64],
    r2_y_grid: &[f64],
) -> String {
    let mut s = String::from(head);
    let _ = writeln!(s, "# estimator: {estimator}");
    let _ = writeln!(s, "# reps_per_cell: {}", report.reps);
    s.push_str("r2_d");
    for r2_y in r2_y_grid {
        let _ = write!(s, ",r2_y={r2_y}");
    }
    s.push('\n');
    for (i, r2_d) in r2_d_grid.iter().enumerate() {
        let _ = write!(s, "{r2_d}");
        for (j, _) in r2_y_grid.iter().enumerate() {
            let cell = &report.cells[i * r2_y_grid.len() + j];
            let rate = cell
                .metrics
                .iter()
                .find(|m| m.estimator.to_string() == estimator)
                .map(|m| m.rejection_rate)
                .unwrap_or(f64::NAN);
            if rate.is_finite() {
                let _ = write!(s, ",{rate}");
            } else {
                let _ = write!(s, ",NA");
            }
        }
        s.push('\n');
    }
    s
}

/// Machine-readable failure record printed to stderr before a nonzero exit.
pub fn error_record(err: &Error) -> serde_json::Value {
    let kind = match err {
        Error::Schema(_) => "schema",
        Error::Parse { .. } => "parse",
        Error::Parameter(_) => "parameter",
        Error::Io(_) => "io",
        Error::DegenerateData(_) => "degenerate_data",
        Error::NonConvergence { .. } => "non_convergence",
        Error::RankDeficient(_) => "rank_deficient",
        Error::Quality(_) => "quality",
        Error::SingularJacobian { .. } => "singular_jacobian",
        Error::DegenerateFold { .. } => "degenerate_fold",
        Error::Search(_) => "search",
    };
    serde_json::json!({
        "record": "error",
        "kind": kind,
        "message": err.to_string(),
    })
}

/// 0 = success, 1 = estimation failure, 2 = configuration or I/O failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Schema(_) | Error::Parse { .. } | Error::Parameter(_) | Error::Io(_) => 2,
        _ => 1,
    }
}
