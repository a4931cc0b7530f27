//! Artifact writers: result tables, metric reports, samples, trajectories,
//! and per-plot columnar exports.
//!
//! Float columns use Rust's shortest round-trip formatting, so identical
//! values serialize identically and whole files are byte-stable. Wall
//! times live in their own file to keep the main artifacts reproducible.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::metrics::{MetricReport, SampleSet};
use crate::solvers::Trajectory;

use super::{ResultTable, RunError};

/// Which plot a columnar export feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Convergence,
    Ablation,
    Sweep,
}

impl std::str::FromStr for PlotKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "convergence" => Ok(Self::Convergence),
            "ablation" => Ok(Self::Ablation),
            "sweep" => Ok(Self::Sweep),
            other => Err(format!("unknown plot kind `{other}` (expected convergence|ablation|sweep)")),
        }
    }
}

/// `table.csv`: one row per `(variant, metric)`, no timing fields.
pub fn write_table_csv(table: &ResultTable, path: &Path) -> std::io::Result<()> {
    let mut out = String::from("config_hash,variant,metric,value,teacher_calls,student_calls\n");
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.config_hash, row.variant, row.metric, row.value, row.teacher_calls, row.student_calls
        ));
    }
    fs::write(path, out)
}

/// `timings.csv`: wall time per variant; excluded from determinism checks.
pub fn write_timings_csv(table: &ResultTable, path: &Path) -> std::io::Result<()> {
    let mut out = String::from("variant,wall_time_ms\n");
    for (variant, ms) in &table.wall_times_ms {
        out.push_str(&format!("{variant},{ms}\n"));
    }
    fs::write(path, out)
}

#[derive(Serialize)]
struct MetricJsonRow<'a> {
    config_hash: &'a str,
    variant: &'a str,
    metric: &'a str,
    value: f64,
    n: usize,
    seed_range: [u64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_error: Option<&'a [f64]>,
}

/// `metrics.json`: one row per report scalar, plus the mean-error vector.
pub fn write_metrics_json(
    config_hash: &str,
    seed: u64,
    reports: &[(String, usize, MetricReport)],
    path: &Path,
) -> std::io::Result<()> {
    let mut rows = Vec::new();
    for (variant, n, report) in reports {
        let seed_range = [seed, seed + *n as u64];
        rows.push(MetricJsonRow {
            config_hash,
            variant,
            metric: "sliced_wasserstein",
            value: report.sliced_wasserstein,
            n: *n,
            seed_range,
            mean_error: None,
        });
        rows.push(MetricJsonRow {
            config_hash,
            variant,
            metric: "mmd_rbf",
            value: report.mmd_rbf,
            n: *n,
            seed_range,
            mean_error: None,
        });
        rows.push(MetricJsonRow {
            config_hash,
            variant,
            metric: "cov_frobenius_error",
            value: report.cov_frobenius_error,
            n: *n,
            seed_range,
            mean_error: Some(&report.mean_error),
        });
        if let Some(w2) = report.w2_gaussian {
            rows.push(MetricJsonRow {
                config_hash,
                variant,
                metric: "w2_gaussian",
                value: w2,
                n: *n,
                seed_range,
                mean_error: None,
            });
        }
    }
    let text = serde_json::to_string_pretty(&rows).expect("serializable");
    fs::write(path, text)
}

/// `samples_<variant>.csv`: final points, one row per trajectory index.
pub fn write_samples_csv(samples: &SampleSet, path: &Path) -> std::io::Result<()> {
    let mut out = String::from("idx");
    for k in 0..samples.dim() {
        out.push_str(&format!(",x{k}"));
    }
    out.push('\n');
    for (i, row) in samples.rows().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out)
}

/// `traj_<variant>.csv`: per-step rows `(seed, step, t, x.., x0_hat..)`
/// plus one terminal row carrying the final state. The seed column is the
/// trajectory's stream id.
pub fn write_trajectories_csv(trajectories: &[Trajectory], dim: usize, path: &Path) -> std::io::Result<()> {
    let mut out = String::from("seed,step,t");
    for k in 0..dim {
        out.push_str(&format!(",x{k}"));
    }
    for k in 0..dim {
        out.push_str(&format!(",x0_hat{k}"));
    }
    out.push('\n');
    for traj in trajectories {
        for (step, record) in traj.records.iter().enumerate() {
            out.push_str(&format!("{},{},{}", traj.stream, step, record.t));
            for v in &record.x {
                out.push_str(&format!(",{v}"));
            }
            for v in &record.x0_hat {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("{},{},0", traj.stream, traj.records.len()));
        for v in &traj.final_x {
            out.push_str(&format!(",{v}"));
        }
        for v in &traj.final_x {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out)
}

/// Status marker for a run directory: `ok` or a failure note so partial
/// tables are recognizable.
pub fn write_status(path: &Path, error: Option<&str>) -> std::io::Result<()> {
    let body = match error {
        None => "{\n  \"status\": \"ok\"\n}\n".to_string(),
        Some(msg) => format!(
            "{{\n  \"status\": \"failed\",\n  \"error\": {}\n}}\n",
            serde_json::to_string(msg).expect("string serializes")
        ),
    };
    fs::write(path, body)
}

/// Reshape a result table into the columnar file one plot kind expects.
pub fn export_plotdata(table: &ResultTable, kind: PlotKind, out_dir: &Path) -> Result<std::path::PathBuf, RunError> {
    if table.rows.is_empty() {
        return Err(RunError::Invalid("cannot export an empty table".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| RunError::Invalid(e.to_string()))?;
    let (name, body) = match kind {
        PlotKind::Convergence => {
            let mut body = String::from("M,solver,endpoint_error\n");
            let mut found = false;
            for row in &table.rows {
                if row.metric != "endpoint_error" {
                    continue;
                }
                let (solver, m) = row
                    .variant
                    .split_once(':')
                    .ok_or_else(|| RunError::Invalid(format!("bad convergence variant label {}", row.variant)))?;
                body.push_str(&format!("{m},{solver},{}\n", row.value));
                found = true;
            }
            if !found {
                return Err(RunError::Invalid("table has no endpoint_error rows".into()));
            }
            ("convergence.csv", body)
        }
        PlotKind::Ablation => {
            let labels = ["baseline", "random", "same", "decreasing"];
            let mut body = String::from("variant,metric,value\n");
            let mut found = false;
            for label in labels {
                for row in table.rows.iter().filter(|r| r.variant == label) {
                    body.push_str(&format!("{label},{},{}\n", row.metric, row.value));
                    found = true;
                }
            }
            if !found {
                return Err(RunError::Invalid("table has no ablation variant rows".into()));
            }
            ("ablation.csv", body)
        }
        PlotKind::Sweep => {
            let mut body = String::from("lambda,metric,value,ci_low,ci_high\n");
            let mut found = false;
            for row in &table.rows {
                let Some(lambda) = row.variant.strip_prefix("lambda=") else {
                    continue;
                };
                if row.metric.ends_with("_ci_low") || row.metric.ends_with("_ci_high") {
                    continue;
                }
                let low = table.value(&row.variant, &format!("{}_ci_low", row.metric));
                let high = table.value(&row.variant, &format!("{}_ci_high", row.metric));
                body.push_str(&format!(
                    "{lambda},{},{},{},{}\n",
                    row.metric,
                    row.value,
                    low.map(|v| v.to_string()).unwrap_or_default(),
                    high.map(|v| v.to_string()).unwrap_or_default(),
                ));
                found = true;
            }
            if !found {
                return Err(RunError::Invalid("table has no lambda-sweep rows".into()));
            }
            ("sweep.csv", body)
        }
    };
    let path = out_dir.join(name);
    let mut file = fs::File::create(&path).map_err(|e| RunError::Invalid(e.to_string()))?;
    file.write_all(body.as_bytes()).map_err(|e| RunError::Invalid(e.to_string()))?;
    Ok(path)
}

/// Parse a `table.csv` back into a result table (for the export verb).
pub fn read_table_csv(path: &Path) -> Result<ResultTable, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::Invalid(format!("{}: {e}", path.display())))?;
    let mut table = ResultTable::default();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(RunError::Invalid(format!("line {} has {} fields, expected 6", i + 1, fields.len())));
        }
        table.push(super::TableRow {
            config_hash: fields[0].to_string(),
            variant: fields[1].to_string(),
            metric: fields[2].to_string(),
            value: fields[3]
                .parse()
                .map_err(|e| RunError::Invalid(format!("line {}: bad value: {e}", i + 1)))?,
            teacher_calls: fields[4]
                .parse()
                .map_err(|e| RunError::Invalid(format!("line {}: bad teacher_calls: {e}", i + 1)))?,
            student_calls: fields[5]
                .parse()
                .map_err(|e| RunError::Invalid(format!("line {}: bad student_calls: {e}", i + 1)))?,
        });
    }
    if table.rows.is_empty() {
        return Err(RunError::Invalid("table is empty".into()));
    }
    Ok(table)
}
