use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::train::{MetricsRow, METRICS_HEADER};
use super::HarnessError;

/// Pass/fail thresholds relative to the reference (first) arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative gap of the final train loss.
    pub loss_rel: f64,
    /// Absolute gap of the final eval metric.
    pub metric_abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { loss_rel: 0.02, metric_abs: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub name: String,
    pub path: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub final_loss: f32,
    pub final_metric: f32,
    /// `|loss - ref| / |ref|` at the final row.
    pub final_loss_rel_gap: f64,
    pub final_metric_gap: f64,
    /// Largest per-row eval-metric gap over the rows both runs share.
    pub max_metric_gap: f64,
    pub bayes_log_loss: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub tolerances: Tolerances,
    /// In input order; the first arm is the reference.
    pub arms: Vec<ArmSummary>,
}

impl RunSummary {
    pub fn reference(&self) -> &ArmSummary {
        &self.arms[0]
    }

    /// Largest final-row or per-row metric gap of any arm.
    pub fn max_metric_gap(&self) -> f64 {
        self.arms.iter().map(|a| a.max_metric_gap.max(a.final_metric_gap)).fold(0.0, f64::max)
    }

    pub fn all_pass(&self) -> bool {
        self.arms.iter().all(|a| a.pass)
    }

    /// Arm names sorted by final train loss, lowest first.
    pub fn by_final_loss(&self) -> Vec<&ArmSummary> {
        let mut v: Vec<&ArmSummary> = self.arms.iter().collect();
        v.sort_by(|a, b| a.final_loss.total_cmp(&b.final_loss));
        v
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let r = self.reference();
        let _ = writeln!(s, "reference arm: {}", r.name);
        let _ = writeln!(
            s,
            "tolerances: final loss within {:.2}% relative, eval metric within {}",
            self.tolerances.loss_rel * 100.0,
            self.tolerances.metric_abs
        );
        if let Some(b) = self.arms.iter().find_map(|a| a.bayes_log_loss) {
            let _ = writeln!(s, "bayes reference log loss: {b:.6}");
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<18} {:>6} {:>8} {:>12} {:>12} {:>10} {:>11} {:>11}  status",
            "arm", "epoch", "iter", "final_loss", "eval_metric", "loss_gap%", "metric_gap", "max_m_gap"
        );
        for a in &self.arms {
            let last = a.rows.last().expect("validated non-empty");
            let _ = writeln!(
                s,
                "{:<18} {:>6} {:>8} {:>12.6} {:>12.6} {:>10.4} {:>11.6} {:>11.6}  {}",
                a.name,
                last.epoch,
                last.iter,
                a.final_loss,
                a.final_metric,
                a.final_loss_rel_gap * 100.0,
                a.final_metric_gap,
                a.max_metric_gap,
                if a.pass { "PASS" } else { "FAIL" }
            );
        }
        let order: Vec<&str> = self.by_final_loss().iter().map(|a| a.name.as_str()).collect();
        let _ = writeln!(s, "\norder by final loss: {}", order.join(" < "));
        s
    }

    /// One CSV line per arm.
    pub fn write_summary(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "arm",
            "path",
            "final_epoch",
            "final_iter",
            "final_loss",
            "final_eval_metric",
            "final_loss_rel_gap",
            "final_metric_gap",
            "max_metric_gap",
            "bayes_log_loss",
            "pass",
        ])?;
        for a in &self.arms {
            let last = a.rows.last().expect("validated non-empty");
            w.write_record([
                a.name.clone(),
                a.path.display().to_string(),
                last.epoch.to_string(),
                last.iter.to_string(),
                a.final_loss.to_string(),
                a.final_metric.to_string(),
                a.final_loss_rel_gap.to_string(),
                a.final_metric_gap.to_string(),
                a.max_metric_gap.to_string(),
                a.bayes_log_loss.map(|b| b.to_string()).unwrap_or_default(),
                a.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn schema(path: &Path, detail: impl Into<String>) -> HarnessError {
    HarnessError::Schema { path: path.to_path_buf(), detail: detail.into() }
}

/// Reads a metrics CSV, requiring the exact header.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(schema(path, format!("header {header:?}, expected {METRICS_HEADER:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| schema(path, e.to_string()))?;
        let field = |k: usize| rec.get(k).ok_or_else(|| schema(path, format!("row {} is short", i + 1)));
        let bad = |k: usize| schema(path, format!("row {}: cannot parse `{}`", i + 1, METRICS_HEADER[k]));
        rows.push(MetricsRow {
            epoch: field(0)?.parse().map_err(|_| bad(0))?,
            iter: field(1)?.parse().map_err(|_| bad(1))?,
            loss: field(2)?.parse().map_err(|_| bad(2))?,
            eval_metric: field(3)?.parse().map_err(|_| bad(3))?,
            grad_underflow_frac: field(4)?.parse().map_err(|_| bad(4))?,
            wall_ms: field(5)?.parse().map_err(|_| bad(5))?,
        });
    }
    if rows.is_empty() {
        return Err(schema(path, "no rows"));
    }
    Ok(rows)
}

/// `metrics.csv` is named after its directory; other files after their stem.
fn arm_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match (stem.as_str(), path.parent().and_then(Path::file_name)) {
        ("metrics", Some(dir)) => dir.to_string_lossy().into_owned(),
        _ => stem,
    }
}

/// Reads `bayes_log_loss` from a sibling `run_info.txt`, when present.
fn bayes_reference(path: &Path) -> Option<f64> {
    let text = fs::read_to_string(path.with_file_name("run_info.txt")).ok()?;
    text.lines().find_map(|l| {
        let (k, v) = l.split_once('=')?;
        (k.trim() == "bayes_log_loss").then(|| v.trim().parse().ok()).flatten()
    })
}

fn rel_gap(a: f32, reference: f32) -> f64 {
    let (a, r) = (a as f64, reference as f64);
    if a == r {
        0.0
    } else {
        (a - r).abs() / r.abs()
    }
}

/// Compares runs against the first path.
pub fn compare_runs(paths: &[PathBuf], tol: Tolerances) -> Result<RunSummary, HarnessError> {
    if paths.len() < 2 {
        return Err(HarnessError::Config("compare needs at least two metrics files".into()));
    }
    let runs = paths.iter().map(|p| read_metrics(p)).collect::<Result<Vec<_>, _>>()?;
    let reference = &runs[0];
    let ref_last = reference.last().expect("non-empty");
    let arms = paths
        .iter()
        .zip(&runs)
        .map(|(path, rows)| {
            let last = rows.last().expect("non-empty");
            let max_metric_gap = rows
                .iter()
                .zip(reference)
                .map(|(a, b)| (a.eval_metric as f64 - b.eval_metric as f64).abs())
                .fold(0.0, f64::max);
            let final_loss_rel_gap = rel_gap(last.loss, ref_last.loss);
            let final_metric_gap = (last.eval_metric as f64 - ref_last.eval_metric as f64).abs();
            let aligned = last.iter == ref_last.iter && last.epoch == ref_last.epoch;
            ArmSummary {
                name: arm_name(path),
                path: path.clone(),
                rows: rows.clone(),
                final_loss: last.loss,
                final_metric: last.eval_metric,
                final_loss_rel_gap,
                final_metric_gap,
                max_metric_gap,
                bayes_log_loss: bayes_reference(path),
                pass: aligned && final_loss_rel_gap <= tol.loss_rel && final_metric_gap <= tol.metric_abs,
            }
        })
        .collect();
    Ok(RunSummary { tolerances: tol, arms })
}

/// Writes `report.txt` and `summary.csv` into `out`.
pub fn write_comparison(summary: &RunSummary, out: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(out)?;
    fs::write(out.join("report.txt"), summary.report())?;
    summary.write_summary(&out.join("summary.csv"))
}
