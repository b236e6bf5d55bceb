//! Serialized analysis outputs: long-format results CSV, per-test summary
//! JSON, and plot-ready JSON. All files embed the run id and contain no
//! timestamps, so reruns with the same inputs are byte-identical.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use limark::envelope::{Direction, StatTestOutput};
use limark::summary::{StatKind, SummaryCurve};

use crate::error::{AppError, AppResult};

/// Stable results CSV column order.
pub const RESULT_COLUMNS: [&str; 12] = [
    "run_id",
    "statistic",
    "transform",
    "j",
    "l",
    "scope",
    "point_id",
    "r",
    "value_unnormalized",
    "value_normalized",
    "p_value",
    "significant",
];

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v}"),
        _ => String::new(),
    }
}

fn curve_value(curve: &SummaryCurve, t: usize) -> (String, String) {
    let unnorm = curve.unnormalized[t];
    let norm = curve.normalized.as_ref().map(|n| n[t]);
    (
        fmt_opt(Some(unnorm).filter(|v| !v.is_nan())),
        fmt_opt(norm.filter(|v| !v.is_nan())),
    )
}

struct ResultRow<'a> {
    scope: &'a str,
    point_id: &'a str,
    curve: &'a SummaryCurve,
    p_value: Option<f64>,
    pointwise: Option<&'a [bool]>,
}

/// Long-format curve table: one row per (test, grid point).
pub fn write_results_csv(
    path: &Path,
    run_id: &str,
    outputs: &[StatTestOutput],
    ids: &[String],
) -> AppResult<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| AppError::Numeric(format!("cannot create {}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{}", RESULT_COLUMNS.join(",")).map_err(io_err)?;
    for output in outputs {
        let stat = &output.stat;
        let mut rows: Vec<ResultRow> = Vec::new();
        if let Some(global) = &output.global {
            rows.push(ResultRow {
                scope: "global",
                point_id: "",
                curve: &global.observed,
                p_value: Some(global.result.p_value),
                pointwise: Some(&global.result.pointwise_significant),
            });
        }
        if let Some(locals) = &output.local {
            for local in locals {
                rows.push(ResultRow {
                    scope: "local",
                    point_id: &ids[local.anchor],
                    curve: &local.observed,
                    p_value: local.result.as_ref().map(|r| r.p_value),
                    pointwise: local.result.as_ref().map(|r| &r.pointwise_significant[..]),
                });
            }
        }
        for row in rows {
            let r = row.curve.grid.distances();
            for t in 0..r.len() {
                let (unnorm, norm) = curve_value(row.curve, t);
                let significant = match row.pointwise {
                    Some(flags) => flags[t].to_string(),
                    None => String::new(),
                };
                writeln!(
                    w,
                    "{run_id},{},{},{},{},{},{},{},{},{},{},{}",
                    stat.kind.label(),
                    stat.transform,
                    stat.j + 1,
                    stat.l + 1,
                    row.scope,
                    row.point_id,
                    r[t],
                    unnorm,
                    norm,
                    fmt_opt(row.p_value),
                    significant,
                )
                .map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

fn io_err(e: std::io::Error) -> AppError {
    AppError::Numeric(format!("write failure: {e}"))
}

/// One object per executed test in the summary JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestSummaryEntry {
    pub statistic: String,
    pub transform: String,
    pub j: usize,
    pub l: usize,
    pub scope: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: Option<bool>,
    pub underpowered: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<String>,
    pub significant_ranges: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestSummaryFile {
    pub run_id: String,
    pub alpha: f64,
    pub tests: Vec<TestSummaryEntry>,
}

pub fn write_summary_json(path: &Path, summary: &TestSummaryFile) -> AppResult<()> {
    let text = serde_json::to_string_pretty(summary)
        .map_err(|e| AppError::Numeric(format!("summary serialization: {e}")))?;
    std::fs::write(path, text)
        .map_err(|e| AppError::Numeric(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Association class of a significant local test, following the convention
/// green = association, red = repulsion. For t1/t3 a curve above the
/// envelope means attraction; for the variogram the reading flips, since
/// small values mean similar neighbors.
pub fn association_class(kind: StatKind, direction: Option<Direction>) -> &'static str {
    match (kind, direction) {
        (_, None) => "none",
        (StatKind::Variogram, Some(Direction::High)) => "negative",
        (StatKind::Variogram, Some(Direction::Low)) => "positive",
        (_, Some(Direction::High)) => "positive",
        (_, Some(Direction::Low)) => "negative",
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotCurve {
    pub label: String,
    pub observed: Vec<Option<f64>>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    /// positive | negative | none
    pub class: String,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotMap {
    pub label: String,
    pub points: Vec<MapPoint>,
}

/// Everything the plot subcommand needs, produced by analyze.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotData {
    pub run_id: String,
    pub window: [f64; 4],
    pub r: Vec<f64>,
    pub curves: Vec<PlotCurve>,
    pub maps: Vec<PlotMap>,
}

pub fn nan_to_none(values: &[f64]) -> Vec<Option<f64>> {
    values
        .iter()
        .map(|v| if v.is_nan() { None } else { Some(*v) })
        .collect()
}

pub fn write_plot_data(path: &Path, data: &PlotData) -> AppResult<()> {
    let text = serde_json::to_string_pretty(data)
        .map_err(|e| AppError::Numeric(format!("plot data serialization: {e}")))?;
    std::fs::write(path, text)
        .map_err(|e| AppError::Numeric(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn read_plot_data(path: &Path) -> AppResult<PlotData> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| AppError::data(format!("{}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> AppResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| AppError::Numeric(format!("cannot create {}: {e}", dir.display())))
}

pub fn results_csv_path(dir: &Path) -> PathBuf {
    dir.join("results.csv")
}

pub fn summary_json_path(dir: &Path) -> PathBuf {
    dir.join("summary.json")
}

pub fn plot_data_path(dir: &Path) -> PathBuf {
    dir.join("plotdata.json")
}
