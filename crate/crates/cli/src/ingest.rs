//! CSV ingestion: schema-driven parsing of composition-marked point data,
//! validation against the declared window and zero policy, and untransformed
//! column summary statistics.

use std::path::Path;

use serde::Serialize;

use limark::coda::validate_and_close;
use limark::pattern::{MarkedPattern, Point, Window};

use crate::config::{parse_zero_policy, DatasetSection};
use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Serialize)]
pub struct PartSummary {
    pub part: String,
    pub min: f64,
    pub q1: f64,
    pub mean: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub n_points: usize,
    pub window: [f64; 4],
    pub parts: Vec<PartSummary>,
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub pattern: MarkedPattern,
    pub ids: Vec<String>,
    pub summary: IngestSummary,
}

/// Linear-interpolation quantile of pre-sorted data (the convention used by
/// most statistical software for continuous samples).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Min/Q1/Mean/Median/Q3/Max of the raw (untransformed) part columns.
pub fn summarize_parts(names: &[String], columns: &[Vec<f64>]) -> Vec<PartSummary> {
    names
        .iter()
        .zip(columns)
        .map(|(name, column)| {
            let mut sorted = column.clone();
            sorted.sort_by(f64::total_cmp);
            let mean = column.iter().sum::<f64>() / column.len() as f64;
            PartSummary {
                part: name.clone(),
                min: sorted[0],
                q1: quantile_sorted(&sorted, 0.25),
                mean,
                median: quantile_sorted(&sorted, 0.5),
                q3: quantile_sorted(&sorted, 0.75),
                max: sorted[sorted.len() - 1],
            }
        })
        .collect()
}

fn column_index(headers: &csv::StringRecord, name: &str) -> AppResult<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| AppError::data(format!("column '{name}' not found in CSV header")))
}

fn parse_field(record: &csv::StringRecord, idx: usize, line: u64, name: &str) -> AppResult<f64> {
    let raw = record
        .get(idx)
        .ok_or_else(|| AppError::data(format!("row {line}: missing field '{name}'")))?;
    raw.trim()
        .parse::<f64>()
        .map_err(|_| AppError::data(format!("row {line}: cannot parse '{raw}' in column '{name}'")))
}

/// Read a CSV per the dataset schema into a marked pattern.
///
/// Compositions are validated and closed to the configured sum constant,
/// which also re-closes percentage data (parts summing to about 100)
/// transparently. With an explicit window, points outside it are rejected
/// with their row number. Row numbers count CSV lines, header = line 1.
pub fn ingest_csv(path: &Path, dataset: &DatasetSection) -> AppResult<IngestOutput> {
    if dataset.part_columns.len() < 2 {
        return Err(AppError::config(
            "dataset.part_columns needs at least two columns",
        ));
    }
    {
        let mut all = dataset.part_columns.clone();
        all.push(dataset.x_column.clone());
        all.push(dataset.y_column.clone());
        if let Some(id) = &dataset.id_column {
            all.push(id.clone());
        }
        let mut dedup = all.clone();
        dedup.sort();
        dedup.dedup();
        if dedup.len() != all.len() {
            return Err(AppError::config("dataset columns must be distinct"));
        }
    }
    let policy = parse_zero_policy(&dataset.zero_policy)?;
    if !(dataset.kappa.is_finite() && dataset.kappa > 0.0) {
        return Err(AppError::config(format!(
            "dataset.kappa must be positive, got {}",
            dataset.kappa
        )));
    }

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| AppError::data(format!("bad CSV header: {e}")))?
        .clone();
    let x_idx = column_index(&headers, &dataset.x_column)?;
    let y_idx = column_index(&headers, &dataset.y_column)?;
    let part_idx: Vec<usize> = dataset
        .part_columns
        .iter()
        .map(|name| column_index(&headers, name))
        .collect::<AppResult<_>>()?;
    let id_idx = dataset
        .id_column
        .as_ref()
        .map(|name| column_index(&headers, name))
        .transpose()?;

    let mut locations = Vec::new();
    let mut marks = Vec::new();
    let mut ids = Vec::new();
    let mut raw_columns: Vec<Vec<f64>> = vec![Vec::new(); part_idx.len()];
    for (row, record) in reader.records().enumerate() {
        let line = (row + 2) as u64;
        let record = record.map_err(|e| AppError::data(format!("row {line}: {e}")))?;
        let x = parse_field(&record, x_idx, line, &dataset.x_column)?;
        let y = parse_field(&record, y_idx, line, &dataset.y_column)?;
        let mut raw = Vec::with_capacity(part_idx.len());
        for (idx, name) in part_idx.iter().zip(&dataset.part_columns) {
            raw.push(parse_field(&record, *idx, line, name)?);
        }
        let mark = validate_and_close(&raw, dataset.kappa, policy)
            .map_err(|e| AppError::data(format!("row {line}: {e}")))?;
        for (column, value) in raw_columns.iter_mut().zip(&raw) {
            column.push(*value);
        }
        locations.push(Point::new(x, y));
        marks.push(mark);
        ids.push(match id_idx {
            Some(idx) => record
                .get(idx)
                .unwrap_or_default()
                .to_string(),
            None => row.to_string(),
        });
    }
    if locations.is_empty() {
        return Err(AppError::data("CSV contains no data rows"));
    }

    let window = match dataset.window.to_lowercase().as_str() {
        "bbox" => {
            let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
            let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in &locations {
                x_min = x_min.min(p.x);
                x_max = x_max.max(p.x);
                y_min = y_min.min(p.y);
                y_max = y_max.max(p.y);
            }
            let m = dataset.margin;
            if m < 0.0 {
                return Err(AppError::config("dataset.margin must be non-negative"));
            }
            Window::new(x_min - m, x_max + m, y_min - m, y_max + m).map_err(|e| {
                AppError::data(format!(
                    "degenerate bounding box ({e}); set dataset.margin > 0"
                ))
            })?
        }
        "explicit" => {
            let [x_min, x_max, y_min, y_max] = dataset.ranges.ok_or_else(|| {
                AppError::config("dataset.window = \"explicit\" needs dataset.ranges")
            })?;
            let window = Window::new(x_min, x_max, y_min, y_max)
                .map_err(|e| AppError::config(format!("dataset.ranges: {e}")))?;
            for (row, p) in locations.iter().enumerate() {
                if !window.contains(p) {
                    return Err(AppError::data(format!(
                        "row {}: point ({}, {}) lies outside the declared window",
                        row + 2,
                        p.x,
                        p.y
                    )));
                }
            }
            window
        }
        other => {
            return Err(AppError::config(format!(
                "unknown dataset.window '{other}' (bbox | explicit)"
            )))
        }
    };

    let summary = IngestSummary {
        n_points: locations.len(),
        window: {
            let (x_min, x_max) = window.x_range();
            let (y_min, y_max) = window.y_range();
            [x_min, x_max, y_min, y_max]
        },
        parts: summarize_parts(&dataset.part_columns, &raw_columns),
    };
    let pattern = MarkedPattern::new(locations, marks, window)
        .map_err(|e| AppError::data(e.to_string()))?;
    Ok(IngestOutput {
        pattern,
        ids,
        summary,
    })
}

/// Render the summary as an aligned text table.
pub fn format_summary_table(summary: &IngestSummary) -> String {
    let mut out = String::new();
    let name_width = summary
        .parts
        .iter()
        .map(|p| p.part.len())
        .max()
        .unwrap_or(4)
        .max(4);
    out.push_str(&format!(
        "{:<name_width$} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "part", "min", "q1", "mean", "median", "q3", "max"
    ));
    for p in &summary.parts {
        out.push_str(&format!(
            "{:<name_width$} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}\n",
            p.part, p.min, p.q1, p.mean, p.median, p.q3, p.max
        ));
    }
    out
}
