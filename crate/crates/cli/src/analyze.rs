//! The analyze workflow: ingest a dataset, run the configured statistics
//! globally and locally under random labeling, and serialize curve tables,
//! test results, plot-ready data, and the run manifest.

use std::path::Path;

use limark::envelope::{run_pattern_tests, StatTestOutput};
use limark::rng::StreamKey;
use limark::summary::Track;

use crate::config::FileConfig;
use crate::error::{AppError, AppResult};
use crate::ingest::{format_summary_table, ingest_csv, IngestOutput};
use crate::manifest::RunManifest;
use crate::output::{
    association_class, ensure_dir, nan_to_none, plot_data_path, results_csv_path,
    summary_json_path, write_plot_data, write_results_csv, write_summary_json, MapPoint,
    PlotCurve, PlotData, PlotMap, TestSummaryEntry, TestSummaryFile,
};

// stream domain separating analysis permutations from simulation ones
const DOM_ANALYZE: u64 = 0xB0;

pub fn cmd_analyze(config: &FileConfig, csv_path: &Path) -> AppResult<()> {
    let out_dir = config.out_dir();
    ensure_dir(&out_dir)?;
    let grid = config.parse_grid()?;
    let kernel = config.parse_kernel()?;
    let track = config.parse_track()?;
    let (global_stats, local_stats) = config.parse_statistics()?;
    let ingest = ingest_csv(csv_path, &config.dataset)?;
    let mut manifest = RunManifest::build(config, "analyze", &[csv_path.to_path_buf()])?;

    let stream = StreamKey::root(config.seed).child(DOM_ANALYZE);
    let mut outputs: Vec<StatTestOutput> = Vec::new();
    if !global_stats.is_empty() {
        let opts = config.run_options(true, false)?;
        outputs.extend(
            run_pattern_tests(&ingest.pattern, &global_stats, &grid, &kernel, &opts, stream)
                .map_err(AppError::from)?,
        );
    }
    if !local_stats.is_empty() {
        let opts = config.run_options(false, true)?;
        outputs.extend(
            run_pattern_tests(&ingest.pattern, &local_stats, &grid, &kernel, &opts, stream)
                .map_err(AppError::from)?,
        );
    }

    let (summary, plot_data) = collect_outputs(&manifest.run_id, config, &ingest, &outputs, track);

    let results_path = results_csv_path(&out_dir);
    write_results_csv(&results_path, &manifest.run_id, &outputs, &ingest.ids)?;
    write_summary_json(&summary_json_path(&out_dir), &summary)?;
    write_plot_data(&plot_data_path(&out_dir), &plot_data)?;
    manifest.outputs = vec![
        "results.csv".into(),
        "summary.json".into(),
        "plotdata.json".into(),
    ];
    manifest.write(&out_dir)?;

    println!("analyzed {} points from {}", ingest.pattern.len(), csv_path.display());
    print!("{}", format_summary_table(&ingest.summary));
    for output in &outputs {
        let label = output.stat.label();
        if let Some(global) = &output.global {
            println!(
                "{label} global: p = {:.4}{}{}",
                global.result.p_value,
                if global.result.significant { " (significant)" } else { "" },
                if global.result.underpowered {
                    " [warning: too few permutations to reject]"
                } else {
                    ""
                },
            );
        }
        if let Some(locals) = &output.local {
            let significant = locals
                .iter()
                .filter(|l| l.result.as_ref().is_some_and(|r| r.significant))
                .count();
            let skipped = locals.iter().filter(|l| l.result.is_none()).count();
            println!(
                "{label} local: {significant}/{} points significant ({skipped} skipped)",
                locals.len()
            );
        }
    }
    println!("outputs written to {}", out_dir.display());
    Ok(())
}

fn track_values(curve: &limark::summary::SummaryCurve, track: Track) -> Vec<Option<f64>> {
    match curve.values(track) {
        Some(values) => nan_to_none(values),
        None => vec![None; curve.grid.len()],
    }
}

fn collect_outputs(
    run_id: &str,
    config: &FileConfig,
    ingest: &IngestOutput,
    outputs: &[StatTestOutput],
    track: Track,
) -> (TestSummaryFile, PlotData) {
    let mut entries = Vec::new();
    let mut curves = Vec::new();
    let mut maps = Vec::new();
    let locations = ingest.pattern.locations();
    let grid = outputs
        .iter()
        .find_map(|o| o.global.as_ref().map(|g| g.observed.grid.clone()))
        .or_else(|| {
            outputs.iter().find_map(|o| {
                o.local
                    .as_ref()
                    .and_then(|l| l.first().map(|l| l.observed.grid.clone()))
            })
        });
    let r: Vec<f64> = grid.map(|g| g.distances().to_vec()).unwrap_or_default();

    for output in outputs {
        let stat = &output.stat;
        let label = stat.label();
        if let Some(global) = &output.global {
            let observed = track_values(&global.observed, track);
            let direction = global
                .result
                .dominant_direction(global.observed.values(track).unwrap_or(&[]));
            entries.push(TestSummaryEntry {
                statistic: stat.kind.label().into(),
                transform: stat.transform.to_string(),
                j: stat.j + 1,
                l: stat.l + 1,
                scope: "global".into(),
                point_id: None,
                x: None,
                y: None,
                p_value: Some(global.result.p_value),
                significant: Some(global.result.significant),
                underpowered: Some(global.result.underpowered),
                direction: direction.map(|d| format!("{d:?}").to_lowercase()),
                significant_ranges: global
                    .result
                    .significant_ranges()
                    .iter()
                    .map(|&(a, b)| [a, b])
                    .collect(),
            });
            curves.push(PlotCurve {
                label: format!("{label} global"),
                observed,
                lower: nan_to_none(&global.result.lower),
                upper: nan_to_none(&global.result.upper),
            });
        }
        if let Some(locals) = &output.local {
            let mut points = Vec::with_capacity(locals.len());
            for local in locals {
                let observed = local.observed.values(track).unwrap_or(&[]);
                let (p_value, significant, underpowered, direction, ranges) = match &local.result {
                    Some(result) => (
                        Some(result.p_value),
                        Some(result.significant),
                        Some(result.underpowered),
                        if result.significant {
                            result.dominant_direction(observed)
                        } else {
                            None
                        },
                        result
                            .significant_ranges()
                            .iter()
                            .map(|&(a, b)| [a, b])
                            .collect(),
                    ),
                    None => (None, None, None, None, Vec::new()),
                };
                let class = if significant == Some(true) {
                    association_class(stat.kind, direction)
                } else {
                    "none"
                };
                let location = locations[local.anchor];
                entries.push(TestSummaryEntry {
                    statistic: stat.kind.label().into(),
                    transform: stat.transform.to_string(),
                    j: stat.j + 1,
                    l: stat.l + 1,
                    scope: "local".into(),
                    point_id: Some(ingest.ids[local.anchor].clone()),
                    x: Some(location.x),
                    y: Some(location.y),
                    p_value,
                    significant,
                    underpowered,
                    direction: direction.map(|d| format!("{d:?}").to_lowercase()),
                    significant_ranges: ranges,
                });
                points.push(MapPoint {
                    id: ingest.ids[local.anchor].clone(),
                    x: location.x,
                    y: location.y,
                    class: class.into(),
                    p: p_value,
                });
            }
            maps.push(PlotMap {
                label: format!("{label} local"),
                points,
            });
        }
    }
    let summary = TestSummaryFile {
        run_id: run_id.into(),
        alpha: config.envelope.alpha,
        tests: entries,
    };
    let plot_data = PlotData {
        run_id: run_id.into(),
        window: ingest.summary.window,
        r,
        curves,
        maps,
    };
    (summary, plot_data)
}
