//! The simulate workflow: build the study configuration, delegate to the
//! scenario runner, and serialize the report and manifest.

use serde::Serialize;

use limark::envelope::StatisticConfig;
use limark::simstudy::{run_study, StudyConfig, StudyReport};

use crate::config::FileConfig;
use crate::error::{AppError, AppResult};
use crate::manifest::RunManifest;
use crate::output::ensure_dir;

/// Map the file configuration onto a study. Every configured statistic runs
/// in the union of the configured scopes.
pub fn build_study(config: &FileConfig) -> AppResult<StudyConfig> {
    let scenario = config.parse_scenario()?;
    let (global_stats, local_stats) = config.parse_statistics()?;
    let mut statistics: Vec<StatisticConfig> = Vec::new();
    for stat in global_stats.iter().chain(&local_stats) {
        if !statistics.contains(stat) {
            statistics.push(*stat);
        }
    }
    let checkpoint = config
        .simulate
        .checkpoint
        .then(|| config.out_dir().join("checkpoint.jsonl"));
    let study = StudyConfig {
        scenario,
        n_patterns: config.simulate.n_patterns,
        permutations: config.envelope.permutations,
        alpha: config.envelope.alpha,
        statistics,
        grid: config.parse_grid()?,
        kernel: config.parse_kernel()?,
        seed: config.seed,
        threads: config.threads,
        run_global: !global_stats.is_empty(),
        run_local: !local_stats.is_empty(),
        hold_focal_mark: config.envelope.hold_focal_mark,
        checkpoint,
    };
    study
        .validate()
        .map_err(|e| AppError::config(e.to_string()))?;
    Ok(study)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    run_id: &'a str,
    #[serde(flatten)]
    report: &'a StudyReport,
}

pub fn cmd_simulate(config: &FileConfig) -> AppResult<StudyReport> {
    let out_dir = config.out_dir();
    ensure_dir(&out_dir)?;
    let study = build_study(config)?;
    let mut manifest = RunManifest::build(config, "simulate", &[])?;

    let report = run_study(&study).map_err(AppError::from)?;

    let path = out_dir.join("report.json");
    let text = serde_json::to_string_pretty(&ReportFile {
        run_id: &manifest.run_id,
        report: &report,
    })
    .map_err(|e| AppError::Numeric(format!("report serialization: {e}")))?;
    std::fs::write(&path, text)
        .map_err(|e| AppError::Numeric(format!("cannot write {}: {e}", path.display())))?;

    manifest.outputs = vec!["report.json".into()];
    if study.checkpoint.is_some() {
        manifest.outputs.push("checkpoint.jsonl".into());
    }
    manifest.write(&out_dir)?;

    println!(
        "scenario {} with {} patterns, s = {}, alpha = {}",
        report.meta.scenario, report.meta.n_patterns, report.meta.permutations, report.meta.alpha
    );
    for stat in &report.statistics {
        if let Some(global) = &stat.global {
            println!(
                "{}: global rejection rate {} ({}/{} patterns)",
                stat.label,
                global
                    .rejection_rate
                    .map(|r| format!("{r:.3}"))
                    .unwrap_or_else(|| "n/a".into()),
                global.n_rejected,
                global.n_tests
            );
        }
        if let Some(local) = &stat.local {
            println!(
                "{}: local detection {} on {} in-region points, false-positive {} on {} \
                 background points",
                stat.label,
                local
                    .true_positive_rate
                    .map(|r| format!("{r:.3}"))
                    .unwrap_or_else(|| "n/a".into()),
                local.n_true,
                local
                    .false_positive_rate
                    .map(|r| format!("{r:.3}"))
                    .unwrap_or_else(|| "n/a".into()),
                local.n_false
            );
        }
    }
    println!(
        "wall {:.1}s, core {:.1}s on {} workers; report at {}",
        report.telemetry.wall_seconds,
        report.telemetry.core_seconds,
        report.telemetry.workers,
        path.display()
    );
    Ok(report)
}
