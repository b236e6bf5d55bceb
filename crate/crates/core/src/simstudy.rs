//! Parallel scenario runner: batches of simulated patterns, global and
//! per-point local envelope tests, and detection-rate aggregation.
//!
//! Work is decomposed per pattern; each pattern task derives its RNG
//! streams from (seed, pattern index), so a report is a pure function of
//! the configuration and seed at any worker count. Completed patterns are
//! appended to a checkpoint file and are not recomputed on resume.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envelope::{run_pattern_tests, StatisticConfig, TestRunOptions};
use crate::error::{Error, Result};
use crate::pattern::{build_scenario, sample_poisson, ScenarioRealization, ScenarioSpec};
use crate::rng::StreamKey;
use crate::summary::{KernelSpec, RGrid, Track};

// stream-tree domains per pattern index
const DOM_LOCATIONS: u64 = 0xA0;
const DOM_MARKS: u64 = 0xA1;
const DOM_PERMUTATIONS: u64 = 0xA2;

/// Full description of a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: ScenarioSpec,
    pub n_patterns: usize,
    /// Permutations per envelope test.
    pub permutations: usize,
    pub alpha: f64,
    pub statistics: Vec<StatisticConfig>,
    pub grid: RGrid,
    pub kernel: KernelSpec,
    pub seed: u64,
    /// Worker count hint; 0 uses all cores. Does not affect results.
    pub threads: usize,
    pub run_global: bool,
    pub run_local: bool,
    pub hold_focal_mark: bool,
    /// Append-only per-pattern records; completed patterns are skipped on
    /// resume when their config hash matches.
    pub checkpoint: Option<PathBuf>,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.n_patterns < 1 {
            return Err(Error::InvalidParameter("n_patterns must be >= 1".into()));
        }
        if self.permutations < 1 {
            return Err(Error::InvalidParameter("permutations must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.statistics.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one statistic is required".into(),
            ));
        }
        if !self.run_global && !self.run_local {
            return Err(Error::InvalidParameter(
                "nothing to do: global and local scopes both disabled".into(),
            ));
        }
        let d = self.scenario.background_alpha.len();
        for stat in &self.statistics {
            let dim = stat.transform.coord_dim(d);
            stat.spec(crate::summary::Scope::Global).validate(dim)?;
        }
        Ok(())
    }

    /// Hash of everything that determines the numbers: scenario, counts,
    /// statistics, grid, kernel, seed, and scope flags. Worker count and
    /// checkpoint location are excluded on purpose.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct HashView<'a> {
            scenario: &'a ScenarioSpec,
            n_patterns: usize,
            permutations: usize,
            alpha: f64,
            statistics: &'a [StatisticConfig],
            grid: &'a RGrid,
            kernel: &'a KernelSpec,
            seed: u64,
            run_global: bool,
            run_local: bool,
            hold_focal_mark: bool,
        }
        let view = HashView {
            scenario: &self.scenario,
            n_patterns: self.n_patterns,
            permutations: self.permutations,
            alpha: self.alpha,
            statistics: &self.statistics,
            grid: &self.grid,
            kernel: &self.kernel,
            seed: self.seed,
            run_global: self.run_global,
            run_local: self.run_local,
            hold_focal_mark: self.hold_focal_mark,
        };
        let bytes = serde_json::to_vec(&view).expect("plain data serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn run_options(&self) -> TestRunOptions {
        TestRunOptions {
            permutations: self.permutations,
            alpha: self.alpha,
            run_global: self.run_global,
            run_local: self.run_local,
            hold_focal_mark: self.hold_focal_mark,
            track: Track::Unnormalized,
        }
    }
}

/// Per-statistic outcome of one pattern, as persisted to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternStatRecord {
    pub label: String,
    pub global_p: Option<f64>,
    /// One entry per point; None marks a skipped (all-masked) local test.
    pub local_p: Option<Vec<Option<f64>>>,
}

/// Everything the aggregation needs about one completed pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRecord {
    pub config_hash: String,
    pub pattern_index: usize,
    pub n_points: usize,
    /// Ground truth: region index per point, None = background.
    pub region_index: Vec<Option<usize>>,
    pub stats: Vec<PatternStatRecord>,
}

/// Detection rates with their exact counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRates {
    pub n_true: usize,
    pub n_true_detected: usize,
    pub n_false: usize,
    pub n_false_detected: usize,
    /// Tests skipped because every grid point was masked.
    pub n_skipped: usize,
    pub true_positive_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub overall_rate: Option<f64>,
}

/// Split p-values into detection rates by ground truth at level `alpha`.
pub fn detection_metrics(
    p_values: &[Option<f64>],
    truth: &[bool],
    alpha: f64,
) -> Result<DetectionRates> {
    if p_values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if p_values.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: p_values.len(),
            got: truth.len(),
        });
    }
    let mut rates = DetectionRates {
        n_true: 0,
        n_true_detected: 0,
        n_false: 0,
        n_false_detected: 0,
        n_skipped: 0,
        true_positive_rate: None,
        false_positive_rate: None,
        overall_rate: None,
    };
    for (p, &is_true) in p_values.iter().zip(truth) {
        match p {
            None => rates.n_skipped += 1,
            Some(p) => {
                let detected = *p <= alpha;
                if is_true {
                    rates.n_true += 1;
                    rates.n_true_detected += detected as usize;
                } else {
                    rates.n_false += 1;
                    rates.n_false_detected += detected as usize;
                }
            }
        }
    }
    if rates.n_true > 0 {
        rates.true_positive_rate = Some(rates.n_true_detected as f64 / rates.n_true as f64);
    }
    if rates.n_false > 0 {
        rates.false_positive_rate = Some(rates.n_false_detected as f64 / rates.n_false as f64);
    }
    let tested = rates.n_true + rates.n_false;
    if tested > 0 {
        rates.overall_rate =
            Some((rates.n_true_detected + rates.n_false_detected) as f64 / tested as f64);
    }
    Ok(rates)
}

/// Global-test aggregate for one statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalReport {
    /// One entry per pattern, in pattern order.
    pub p_values: Vec<Option<f64>>,
    pub n_tests: usize,
    pub n_rejected: usize,
    pub rejection_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticReport {
    pub label: String,
    pub global: Option<GlobalReport>,
    pub local: Option<DetectionRates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub seed: u64,
    pub scenario: String,
    pub n_patterns: usize,
    pub permutations: usize,
    pub alpha: f64,
    pub total_points: usize,
}

/// Wall-clock and core-time accounting; excluded from the deterministic
/// serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub wall_seconds: f64,
    pub core_seconds: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub meta: ReportMeta,
    pub statistics: Vec<StatisticReport>,
    pub telemetry: Telemetry,
}

impl StudyReport {
    /// Canonical bytes of the results (meta + statistics); telemetry varies
    /// between runs and is left out. Equal for equal (config, seed) at any
    /// worker count.
    pub fn deterministic_bytes(&self) -> Result<Vec<u8>> {
        #[derive(Serialize)]
        struct View<'a> {
            meta: &'a ReportMeta,
            statistics: &'a [StatisticReport],
        }
        Ok(serde_json::to_vec_pretty(&View {
            meta: &self.meta,
            statistics: &self.statistics,
        })?)
    }
}

/// Draw the ground process and scenario marks for pattern `index` of a
/// study. Locations depend only on (seed, intensity, window, index), so
/// scenarios sharing those reuse identical point configurations.
pub fn scenario_pattern(config: &StudyConfig, index: usize) -> Result<ScenarioRealization> {
    let key = StreamKey::root(config.seed);
    let locations = sample_poisson(
        config.scenario.intensity,
        &config.scenario.window,
        &mut key.child(DOM_LOCATIONS).child(index as u64).rng(),
    )?;
    build_scenario(
        &config.scenario,
        locations,
        key.child(DOM_MARKS).child(index as u64),
    )
}

fn compute_pattern(config: &StudyConfig, config_hash: &str, index: usize) -> Result<PatternRecord> {
    let realization = scenario_pattern(config, index)?;
    let stream = StreamKey::root(config.seed)
        .child(DOM_PERMUTATIONS)
        .child(index as u64);
    let outputs = run_pattern_tests(
        &realization.pattern,
        &config.statistics,
        &config.grid,
        &config.kernel,
        &config.run_options(),
        stream,
    )?;
    let stats = outputs
        .iter()
        .map(|out| PatternStatRecord {
            label: out.stat.label(),
            global_p: out.global.as_ref().map(|g| g.result.p_value),
            local_p: out.local.as_ref().map(|locals| {
                locals
                    .iter()
                    .map(|l| l.result.as_ref().map(|r| r.p_value))
                    .collect()
            }),
        })
        .collect();
    Ok(PatternRecord {
        config_hash: config_hash.to_string(),
        pattern_index: index,
        n_points: realization.pattern.len(),
        region_index: realization.region_index,
        stats,
    })
}

/// Load checkpoint records whose config hash matches. Lines that fail to
/// parse (for example a torn final line after an interruption) are skipped.
pub fn load_checkpoint(path: &Path, config_hash: &str) -> Result<BTreeMap<usize, PatternRecord>> {
    let mut records = BTreeMap::new();
    if !path.exists() {
        return Ok(records);
    }
    let reader = BufReader::new(File::open(path)?);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(record) = serde_json::from_str::<PatternRecord>(&line) {
            if record.config_hash == config_hash {
                records.insert(record.pattern_index, record);
            }
        }
    }
    Ok(records)
}

/// Aggregate per-pattern records into per-statistic reports. Records must
/// cover patterns 0..n_patterns of the given config.
pub fn aggregate_records(
    config: &StudyConfig,
    records: &BTreeMap<usize, PatternRecord>,
) -> Result<(ReportMeta, Vec<StatisticReport>)> {
    for index in 0..config.n_patterns {
        if !records.contains_key(&index) {
            return Err(Error::InvalidParameter(format!(
                "pattern {index} missing from the record set"
            )));
        }
    }
    let total_points: usize = records.values().map(|r| r.n_points).sum();
    let mut statistics = Vec::with_capacity(config.statistics.len());
    for (si, stat) in config.statistics.iter().enumerate() {
        let label = stat.label();
        for record in records.values() {
            if record.stats.get(si).map(|s| s.label.as_str()) != Some(label.as_str()) {
                return Err(Error::InvalidParameter(format!(
                    "record for pattern {} does not carry statistic {label}",
                    record.pattern_index
                )));
            }
        }
        let global = if config.run_global {
            let p_values: Vec<Option<f64>> =
                records.values().map(|r| r.stats[si].global_p).collect();
            let n_tests = p_values.iter().filter(|p| p.is_some()).count();
            let n_rejected = p_values
                .iter()
                .filter(|p| matches!(p, Some(p) if *p <= config.alpha))
                .count();
            Some(GlobalReport {
                rejection_rate: (n_tests > 0).then(|| n_rejected as f64 / n_tests as f64),
                p_values,
                n_tests,
                n_rejected,
            })
        } else {
            None
        };
        let local = if config.run_local {
            let mut p_values = Vec::with_capacity(total_points);
            let mut truth = Vec::with_capacity(total_points);
            for record in records.values() {
                let local_p = record.stats[si].local_p.as_ref().ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "record for pattern {} lacks local p-values",
                        record.pattern_index
                    ))
                })?;
                p_values.extend_from_slice(local_p);
                truth.extend(record.region_index.iter().map(|r| r.is_some()));
            }
            Some(detection_metrics(&p_values, &truth, config.alpha)?)
        } else {
            None
        };
        statistics.push(StatisticReport {
            label,
            global,
            local,
        });
    }
    let meta = ReportMeta {
        config_hash: config.config_hash(),
        seed: config.seed,
        scenario: config.scenario.scenario_id.to_string(),
        n_patterns: config.n_patterns,
        permutations: config.permutations,
        alpha: config.alpha,
        total_points,
    };
    Ok((meta, statistics))
}

/// Run the study: simulate patterns, test them, aggregate. Deterministic in
/// (config, seed) for any `threads` value; resumes from the checkpoint when
/// one is configured.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let started = Instant::now();
    let config_hash = config.config_hash();

    let mut records = match &config.checkpoint {
        Some(path) => load_checkpoint(path, &config_hash)?,
        None => BTreeMap::new(),
    };
    records.retain(|&index, _| index < config.n_patterns);
    let missing: Vec<usize> = (0..config.n_patterns)
        .filter(|index| !records.contains_key(index))
        .collect();

    let writer = match &config.checkpoint {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let file = OpenOptions::new().create(true).append(true).open(path)?;
            Some(Mutex::new(BufWriter::new(file)))
        }
        None => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let workers = pool.current_num_threads();

    let computed: Vec<(PatternRecord, f64)> = pool.install(|| {
        missing
            .par_iter()
            .map(|&index| -> Result<(PatternRecord, f64)> {
                let task_start = Instant::now();
                let record = compute_pattern(config, &config_hash, index)?;
                if let Some(writer) = &writer {
                    let line = serde_json::to_string(&record)?;
                    let mut guard = writer
                        .lock()
                        .map_err(|_| Error::Io("checkpoint writer poisoned".into()))?;
                    writeln!(guard, "{line}")?;
                    guard.flush()?;
                }
                Ok((record, task_start.elapsed().as_secs_f64()))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut core_seconds = 0.0;
    for (record, secs) in computed {
        core_seconds += secs;
        records.insert(record.pattern_index, record);
    }

    let (meta, statistics) = aggregate_records(config, &records)?;
    Ok(StudyReport {
        meta,
        statistics,
        telemetry: Telemetry {
            wall_seconds: started.elapsed().as_secs_f64(),
            core_seconds,
            workers,
        },
    })
}
