//! Configuration file handling: a single TOML file maps onto the study,
//! analysis, and dataset settings; command-line flags override it field by
//! field, and the effective configuration is what gets hashed into the
//! run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use limark::envelope::{StatisticConfig, TestRunOptions, DEFAULT_PERMUTATIONS};
use limark::pattern::{DiscRegion, Point, ScenarioId, ScenarioSpec, Window};
use limark::summary::{
    Bandwidth, KernelFamily, KernelSpec, RGrid, StatKind, Track, Transform, DEFAULT_GRID_POINTS,
    DEFAULT_R_MAX, STOYAN_DEFAULT_C,
};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: u64,
    /// Worker count; 0 = all cores.
    pub threads: usize,
    pub out_dir: String,
    pub grid: GridSection,
    pub kernel: KernelSection,
    pub envelope: EnvelopeSection,
    pub statistics: Vec<StatisticSection>,
    pub simulate: SimulateSection,
    pub dataset: DatasetSection,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            seed: 42,
            threads: 0,
            out_dir: "out".into(),
            grid: GridSection::default(),
            kernel: KernelSection::default(),
            envelope: EnvelopeSection::default(),
            statistics: vec![StatisticSection::default()],
            simulate: SimulateSection::default(),
            dataset: DatasetSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub r_max: f64,
    pub points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            r_max: DEFAULT_R_MAX,
            points: DEFAULT_GRID_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    /// epanechnikov | box | gaussian
    pub family: String,
    /// Explicit value ("0.01") or Stoyan rule ("stoyan:0.15").
    pub bandwidth: String,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            family: "epanechnikov".into(),
            bandwidth: format!("stoyan:{STOYAN_DEFAULT_C}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeSection {
    pub permutations: usize,
    pub alpha: f64,
    /// Local tests: hold the anchor's own mark fixed under permutation.
    pub hold_focal_mark: bool,
    /// unnormalized | normalized
    pub track: String,
}

impl Default for EnvelopeSection {
    fn default() -> Self {
        EnvelopeSection {
            permutations: DEFAULT_PERMUTATIONS,
            alpha: 0.05,
            hold_focal_mark: false,
            track: "unnormalized".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatisticSection {
    /// t1 | t2 | t3 (aliases: markcorr, variogram, shimatani)
    pub kind: String,
    /// clr | alr:REF (1-based reference part) | ilr
    pub transform: String,
    /// 1-based component index at the anchor point.
    pub j: usize,
    /// 1-based component index at the neighbor.
    pub l: usize,
    /// global | local | both
    pub scope: String,
}

impl Default for StatisticSection {
    fn default() -> Self {
        StatisticSection {
            kind: "t1".into(),
            transform: "clr".into(),
            j: 1,
            l: 1,
            scope: "both".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// I | II | III | custom
    pub scenario: String,
    pub n_patterns: usize,
    pub intensity: f64,
    /// x_min, x_max, y_min, y_max (custom scenarios only).
    pub window: [f64; 4],
    pub background_alpha: Vec<f64>,
    /// Custom scenarios only; the presets carry their own regions.
    pub regions: Vec<RegionSection>,
    /// Write per-pattern records to <out>/checkpoint.jsonl and resume from
    /// them.
    pub checkpoint: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            scenario: "I".into(),
            n_patterns: 100,
            intensity: 200.0,
            window: [0.0, 1.0, 0.0, 1.0],
            background_alpha: vec![5.0, 5.0, 5.0],
            regions: Vec::new(),
            checkpoint: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub center: [f64; 2],
    pub radius: f64,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub x_column: String,
    pub y_column: String,
    pub part_columns: Vec<String>,
    pub id_column: Option<String>,
    /// bbox | explicit
    pub window: String,
    /// Margin added around the bounding box.
    pub margin: f64,
    /// x_min, x_max, y_min, y_max; used when window = "explicit".
    pub ranges: Option<[f64; 4]>,
    /// reject | replace:DELTA
    pub zero_policy: String,
    /// Sum constant compositions are closed to.
    pub kappa: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            x_column: "x".into(),
            y_column: "y".into(),
            part_columns: vec![
                "agriculture".into(),
                "industry".into(),
                "construction".into(),
                "services".into(),
            ],
            id_column: None,
            window: "bbox".into(),
            margin: 0.0,
            ranges: None,
            zero_policy: "reject".into(),
            kappa: 1.0,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub permutations: Option<usize>,
    pub alpha: Option<f64>,
    pub kernel: Option<String>,
    pub bandwidth: Option<String>,
    pub rmax: Option<f64>,
    pub grid: Option<usize>,
    pub transform: Option<String>,
    pub scenario: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> AppResult<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    AppError::config(format!("cannot read {}: {e}", path.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| AppError::config(format!("{}: {e}", path.display())))
            }
        }
    }

    pub fn apply_overrides(&mut self, ov: &Overrides) {
        if let Some(seed) = ov.seed {
            self.seed = seed;
        }
        if let Some(threads) = ov.threads {
            self.threads = threads;
        }
        if let Some(out) = &ov.out {
            self.out_dir = out.display().to_string();
        }
        if let Some(s) = ov.permutations {
            self.envelope.permutations = s;
        }
        if let Some(alpha) = ov.alpha {
            self.envelope.alpha = alpha;
        }
        if let Some(kernel) = &ov.kernel {
            self.kernel.family = kernel.clone();
        }
        if let Some(bw) = &ov.bandwidth {
            self.kernel.bandwidth = bw.clone();
        }
        if let Some(rmax) = ov.rmax {
            self.grid.r_max = rmax;
        }
        if let Some(points) = ov.grid {
            self.grid.points = points;
        }
        if let Some(transform) = &ov.transform {
            for stat in self.statistics.iter_mut() {
                stat.transform = transform.clone();
            }
        }
        if let Some(scenario) = &ov.scenario {
            self.simulate.scenario = scenario.clone();
        }
    }

    /// Canonical serialization of the effective configuration.
    pub fn canonical_toml(&self) -> AppResult<String> {
        toml::to_string_pretty(self)
            .map_err(|e| AppError::config(format!("cannot serialize config: {e}")))
    }

    /// Canonical serialization of the fields that determine the numbers.
    /// Output placement, worker count, and checkpointing do not change what
    /// a run computes, so they are redacted before hashing.
    pub fn result_identity_toml(&self) -> AppResult<String> {
        let mut redacted = self.clone();
        redacted.out_dir = String::new();
        redacted.threads = 0;
        redacted.simulate.checkpoint = false;
        redacted.canonical_toml()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }

    pub fn parse_grid(&self) -> AppResult<RGrid> {
        RGrid::uniform(self.grid.r_max, self.grid.points)
            .map_err(|e| AppError::config(format!("grid: {e}")))
    }

    pub fn parse_kernel(&self) -> AppResult<KernelSpec> {
        let family = match self.kernel.family.to_lowercase().as_str() {
            "epanechnikov" | "epan" => KernelFamily::Epanechnikov,
            "box" | "uniform" => KernelFamily::Box,
            "gaussian" | "normal" => KernelFamily::Gaussian,
            other => {
                return Err(AppError::config(format!(
                    "unknown kernel family '{other}' (epanechnikov | box | gaussian)"
                )))
            }
        };
        let bandwidth = parse_bandwidth(&self.kernel.bandwidth)?;
        Ok(KernelSpec { family, bandwidth })
    }

    pub fn parse_track(&self) -> AppResult<Track> {
        match self.envelope.track.to_lowercase().as_str() {
            "unnormalized" => Ok(Track::Unnormalized),
            "normalized" => Ok(Track::Normalized),
            other => Err(AppError::config(format!(
                "unknown track '{other}' (unnormalized | normalized)"
            ))),
        }
    }

    /// Statistics partitioned into the ones that run globally and locally.
    pub fn parse_statistics(&self) -> AppResult<(Vec<StatisticConfig>, Vec<StatisticConfig>)> {
        if self.statistics.is_empty() {
            return Err(AppError::config("no statistics configured"));
        }
        let mut global = Vec::new();
        let mut local = Vec::new();
        for (i, section) in self.statistics.iter().enumerate() {
            let stat = parse_statistic(section)
                .map_err(|e| AppError::config(format!("statistics[{i}]: {e}")))?;
            match section.scope.to_lowercase().as_str() {
                "global" => global.push(stat),
                "local" => local.push(stat),
                "both" => {
                    global.push(stat);
                    local.push(stat);
                }
                other => {
                    return Err(AppError::config(format!(
                        "statistics[{i}]: unknown scope '{other}' (global | local | both)"
                    )))
                }
            }
        }
        Ok((global, local))
    }

    pub fn run_options(&self, run_global: bool, run_local: bool) -> AppResult<TestRunOptions> {
        Ok(TestRunOptions {
            permutations: self.envelope.permutations,
            alpha: self.envelope.alpha,
            run_global,
            run_local,
            hold_focal_mark: self.envelope.hold_focal_mark,
            track: self.parse_track()?,
        })
    }

    pub fn parse_scenario(&self) -> AppResult<ScenarioSpec> {
        let sim = &self.simulate;
        match sim.scenario.trim() {
            "I" | "i" | "1" => Ok(ScenarioSpec::scenario_i(sim.intensity)),
            "II" | "ii" | "2" => Ok(ScenarioSpec::scenario_ii(sim.intensity)),
            "III" | "iii" | "3" => Ok(ScenarioSpec::scenario_iii(sim.intensity)),
            "custom" => {
                let [x_min, x_max, y_min, y_max] = sim.window;
                let window = Window::new(x_min, x_max, y_min, y_max)
                    .map_err(|e| AppError::config(format!("simulate.window: {e}")))?;
                let regions = sim
                    .regions
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        DiscRegion::new(
                            Point::new(r.center[0], r.center[1]),
                            r.radius,
                            r.alpha.clone(),
                        )
                        .map_err(|e| AppError::config(format!("simulate.regions[{i}]: {e}")))
                    })
                    .collect::<AppResult<Vec<_>>>()?;
                let spec = ScenarioSpec {
                    intensity: sim.intensity,
                    window,
                    background_alpha: sim.background_alpha.clone(),
                    regions,
                    scenario_id: ScenarioId::Custom,
                };
                spec.validate()
                    .map_err(|e| AppError::config(format!("simulate: {e}")))?;
                Ok(spec)
            }
            other => Err(AppError::config(format!(
                "unknown scenario '{other}' (I | II | III | custom)"
            ))),
        }
    }
}

pub fn parse_bandwidth(text: &str) -> AppResult<Bandwidth> {
    let text = text.trim();
    if let Some(c) = text.strip_prefix("stoyan:") {
        let c: f64 = c
            .parse()
            .map_err(|_| AppError::config(format!("bad Stoyan coefficient '{c}'")))?;
        if !(c.is_finite() && c > 0.0) {
            return Err(AppError::config(format!(
                "Stoyan coefficient must be positive, got {c}"
            )));
        }
        Ok(Bandwidth::Stoyan { c })
    } else {
        let h: f64 = text
            .parse()
            .map_err(|_| AppError::config(format!("bad bandwidth '{text}'")))?;
        if !(h.is_finite() && h > 0.0) {
            return Err(AppError::config(format!(
                "bandwidth must be positive, got {h}"
            )));
        }
        Ok(Bandwidth::Fixed(h))
    }
}

pub fn parse_transform(text: &str) -> AppResult<Transform> {
    let text = text.trim();
    match text.to_lowercase().as_str() {
        "clr" => Ok(Transform::Clr),
        "ilr" => Ok(Transform::Ilr),
        other => {
            if let Some(reference) = other.strip_prefix("alr:") {
                let one_based: usize = reference
                    .parse()
                    .map_err(|_| AppError::config(format!("bad alr reference '{reference}'")))?;
                if one_based == 0 {
                    return Err(AppError::config(
                        "alr reference part is 1-based; got 0".to_string(),
                    ));
                }
                Ok(Transform::Alr {
                    ref_index: one_based - 1,
                })
            } else {
                Err(AppError::config(format!(
                    "unknown transform '{text}' (clr | alr:REF | ilr)"
                )))
            }
        }
    }
}

fn parse_statistic(section: &StatisticSection) -> AppResult<StatisticConfig> {
    let kind = match section.kind.to_lowercase().as_str() {
        "t1" | "t1_markcorr" | "markcorr" => StatKind::MarkCorrelation,
        "t2" | "t2_variogram" | "variogram" => StatKind::Variogram,
        "t3" | "t3_shimatani" | "shimatani" => StatKind::ShimataniI,
        other => {
            return Err(AppError::config(format!(
                "unknown statistic kind '{other}' (t1 | t2 | t3)"
            )))
        }
    };
    if section.j == 0 || section.l == 0 {
        return Err(AppError::config(
            "component indices j and l are 1-based; got 0".to_string(),
        ));
    }
    Ok(StatisticConfig {
        kind,
        transform: parse_transform(&section.transform)?,
        j: section.j - 1,
        l: section.l - 1,
    })
}

pub fn parse_zero_policy(text: &str) -> AppResult<limark::coda::ZeroPolicy> {
    let text = text.trim();
    if text.eq_ignore_ascii_case("reject") {
        return Ok(limark::coda::ZeroPolicy::Reject);
    }
    if let Some(delta) = text.strip_prefix("replace:") {
        let delta: f64 = delta
            .parse()
            .map_err(|_| AppError::config(format!("bad replacement delta '{delta}'")))?;
        return Ok(limark::coda::ZeroPolicy::Replace { delta });
    }
    Err(AppError::config(format!(
        "unknown zero policy '{text}' (reject | replace:DELTA)"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = FileConfig::default().canonical_toml().unwrap();
        let parsed: FileConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed, FileConfig::default());
    }

    #[test]
    fn transform_parsing() {
        assert_eq!(parse_transform("clr").unwrap(), Transform::Clr);
        assert_eq!(parse_transform("ilr").unwrap(), Transform::Ilr);
        assert_eq!(
            parse_transform("alr:3").unwrap(),
            Transform::Alr { ref_index: 2 }
        );
        assert!(parse_transform("alr:0").is_err());
        assert!(parse_transform("pca").is_err());
    }

    #[test]
    fn bandwidth_parsing() {
        assert_eq!(parse_bandwidth("0.02").unwrap(), Bandwidth::Fixed(0.02));
        assert_eq!(
            parse_bandwidth("stoyan:0.15").unwrap(),
            Bandwidth::Stoyan { c: 0.15 }
        );
        assert!(parse_bandwidth("-1").is_err());
        assert!(parse_bandwidth("stoyan:nope").is_err());
    }

    #[test]
    fn statistic_scopes_partition() {
        let mut config = FileConfig::default();
        config.statistics = vec![
            StatisticSection {
                scope: "global".into(),
                ..StatisticSection::default()
            },
            StatisticSection {
                kind: "t2".into(),
                scope: "both".into(),
                ..StatisticSection::default()
            },
            StatisticSection {
                kind: "t3".into(),
                scope: "local".into(),
                ..StatisticSection::default()
            },
        ];
        let (global, local) = config.parse_statistics().unwrap();
        assert_eq!(global.len(), 2);
        assert_eq!(local.len(), 2);
        assert_eq!(global[0].kind, StatKind::MarkCorrelation);
        assert_eq!(local[1].kind, StatKind::ShimataniI);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = toml::from_str::<FileConfig>("sead = 42").unwrap_err();
        assert!(err.to_string().contains("sead"));
    }

    #[test]
    fn scenario_presets() {
        let mut config = FileConfig::default();
        config.simulate.scenario = "II".into();
        config.simulate.intensity = 500.0;
        let spec = config.parse_scenario().unwrap();
        assert_eq!(spec.regions.len(), 2);
        assert_eq!(spec.regions[0].alpha, vec![20.0, 5.0, 5.0]);
        config.simulate.scenario = "nope".into();
        assert!(config.parse_scenario().is_err());
    }
}
