//! Random-labeling permutation ensembles and global envelope tests using
//! the extreme rank length (ERL) ordering, for both global and local
//! (per-point) summary curves.
//!
//! The null model is random labeling: marks are permuted over fixed
//! locations. Because the locations do not move, the kernel-mass
//! denominators and the pair geometry are shared across the whole ensemble,
//! and one [`run_pattern_tests`] call evaluates the global test and every
//! per-point local test of a pattern from a single set of permutations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::{permutation_indices, MarkedPattern};
use crate::rng::StreamKey;
use crate::summary::{
    compute_moments, independence_factor, ratio_track, transform_marks, EstimatorOptions,
    KernelSpec, MarkMoments, PairGeometry, RGrid, Scope, StatKind, StatisticSpec, SummaryCurve,
    Track, Transform, TransformedMarks, ZERO_NORMALIZER_TOL,
};

/// Default permutation count for analyses.
pub const DEFAULT_PERMUTATIONS: usize = 499;

/// Desk-scale permutation count for simulation runs and CI.
pub const DESK_PERMUTATIONS: usize = 99;

/// A statistic to evaluate: kind, transform, and component pair. Scope comes
/// from the run options (global, local, or both).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticConfig {
    pub kind: StatKind,
    pub transform: Transform,
    pub j: usize,
    pub l: usize,
}

impl StatisticConfig {
    pub fn spec(&self, scope: Scope) -> StatisticSpec {
        StatisticSpec {
            kind: self.kind,
            transform: self.transform,
            j: self.j,
            l: self.l,
            scope,
        }
    }

    /// Stable identifier, with 1-based component indices.
    pub fn label(&self) -> String {
        format!(
            "{}:{}:{}-{}",
            self.kind.label(),
            self.transform,
            self.j + 1,
            self.l + 1
        )
    }
}

/// An observed curve together with its permutation null curves.
#[derive(Debug, Clone)]
pub struct CurveEnsemble {
    pub spec: StatisticSpec,
    pub grid: RGrid,
    pub observed: SummaryCurve,
    pub nulls: Vec<SummaryCurve>,
    /// Shared mask: true = excluded from ranking (missing in any curve).
    pub mask: Vec<bool>,
    /// Which track of the curves the ensemble ranks.
    pub track: Track,
}

impl CurveEnsemble {
    fn track_values(&self) -> Result<Vec<&[f64]>> {
        let mut out = Vec::with_capacity(self.nulls.len() + 1);
        for curve in std::iter::once(&self.observed).chain(&self.nulls) {
            out.push(curve.values(self.track).ok_or_else(|| {
                Error::InvalidParameter("requested track absent from ensemble curve".into())
            })?);
        }
        Ok(out)
    }
}

/// How ensembles are built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeOptions {
    /// Local tests only: keep the anchor's own mark fixed and permute the
    /// others. The default permutes all marks including the anchor's.
    pub hold_focal_mark: bool,
    /// Which curve track the test ranks.
    pub track: Track,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        EnvelopeOptions {
            hold_focal_mark: false,
            track: Track::Unnormalized,
        }
    }
}

/// Side of the envelope the observed curve exits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    High,
    Low,
}

/// Outcome of a global envelope test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeTestResult {
    pub p_value: f64,
    pub alpha: f64,
    pub grid: RGrid,
    /// Pointwise bounds of the curves below the critical ERL rank; NaN at
    /// masked grid points.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// True where the observed curve lies strictly outside the envelope.
    pub pointwise_significant: Vec<bool>,
    /// ERL mid-rank of the observed curve (1 = most extreme).
    pub observed_rank: f64,
    /// Global decision: p_value <= alpha.
    pub significant: bool,
    /// Set when (s+1) * alpha < 1, i.e. the test cannot reject at all.
    pub underpowered: bool,
}

impl EnvelopeTestResult {
    /// Grid intervals [r_start, r_end] of consecutive significant points.
    pub fn significant_ranges(&self) -> Vec<(f64, f64)> {
        let r = self.grid.distances();
        let mut ranges = Vec::new();
        let mut start: Option<usize> = None;
        for t in 0..r.len() {
            match (self.pointwise_significant[t], start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    ranges.push((r[s], r[t - 1]));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            ranges.push((r[s], r[r.len() - 1]));
        }
        ranges
    }

    /// The side with the largest envelope exceedance of `observed`, if the
    /// curve exits the envelope anywhere.
    pub fn dominant_direction(&self, observed: &[f64]) -> Option<Direction> {
        let mut high: f64 = 0.0;
        let mut low: f64 = 0.0;
        for t in 0..observed.len() {
            if !self.pointwise_significant[t] {
                continue;
            }
            let v = observed[t];
            if v > self.upper[t] {
                high = high.max(v - self.upper[t]);
            }
            if v < self.lower[t] {
                low = low.max(self.lower[t] - v);
            }
        }
        if high == 0.0 && low == 0.0 {
            None
        } else if high >= low {
            Some(Direction::High)
        } else {
            Some(Direction::Low)
        }
    }
}

/// ERL ordering of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ErlRanking {
    /// Mid-rank per curve (observed first); 1 = most extreme.
    pub ranks: Vec<f64>,
    /// Curve indices sorted most extreme first; exact rank-vector ties are
    /// broken by curve index.
    pub order: Vec<usize>,
    /// Grid indices that entered the ranking.
    pub retained: Vec<usize>,
    /// Ascending-sorted pointwise rank vector per curve (the ERL measure).
    pub vectors: Vec<Vec<f64>>,
}

/// Monotone integer key: orders like total_cmp with -0 folded onto +0, so
/// key equality coincides with f64 equality for non-NaN values.
#[inline]
fn sort_key(x: f64) -> u64 {
    let x = if x == 0.0 { 0.0 } else { x };
    let bits = x.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | 0x8000_0000_0000_0000
    }
}

/// Pointwise two-sided mid-ranks over the retained grid points, sorted
/// ascending per curve.
///
/// Mid-ranks live on the half-integer lattice 1, 1.5, ..., (m+1)/2, so the
/// work happens on doubled integer ranks: one (key, curve) sort per grid
/// point, one u32 sort per curve.
fn sorted_rank_vectors(values: &[&[f64]], retained: &[usize]) -> Vec<Vec<f64>> {
    let m = values.len();
    let t_len = retained.len();
    let mut doubled: Vec<u32> = vec![0; m * t_len];
    let mut fill: Vec<usize> = (0..m).map(|c| c * t_len).collect();
    let mut keyed: Vec<(u64, u32)> = Vec::with_capacity(m);
    for &t in retained {
        keyed.clear();
        keyed.extend(values.iter().enumerate().map(|(c, v)| (sort_key(v[t]), c as u32)));
        keyed.sort_unstable();
        let mut pos = 0;
        while pos < m {
            let mut end = pos + 1;
            while end < m && keyed[end].0 == keyed[pos].0 {
                end += 1;
            }
            // doubled mid-rank of the tie group, from below and from above
            let up = pos + 1 + end;
            let down = 2 * (m + 1) - up;
            let two_sided = up.min(down) as u32;
            for &(_, c) in &keyed[pos..end] {
                let slot = &mut fill[c as usize];
                doubled[*slot] = two_sided;
                *slot += 1;
            }
            pos = end;
        }
    }
    let mut vectors = Vec::with_capacity(m);
    for c in 0..m {
        let row = &mut doubled[c * t_len..(c + 1) * t_len];
        row.sort_unstable();
        vectors.push(row.iter().map(|&x| x as f64 / 2.0).collect());
    }
    vectors
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

/// Rank curves by the ERL ordering: pointwise two-sided mid-ranks, sorted
/// ascending per curve, compared lexicographically. A lexicographically
/// smaller vector is more extreme; exactly tied vectors share a mid-rank.
pub fn erl_rank_values(values: &[&[f64]], mask: &[bool]) -> Result<ErlRanking> {
    let m = values.len();
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 curves to rank, got {m}"
        )));
    }
    let t_len = values[0].len();
    for v in values {
        if v.len() != t_len {
            return Err(Error::DimensionMismatch {
                expected: t_len,
                got: v.len(),
            });
        }
    }
    let retained: Vec<usize> = (0..t_len).filter(|&t| !mask[t]).collect();
    if retained.is_empty() {
        return Err(Error::AllMasked);
    }
    let vectors = sorted_rank_vectors(values, &retained);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| lex_cmp(&vectors[a], &vectors[b]).then(a.cmp(&b)));

    let mut ranks = vec![0.0; m];
    let mut pos = 0;
    while pos < m {
        let mut end = pos + 1;
        while end < m && lex_cmp(&vectors[order[end]], &vectors[order[pos]]).is_eq() {
            end += 1;
        }
        let mid = (pos + 1 + end) as f64 / 2.0;
        for &c in &order[pos..end] {
            ranks[c] = mid;
        }
        pos = end;
    }
    Ok(ErlRanking {
        ranks,
        order,
        retained,
        vectors,
    })
}

/// ERL ranks for all curves of an ensemble (observed first).
pub fn erl_rank(ensemble: &CurveEnsemble) -> Result<ErlRanking> {
    let values = ensemble.track_values()?;
    erl_rank_values(&values, &ensemble.mask)
}

/// Run the envelope test on explicit curve values (observed first).
///
/// p is the fraction of curves whose ERL measure is at least as extreme as
/// the observed one. The envelope is the pointwise range of the curves that
/// survive the critical rank floor(alpha (s+1)); the strict order used for
/// dropping breaks exact ties by curve index.
pub fn envelope_test_values(
    values: &[&[f64]],
    mask: &[bool],
    grid: &RGrid,
    alpha: f64,
) -> Result<EnvelopeTestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let ranking = erl_rank_values(values, mask)?;
    let m = values.len();

    let observed_vec = &ranking.vectors[0];
    let at_least = (0..m)
        .filter(|&c| lex_cmp(&ranking.vectors[c], observed_vec).is_le())
        .count();
    let p_value = at_least as f64 / m as f64;

    let k_crit = (alpha * m as f64).floor() as usize;
    let underpowered = k_crit == 0;
    let kept = &ranking.order[k_crit..];

    let t_len = values[0].len();
    let mut lower = vec![f64::NAN; t_len];
    let mut upper = vec![f64::NAN; t_len];
    for &t in &ranking.retained {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &c in kept {
            lo = lo.min(values[c][t]);
            hi = hi.max(values[c][t]);
        }
        lower[t] = lo;
        upper[t] = hi;
    }
    let mut pointwise = vec![false; t_len];
    for &t in &ranking.retained {
        pointwise[t] = values[0][t] < lower[t] || values[0][t] > upper[t];
    }
    Ok(EnvelopeTestResult {
        p_value,
        alpha,
        grid: grid.clone(),
        lower,
        upper,
        pointwise_significant: pointwise,
        observed_rank: ranking.ranks[0],
        significant: p_value <= alpha,
        underpowered,
    })
}

/// Run the envelope test on an ensemble.
pub fn envelope_test(ensemble: &CurveEnsemble, alpha: f64) -> Result<EnvelopeTestResult> {
    let values = ensemble.track_values()?;
    envelope_test_values(&values, &ensemble.mask, &ensemble.grid, alpha)
}

/// Build the observed curve and `s` permutation null curves for one spec.
///
/// The j-th null curve uses the permutation drawn from `stream.child(j)`,
/// which makes ensembles bit-reproducible under any parallel schedule and
/// shares permutations with [`run_pattern_tests`] for the same stream.
pub fn build_ensemble(
    pattern: &MarkedPattern,
    spec: &StatisticSpec,
    grid: &RGrid,
    kernel: &KernelSpec,
    s: usize,
    stream: StreamKey,
    opts: &EnvelopeOptions,
) -> Result<CurveEnsemble> {
    if s < 1 {
        return Err(Error::InvalidParameter(
            "need at least one permutation".into(),
        ));
    }
    check_track(spec, opts.track)?;
    let n = pattern.len();
    if n < 2 {
        return Err(Error::DegeneratePattern(n));
    }
    let marks = transform_marks(pattern, spec.transform)?;
    spec.validate(marks.dim())?;
    let moments = compute_moments(&marks)?;
    let geom = PairGeometry::build(pattern, grid, kernel, &EstimatorOptions::default())?;
    let a = marks.column(spec.j);
    let b = marks.column(spec.l);

    let identity: Vec<usize> = (0..n).collect();
    let observed = ensemble_curve(&geom, spec, &a, &b, &identity, &moments, opts.track)?;
    let mut nulls = Vec::with_capacity(s);
    for j in 0..s {
        let mut perm = permutation_indices(n, &mut stream.child(j as u64).rng());
        if opts.hold_focal_mark {
            if let Scope::Local(anchor) = spec.scope {
                hold_anchor(&mut perm, anchor);
            }
        }
        nulls.push(ensemble_curve(&geom, spec, &a, &b, &perm, &moments, opts.track)?);
    }

    let mut mask = vec![false; grid.len()];
    for curve in std::iter::once(&observed).chain(&nulls) {
        for (m, miss) in mask.iter_mut().zip(curve.missing_mask(opts.track)) {
            *m = *m || miss;
        }
    }
    Ok(CurveEnsemble {
        spec: *spec,
        grid: grid.clone(),
        observed,
        nulls,
        mask,
        track: opts.track,
    })
}

fn check_track(spec: &StatisticSpec, track: Track) -> Result<()> {
    if track == Track::Normalized && spec.kind == StatKind::ShimataniI && spec.scope.is_local() {
        return Err(Error::InvalidParameter(
            "the local Shimatani form has no normalized track".into(),
        ));
    }
    Ok(())
}

/// Rearrange a permutation so that `anchor` keeps its own mark while the
/// other positions still receive a uniform permutation of the other marks.
fn hold_anchor(perm: &mut [usize], anchor: usize) {
    if perm[anchor] != anchor {
        let q = perm
            .iter()
            .position(|&v| v == anchor)
            .expect("permutation contains every index");
        perm[q] = perm[anchor];
        perm[anchor] = anchor;
    }
}

/// One curve of an ensemble under the mark assignment `perm`.
fn ensemble_curve(
    geom: &PairGeometry,
    spec: &StatisticSpec,
    a: &[f64],
    b: &[f64],
    perm: &[usize],
    moments: &MarkMoments,
    track: Track,
) -> Result<SummaryCurve> {
    let t_len = geom.grid().len();
    let ap: Vec<f64> = perm.iter().map(|&k| a[k]).collect();
    let bp: Vec<f64> = perm.iter().map(|&k| b[k]).collect();
    let mut numerator = vec![0.0; t_len];
    let kernel_mass = match spec.scope {
        Scope::Global => {
            geom.global_numerator(
                spec.kind,
                &ap,
                &bp,
                moments.mean(spec.j),
                moments.mean(spec.l),
                &mut numerator,
            );
            geom.mass_global().to_vec()
        }
        Scope::Local(anchor) => {
            if anchor >= geom.n() {
                return Err(Error::BadIndex {
                    index: anchor,
                    len: geom.n(),
                });
            }
            geom.single_local_numerator(
                anchor,
                spec.kind,
                &ap,
                &bp,
                moments.mean(spec.l),
                &mut numerator,
            );
            geom.local_mass(anchor).to_vec()
        }
    };
    let unnormalized = ratio_track(&numerator, &kernel_mass);
    let mut curve = SummaryCurve {
        spec: *spec,
        grid: geom.grid().clone(),
        numerator,
        kernel_mass,
        unnormalized,
        factor: None,
        normalized: None,
        normalizer_withheld: false,
    };
    if track == Track::Normalized {
        let factor = independence_factor(spec, &ap, &bp, moments)?;
        curve.factor = Some(factor);
        if factor.abs() <= ZERO_NORMALIZER_TOL {
            curve.normalizer_withheld = true;
        } else {
            curve.normalized = Some(curve.unnormalized.iter().map(|v| v / factor).collect());
        }
    }
    Ok(curve)
}

/// Options for [`run_pattern_tests`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestRunOptions {
    /// Number of permutations s.
    pub permutations: usize,
    pub alpha: f64,
    pub run_global: bool,
    pub run_local: bool,
    pub hold_focal_mark: bool,
    pub track: Track,
}

impl Default for TestRunOptions {
    fn default() -> Self {
        TestRunOptions {
            permutations: DESK_PERMUTATIONS,
            alpha: 0.05,
            run_global: true,
            run_local: true,
            hold_focal_mark: false,
            track: Track::Unnormalized,
        }
    }
}

/// Global test outcome for one statistic on one pattern.
#[derive(Debug, Clone)]
pub struct GlobalTestOutput {
    pub observed: SummaryCurve,
    pub result: EnvelopeTestResult,
}

/// Local test outcome for one anchor point.
#[derive(Debug, Clone)]
pub struct LocalTestOutput {
    pub anchor: usize,
    pub observed: SummaryCurve,
    /// None when every grid point was masked for this anchor.
    pub result: Option<EnvelopeTestResult>,
}

/// All test outcomes of one statistic on one pattern.
#[derive(Debug, Clone)]
pub struct StatTestOutput {
    pub stat: StatisticConfig,
    pub global: Option<GlobalTestOutput>,
    pub local: Option<Vec<LocalTestOutput>>,
}

/// Run the global envelope test and/or all per-point local envelope tests
/// for each statistic on one pattern.
///
/// One set of `s` permutations, drawn from `stream.child(j)`, is shared by
/// the global test, every local test, and every statistic; the pair
/// geometry is computed once. The result is a pure function of
/// (pattern, stats, grid, kernel, opts, stream).
pub fn run_pattern_tests(
    pattern: &MarkedPattern,
    stats: &[StatisticConfig],
    grid: &RGrid,
    kernel: &KernelSpec,
    opts: &TestRunOptions,
    stream: StreamKey,
) -> Result<Vec<StatTestOutput>> {
    if opts.permutations < 1 {
        return Err(Error::InvalidParameter(
            "need at least one permutation".into(),
        ));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {}",
            opts.alpha
        )));
    }
    if opts.run_global && grid.r_max() >= pattern.window().diameter() {
        return Err(Error::InvalidParameter(format!(
            "r_max {} reaches the window diameter {}",
            grid.r_max(),
            pattern.window().diameter()
        )));
    }
    let n = pattern.len();
    if n < 2 {
        return Err(Error::DegeneratePattern(n));
    }
    let s = opts.permutations;
    let geom = PairGeometry::build(pattern, grid, kernel, &EstimatorOptions::default())?;

    // one permutation set for the whole pattern, shared by all statistics
    let mut perms: Vec<Vec<usize>> = Vec::with_capacity(s);
    for j in 0..s {
        perms.push(permutation_indices(n, &mut stream.child(j as u64).rng()));
    }

    // transformed marks and moments per distinct transform
    let mut transforms: Vec<(Transform, TransformedMarks, MarkMoments)> = Vec::new();
    for stat in stats {
        if !transforms.iter().any(|(t, _, _)| *t == stat.transform) {
            let marks = transform_marks(pattern, stat.transform)?;
            let moments = compute_moments(&marks)?;
            transforms.push((stat.transform, marks, moments));
        }
    }

    let mut outputs = Vec::with_capacity(stats.len());
    for stat in stats {
        let (_, marks, moments) = transforms
            .iter()
            .find(|(t, _, _)| *t == stat.transform)
            .expect("prepared above");
        stat.spec(Scope::Global).validate(marks.dim())?;
        if opts.run_local {
            check_track(&stat.spec(Scope::Local(0)), opts.track)?;
        }
        let a = marks.column(stat.j);
        let b = marks.column(stat.l);

        let global = if opts.run_global {
            Some(run_global_test(&geom, stat, grid, &a, &b, moments, &perms, opts)?)
        } else {
            None
        };

        let local = if opts.run_local {
            Some(if opts.hold_focal_mark {
                run_local_tests_hold_focal(&geom, stat, grid, &a, &b, moments, &perms, opts)?
            } else {
                run_local_tests_shared(&geom, stat, grid, &a, &b, moments, &perms, opts)?
            })
        } else {
            None
        };

        outputs.push(StatTestOutput {
            stat: *stat,
            global,
            local,
        });
    }
    Ok(outputs)
}

/// Attach factor and normalized track to a reported observed curve.
fn attach_normalization(
    curve: &mut SummaryCurve,
    a: &[f64],
    b: &[f64],
    moments: &MarkMoments,
) -> Result<()> {
    let factor = independence_factor(&curve.spec, a, b, moments)?;
    curve.factor = Some(factor);
    if curve.spec.kind == StatKind::ShimataniI && curve.spec.scope.is_local() {
        return Ok(());
    }
    if factor.abs() <= ZERO_NORMALIZER_TOL {
        curve.normalizer_withheld = true;
    } else {
        curve.normalized = Some(curve.unnormalized.iter().map(|v| v / factor).collect());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_global_test(
    geom: &PairGeometry,
    stat: &StatisticConfig,
    grid: &RGrid,
    a: &[f64],
    b: &[f64],
    moments: &MarkMoments,
    perms: &[Vec<usize>],
    opts: &TestRunOptions,
) -> Result<GlobalTestOutput> {
    let spec = stat.spec(Scope::Global);
    let t_len = grid.len();
    let mass = geom.mass_global();
    let mu_j = moments.mean(stat.j);
    let mu_l = moments.mean(stat.l);

    let mut tracks: Vec<Vec<f64>> = Vec::with_capacity(perms.len() + 1);
    let mut num_buf = vec![0.0; t_len];
    geom.global_numerator(stat.kind, a, b, mu_j, mu_l, &mut num_buf);
    let observed_numerator = num_buf.clone();
    tracks.push(scaled_track(&num_buf, mass, &spec, a, b, moments, opts.track)?);

    for perm in perms {
        let ap: Vec<f64> = perm.iter().map(|&k| a[k]).collect();
        let bp: Vec<f64> = perm.iter().map(|&k| b[k]).collect();
        geom.global_numerator(stat.kind, &ap, &bp, mu_j, mu_l, &mut num_buf);
        tracks.push(scaled_track(&num_buf, mass, &spec, &ap, &bp, moments, opts.track)?);
    }

    let mut mask = vec![false; t_len];
    for track in &tracks {
        for (m, v) in mask.iter_mut().zip(track) {
            *m = *m || v.is_nan();
        }
    }
    let refs: Vec<&[f64]> = tracks.iter().map(|v| v.as_slice()).collect();
    let result = envelope_test_values(&refs, &mask, grid, opts.alpha)?;

    let unnormalized = ratio_track(&observed_numerator, mass);
    let mut observed = SummaryCurve {
        spec,
        grid: grid.clone(),
        numerator: observed_numerator,
        kernel_mass: mass.to_vec(),
        unnormalized,
        factor: None,
        normalized: None,
        normalizer_withheld: false,
    };
    attach_normalization(&mut observed, a, b, moments)?;
    Ok(GlobalTestOutput { observed, result })
}

/// Track values of one labeling given its numerator sums.
fn scaled_track(
    numerator: &[f64],
    mass: &[f64],
    spec: &StatisticSpec,
    a: &[f64],
    b: &[f64],
    moments: &MarkMoments,
    track: Track,
) -> Result<Vec<f64>> {
    let ratio = ratio_track(numerator, mass);
    match track {
        Track::Unnormalized => Ok(ratio),
        Track::Normalized => {
            let factor = independence_factor(spec, a, b, moments)?;
            if factor.abs() <= ZERO_NORMALIZER_TOL {
                Ok(vec![f64::NAN; ratio.len()])
            } else {
                Ok(ratio.iter().map(|v| v / factor).collect())
            }
        }
    }
}

/// Local tests under the default convention (permute all marks): the shared
/// permutations let one sweep per permutation fill the anchored numerators
/// of every point at once. Track values are stored anchor-major, so each
/// anchor's whole ensemble is one contiguous block for the ranking phase.
#[allow(clippy::too_many_arguments)]
fn run_local_tests_shared(
    geom: &PairGeometry,
    stat: &StatisticConfig,
    grid: &RGrid,
    a: &[f64],
    b: &[f64],
    moments: &MarkMoments,
    perms: &[Vec<usize>],
    opts: &TestRunOptions,
) -> Result<Vec<LocalTestOutput>> {
    let n = a.len();
    let t_len = grid.len();
    let m = perms.len() + 1;
    let mu_l = moments.mean(stat.l);

    // values[anchor][curve][t], observed = curve 0
    let mut values = vec![f64::NAN; n * m * t_len];
    let mut num_buf = vec![0.0; n * t_len];
    geom.local_numerators(stat.kind, a, b, mu_l, &mut num_buf);
    let observed_numerators = num_buf.clone();
    local_tracks_into(geom, stat, &num_buf, a, b, opts.track, 0, m, &mut values);

    for (j, perm) in perms.iter().enumerate() {
        let ap: Vec<f64> = perm.iter().map(|&k| a[k]).collect();
        let bp: Vec<f64> = perm.iter().map(|&k| b[k]).collect();
        geom.local_numerators(stat.kind, &ap, &bp, mu_l, &mut num_buf);
        local_tracks_into(geom, stat, &num_buf, &ap, &bp, opts.track, j + 1, m, &mut values);
    }

    let mut outputs = Vec::with_capacity(n);
    let mut mask = vec![false; t_len];
    for anchor in 0..n {
        let block = &values[anchor * m * t_len..(anchor + 1) * m * t_len];
        let refs: Vec<&[f64]> = (0..m).map(|c| &block[c * t_len..(c + 1) * t_len]).collect();
        for (t, mv) in mask.iter_mut().enumerate() {
            *mv = refs.iter().any(|curve| curve[t].is_nan());
        }
        let result = match envelope_test_values(&refs, &mask, grid, opts.alpha) {
            Ok(r) => Some(r),
            Err(Error::AllMasked) => None,
            Err(e) => return Err(e),
        };
        let spec = stat.spec(Scope::Local(anchor));
        let offset = anchor * t_len;
        let numerator = observed_numerators[offset..offset + t_len].to_vec();
        let kernel_mass = geom.local_mass(anchor).to_vec();
        let unnormalized = ratio_track(&numerator, &kernel_mass);
        let mut observed = SummaryCurve {
            spec,
            grid: grid.clone(),
            numerator,
            kernel_mass,
            unnormalized,
            factor: None,
            normalized: None,
            normalizer_withheld: false,
        };
        attach_normalization(&mut observed, a, b, moments)?;
        outputs.push(LocalTestOutput {
            anchor,
            observed,
            result,
        });
    }
    Ok(outputs)
}

/// Write the track values of one labeling into the anchor-major ensemble
/// buffer at `curve`; NaN where the anchor has no kernel mass or its
/// normalizer is withheld.
#[allow(clippy::too_many_arguments)]
fn local_tracks_into(
    geom: &PairGeometry,
    stat: &StatisticConfig,
    numerators: &[f64],
    a: &[f64],
    b: &[f64],
    track: Track,
    curve: usize,
    m: usize,
    out: &mut [f64],
) {
    let n = a.len();
    let t_len = geom.grid().len();
    let nf = n as f64;
    let sum_b: f64 = b.iter().sum();
    let sum_b2: f64 = b.iter().map(|x| x * x).sum();
    for anchor in 0..n {
        let mass = geom.local_mass(anchor);
        let offset = anchor * t_len;
        let base = (anchor * m + curve) * t_len;
        // anchored sample-mean independence factor, in closed form
        let factor = match track {
            Track::Unnormalized => None,
            Track::Normalized => {
                let f = match stat.kind {
                    StatKind::MarkCorrelation => a[anchor] * ((sum_b - b[anchor]) / (nf - 1.0)),
                    StatKind::Variogram => {
                        0.5 * (a[anchor] * a[anchor]
                            - 2.0 * a[anchor] * (sum_b - b[anchor]) / (nf - 1.0)
                            + (sum_b2 - b[anchor] * b[anchor]) / (nf - 1.0))
                    }
                    // rejected by check_track before we get here
                    StatKind::ShimataniI => f64::NAN,
                };
                if f.abs() <= ZERO_NORMALIZER_TOL {
                    continue;
                }
                Some(f)
            }
        };
        for t in 0..t_len {
            if mass[t] != 0.0 {
                let ratio = numerators[offset + t] / mass[t];
                out[base + t] = match factor {
                    None => ratio,
                    Some(f) => ratio / f,
                };
            }
        }
    }
}

/// Local tests holding the anchor's own mark fixed: every (anchor,
/// permutation) pair needs its own fixed-up assignment, so curves are
/// computed anchor by anchor.
#[allow(clippy::too_many_arguments)]
fn run_local_tests_hold_focal(
    geom: &PairGeometry,
    stat: &StatisticConfig,
    grid: &RGrid,
    a: &[f64],
    b: &[f64],
    moments: &MarkMoments,
    perms: &[Vec<usize>],
    opts: &TestRunOptions,
) -> Result<Vec<LocalTestOutput>> {
    let n = a.len();
    let t_len = grid.len();
    let mu_l = moments.mean(stat.l);

    // inverse permutations: position each mark was sent to
    let inverses: Vec<Vec<usize>> = perms
        .iter()
        .map(|perm| {
            let mut inv = vec![0usize; n];
            for (pos, &mark) in perm.iter().enumerate() {
                inv[mark] = pos;
            }
            inv
        })
        .collect();

    let mut outputs = Vec::with_capacity(n);
    let mut fixed: Vec<usize> = Vec::new();
    let mut num_buf = vec![0.0; t_len];
    for anchor in 0..n {
        let spec = stat.spec(Scope::Local(anchor));
        let mass = geom.local_mass(anchor);
        let mut tracks: Vec<Vec<f64>> = Vec::with_capacity(perms.len() + 1);

        geom.single_local_numerator(anchor, stat.kind, a, b, mu_l, &mut num_buf);
        let observed_numerator = num_buf.clone();
        tracks.push(anchored_track(&num_buf, mass, &spec, a, b, moments, opts.track)?);

        for (perm, inv) in perms.iter().zip(&inverses) {
            fixed.clear();
            fixed.extend_from_slice(perm);
            if fixed[anchor] != anchor {
                let q = inv[anchor];
                fixed[q] = fixed[anchor];
                fixed[anchor] = anchor;
            }
            let ap: Vec<f64> = fixed.iter().map(|&k| a[k]).collect();
            let bp: Vec<f64> = fixed.iter().map(|&k| b[k]).collect();
            geom.single_local_numerator(anchor, stat.kind, &ap, &bp, mu_l, &mut num_buf);
            tracks.push(anchored_track(&num_buf, mass, &spec, &ap, &bp, moments, opts.track)?);
        }

        let mut mask = vec![false; t_len];
        for track in &tracks {
            for (m, v) in mask.iter_mut().zip(track) {
                *m = *m || v.is_nan();
            }
        }
        let refs: Vec<&[f64]> = tracks.iter().map(|v| v.as_slice()).collect();
        let result = match envelope_test_values(&refs, &mask, grid, opts.alpha) {
            Ok(r) => Some(r),
            Err(Error::AllMasked) => None,
            Err(e) => return Err(e),
        };
        let kernel_mass = mass.to_vec();
        let unnormalized = ratio_track(&observed_numerator, &kernel_mass);
        let mut observed = SummaryCurve {
            spec,
            grid: grid.clone(),
            numerator: observed_numerator,
            kernel_mass,
            unnormalized,
            factor: None,
            normalized: None,
            normalizer_withheld: false,
        };
        attach_normalization(&mut observed, a, b, moments)?;
        outputs.push(LocalTestOutput {
            anchor,
            observed,
            result,
        });
    }
    Ok(outputs)
}

fn anchored_track(
    numerator: &[f64],
    mass: &[f64],
    spec: &StatisticSpec,
    a: &[f64],
    b: &[f64],
    moments: &MarkMoments,
    track: Track,
) -> Result<Vec<f64>> {
    let ratio = ratio_track(numerator, mass);
    match track {
        Track::Unnormalized => Ok(ratio),
        Track::Normalized => {
            let factor = independence_factor(spec, a, b, moments)?;
            if factor.abs() <= ZERO_NORMALIZER_TOL {
                Ok(vec![f64::NAN; ratio.len()])
            } else {
                Ok(ratio.iter().map(|v| v / factor).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests;
