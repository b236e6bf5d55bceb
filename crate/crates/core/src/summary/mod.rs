//! Test functions, kernel smoothing, and the global and local estimators of
//! the conditional mean product (mark correlation), mark variogram, and
//! Shimatani's I for composition-valued marks, together with their
//! normalizing factors.
//!
//! Marks are first mapped to Euclidean coordinates by a log-ratio transform;
//! every characteristic then operates component-wise on a pair (j, l) of
//! transformed coordinates. Estimation is a pure function of
//! (pattern, spec, grid, kernel); curves for different anchor points,
//! component pairs, and permutations can be computed concurrently.

mod estimate;

pub use estimate::{
    estimate_global, estimate_local, ratio_track, EstimatorOptions, PairGeometry,
};

use serde::{Deserialize, Serialize};

use crate::coda::{Composition, ContrastMatrix};
use crate::error::{Error, Result};
use crate::pattern::MarkedPattern;

/// Default Stoyan rule coefficient: bandwidth h = c / sqrt(intensity).
pub const STOYAN_DEFAULT_C: f64 = 0.15;

/// Default number of grid points.
pub const DEFAULT_GRID_POINTS: usize = 128;

/// Default maximum distance on the unit square.
pub const DEFAULT_R_MAX: f64 = 0.25;

/// Normalizing factors closer to zero than this are withheld.
pub const ZERO_NORMALIZER_TOL: f64 = 1e-12;

/// Which summary characteristic a spec describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StatKind {
    /// t1: conditional mean product of marks (mark correlation function).
    MarkCorrelation,
    /// t2: half squared difference (mark variogram).
    Variogram,
    /// t3: mean-centered product (Shimatani's I).
    ShimataniI,
}

impl StatKind {
    pub fn label(&self) -> &'static str {
        match self {
            StatKind::MarkCorrelation => "t1_markcorr",
            StatKind::Variogram => "t2_variogram",
            StatKind::ShimataniI => "t3_shimatani",
        }
    }
}

/// Which log-ratio transform to apply to the marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transform {
    Clr,
    Alr { ref_index: usize },
    Ilr,
}

impl Transform {
    /// Dimension of the transformed coordinates for D-part compositions.
    pub fn coord_dim(&self, d: usize) -> usize {
        match self {
            Transform::Clr => d,
            Transform::Alr { .. } | Transform::Ilr => d.saturating_sub(1),
        }
    }
}

impl std::fmt::Display for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Transform::Clr => write!(f, "clr"),
            Transform::Alr { ref_index } => write!(f, "alr:{}", ref_index + 1),
            Transform::Ilr => write!(f, "ilr"),
        }
    }
}

/// Whether a characteristic is evaluated pattern-wide or anchored at one point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    Global,
    /// Anchored at the point with this index.
    Local(usize),
}

impl Scope {
    pub fn is_local(&self) -> bool {
        matches!(self, Scope::Local(_))
    }
}

/// Which characteristic to compute: kind, transform, component pair, scope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticSpec {
    pub kind: StatKind,
    pub transform: Transform,
    /// Component index (into the transformed coordinates) at the anchor.
    pub j: usize,
    /// Component index at the neighbor.
    pub l: usize,
    pub scope: Scope,
}

impl StatisticSpec {
    /// Check the component indices against the transformed dimension.
    pub fn validate(&self, coord_dim: usize) -> Result<()> {
        for idx in [self.j, self.l] {
            if idx >= coord_dim {
                return Err(Error::BadIndex {
                    index: idx,
                    len: coord_dim,
                });
            }
        }
        Ok(())
    }
}

/// Strictly increasing positive distances at which curves are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RGrid {
    distances: Vec<f64>,
}

impl RGrid {
    pub fn new(distances: Vec<f64>) -> Result<Self> {
        if distances.len() < 2 {
            return Err(Error::EmptyGrid);
        }
        if distances[0] <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "grid must start above zero, got {}",
                distances[0]
            )));
        }
        if distances.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "grid distances must be strictly increasing".into(),
            ));
        }
        Ok(RGrid { distances })
    }

    /// `count` equally spaced points on (0, r_max].
    pub fn uniform(r_max: f64, count: usize) -> Result<Self> {
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "r_max must be positive, got {r_max}"
            )));
        }
        if count < 2 {
            return Err(Error::EmptyGrid);
        }
        let distances = (1..=count)
            .map(|t| r_max * t as f64 / count as f64)
            .collect();
        Ok(RGrid { distances })
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn r_max(&self) -> f64 {
        *self.distances.last().expect("grid has at least two points")
    }
}

impl Default for RGrid {
    fn default() -> Self {
        RGrid::uniform(DEFAULT_R_MAX, DEFAULT_GRID_POINTS).expect("default grid is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    Epanechnikov,
    Box,
    Gaussian,
}

/// Either an explicit bandwidth or the Stoyan rule h = c / sqrt(intensity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    Fixed(f64),
    Stoyan { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            family: KernelFamily::Epanechnikov,
            bandwidth: Bandwidth::Stoyan { c: STOYAN_DEFAULT_C },
        }
    }
}

impl KernelSpec {
    /// The bandwidth to use for a pattern with the given empirical intensity.
    pub fn resolve_bandwidth(&self, intensity: f64) -> Result<f64> {
        let h = match self.bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::Stoyan { c } => {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "Stoyan coefficient must be positive, got {c}"
                    )));
                }
                if !(intensity.is_finite() && intensity > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "intensity must be positive, got {intensity}"
                    )));
                }
                c / intensity.sqrt()
            }
        };
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {h}"
            )));
        }
        Ok(h)
    }
}

/// Evaluate the smoothing kernel at `u` with bandwidth `h`.
///
/// For the Epanechnikov and box kernels `h` is the half-width of the
/// support and any `|u| >= h` contributes exactly zero; for the Gaussian
/// kernel `h` is the standard deviation. All three integrate to one.
#[inline]
pub fn kernel_value(u: f64, family: KernelFamily, h: f64) -> f64 {
    match family {
        KernelFamily::Epanechnikov => {
            let z = u / h;
            if z.abs() >= 1.0 {
                0.0
            } else {
                0.75 * (1.0 - z * z) / h
            }
        }
        KernelFamily::Box => {
            if (u / h).abs() >= 1.0 {
                0.0
            } else {
                0.5 / h
            }
        }
        KernelFamily::Gaussian => {
            let z = u / h;
            (-0.5 * z * z).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
        }
    }
}

/// Evaluate a test function on a pair of transformed coordinates.
///
/// `local` selects the one-sided Shimatani form `a (b - mu_l)` used by the
/// anchored characteristics; the global form centers both arguments. The
/// means are ignored by t1 and t2.
#[inline]
pub fn eval_test_function(
    kind: StatKind,
    local: bool,
    a: f64,
    b: f64,
    mu_j: f64,
    mu_l: f64,
) -> f64 {
    match kind {
        StatKind::MarkCorrelation => a * b,
        StatKind::Variogram => 0.5 * (a - b) * (a - b),
        StatKind::ShimataniI => {
            if local {
                a * (b - mu_l)
            } else {
                (a - mu_j) * (b - mu_l)
            }
        }
    }
}

/// Marks of one pattern mapped to log-ratio coordinates, row-major n x dim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedMarks {
    values: Vec<f64>,
    n: usize,
    dim: usize,
    pub transform: Transform,
}

impl TransformedMarks {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, i: usize, c: usize) -> f64 {
        self.values[i * self.dim + c]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Copy out one coordinate column (contiguous, for the estimator loops).
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i, c)).collect()
    }
}

/// Map every mark of a pattern through the transform.
pub fn transform_marks(pattern: &MarkedPattern, transform: Transform) -> Result<TransformedMarks> {
    let n = pattern.len();
    let d = pattern.mark_dim();
    if d < 2 {
        return Err(Error::BadDimension { got: d, min: 2 });
    }
    let dim = transform.coord_dim(d);
    let mut values = Vec::with_capacity(n * dim);
    let basis = match transform {
        Transform::Ilr => Some(ContrastMatrix::helmert(d)?),
        _ => None,
    };
    for mark in pattern.marks() {
        let v = apply_transform(mark, transform, basis.as_ref())?;
        values.extend_from_slice(v.coords());
    }
    Ok(TransformedMarks {
        values,
        n,
        dim,
        transform,
    })
}

fn apply_transform(
    mark: &Composition,
    transform: Transform,
    basis: Option<&ContrastMatrix>,
) -> Result<crate::coda::LogRatioVector> {
    match transform {
        Transform::Clr => Ok(mark.clr()),
        Transform::Alr { ref_index } => mark.alr(ref_index),
        Transform::Ilr => mark.ilr(basis.expect("basis prepared for ilr")),
    }
}

/// Column-wise sample moments of transformed marks. Variances and
/// covariances use the 1/(n-1) convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkMoments {
    means: Vec<f64>,
    cov: Vec<f64>,
    dim: usize,
    n: usize,
}

impl MarkMoments {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self, j: usize) -> f64 {
        self.means[j]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Sample variance of coordinate j.
    pub fn var(&self, j: usize) -> f64 {
        self.cov[j * self.dim + j]
    }

    /// Sample covariance of coordinates j and l.
    pub fn cov(&self, j: usize, l: usize) -> f64 {
        self.cov[j * self.dim + l]
    }
}

/// Column means, variances, and cross-covariances of the transformed marks.
pub fn compute_moments(marks: &TransformedMarks) -> Result<MarkMoments> {
    let n = marks.n();
    let dim = marks.dim();
    if n < 2 {
        return Err(Error::DegeneratePattern(n));
    }
    let mut means = vec![0.0; dim];
    for i in 0..n {
        for (c, m) in means.iter_mut().enumerate() {
            *m += marks.value(i, c);
        }
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; dim * dim];
    for i in 0..n {
        for a in 0..dim {
            let da = marks.value(i, a) - means[a];
            for b in a..dim {
                let db = marks.value(i, b) - means[b];
                cov[a * dim + b] += da * db;
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..dim {
        for b in a..dim {
            let v = cov[a * dim + b] / denom;
            cov[a * dim + b] = v;
            cov[b * dim + a] = v;
        }
    }
    Ok(MarkMoments {
        means,
        cov,
        dim,
        n,
    })
}

/// Which track of a [`SummaryCurve`] to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Track {
    Unnormalized,
    Normalized,
}

/// An estimated characteristic on a distance grid.
///
/// `numerator` and `kernel_mass` are the plain kernel sums
/// sum t*K(d - r) and sum K(d - r); the intensity prefactors of the
/// product-density estimator cancel in their ratio, which is stored as
/// `unnormalized` with NaN at grid points that received no kernel mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCurve {
    pub spec: StatisticSpec,
    pub grid: RGrid,
    pub numerator: Vec<f64>,
    pub kernel_mass: Vec<f64>,
    pub unnormalized: Vec<f64>,
    /// The independence factor, attached by [`normalize`]. Recorded as 0 for
    /// the local Shimatani form, whose expectation under random labeling is
    /// zero and which therefore has no normalized version.
    pub factor: Option<f64>,
    pub normalized: Option<Vec<f64>>,
    /// Set when the factor was within [`ZERO_NORMALIZER_TOL`] of zero and
    /// the normalized track was withheld.
    pub normalizer_withheld: bool,
}

impl SummaryCurve {
    pub fn is_missing(&self, t: usize) -> bool {
        self.unnormalized[t].is_nan()
    }

    /// True at grid points with no kernel mass (or withheld normalization).
    pub fn missing_mask(&self, track: Track) -> Vec<bool> {
        match track {
            Track::Unnormalized => self.unnormalized.iter().map(|v| v.is_nan()).collect(),
            Track::Normalized => match &self.normalized {
                Some(values) => values.iter().map(|v| v.is_nan()).collect(),
                None => vec![true; self.unnormalized.len()],
            },
        }
    }

    pub fn values(&self, track: Track) -> Option<&[f64]> {
        match track {
            Track::Unnormalized => Some(&self.unnormalized),
            Track::Normalized => self.normalized.as_deref(),
        }
    }
}

/// Sample-mean estimator of the independence factor ∇̂(∞) for a spec.
///
/// Local scope uses the anchored sample mean over the n-1 other points;
/// global t1/t2 use the mean over all ordered pairs i != k. Both are
/// evaluated through algebraically expanded O(n) forms. The global
/// Shimatani factor is the sample covariance of the two coordinates, and
/// the local Shimatani form has no factor (returns 0, its centering
/// constant).
pub fn independence_factor(
    spec: &StatisticSpec,
    a: &[f64],
    b: &[f64],
    moments: &MarkMoments,
) -> Result<f64> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return Err(Error::DegeneratePattern(n.min(b.len())));
    }
    let nf = n as f64;
    let sum_b: f64 = b.iter().sum();
    Ok(match (spec.kind, spec.scope) {
        (StatKind::ShimataniI, Scope::Local(_)) => 0.0,
        (StatKind::ShimataniI, Scope::Global) => moments.cov(spec.j, spec.l),
        (StatKind::MarkCorrelation, Scope::Local(i)) => {
            check_anchor(i, n)?;
            a[i] * ((sum_b - b[i]) / (nf - 1.0))
        }
        (StatKind::Variogram, Scope::Local(i)) => {
            check_anchor(i, n)?;
            let sum_b2: f64 = b.iter().map(|x| x * x).sum();
            0.5 * (a[i] * a[i] - 2.0 * a[i] * (sum_b - b[i]) / (nf - 1.0)
                + (sum_b2 - b[i] * b[i]) / (nf - 1.0))
        }
        (StatKind::MarkCorrelation, Scope::Global) => {
            let sum_a: f64 = a.iter().sum();
            let diag: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (sum_a * sum_b - diag) / (nf * (nf - 1.0))
        }
        (StatKind::Variogram, Scope::Global) => {
            let sum_a: f64 = a.iter().sum();
            let sum_a2: f64 = a.iter().map(|x| x * x).sum();
            let sum_b2: f64 = b.iter().map(|x| x * x).sum();
            let diag: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            0.5 * (nf * sum_a2 - 2.0 * sum_a * sum_b + nf * sum_b2 - diag) / (nf * (nf - 1.0))
        }
    })
}

fn check_anchor(i: usize, n: usize) -> Result<()> {
    if i >= n {
        return Err(Error::BadIndex { index: i, len: n });
    }
    Ok(())
}

/// Attach the independence factor and the normalized track to a curve.
///
/// The normalized track divides the unnormalized values by the factor. It
/// is withheld (with `normalizer_withheld` set) when the factor is within
/// [`ZERO_NORMALIZER_TOL`] of zero, and absent by definition for the local
/// Shimatani form, whose factor is recorded as the centering constant 0.
pub fn normalize(
    mut curve: SummaryCurve,
    moments: &MarkMoments,
    marks: &TransformedMarks,
) -> Result<SummaryCurve> {
    let spec = curve.spec;
    spec.validate(marks.dim())?;
    let a = marks.column(spec.j);
    let b = marks.column(spec.l);
    let factor = independence_factor(&spec, &a, &b, moments)?;
    curve.factor = Some(factor);
    if matches!((spec.kind, spec.scope), (StatKind::ShimataniI, Scope::Local(_))) {
        curve.normalized = None;
        curve.normalizer_withheld = false;
    } else if factor.abs() <= ZERO_NORMALIZER_TOL {
        curve.normalized = None;
        curve.normalizer_withheld = true;
    } else {
        curve.normalized = Some(curve.unnormalized.iter().map(|v| v / factor).collect());
        curve.normalizer_withheld = false;
    }
    Ok(curve)
}
