//! Compositional geometry: validation, closure, geometric mean, and the
//! alr/clr/ilr log-ratio transforms with their inverses.
//!
//! A composition carries only relative information: its parts are strictly
//! positive and sum to a fixed constant. Statistics on the raw parts ignore
//! that constraint, so analysis happens in log-ratio coordinates instead.
//! All values here are immutable after construction and safe to share
//! across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the sum constraint when validating compositions.
pub const CLOSURE_REL_TOL: f64 = 1e-9;

/// Absolute tolerance for the clr sum-to-zero invariant.
pub const CLR_SUM_TOL: f64 = 1e-9;

/// Tolerance for orthonormality checks on contrast matrices.
pub const BASIS_TOL: f64 = 1e-10;

/// How zero parts are treated during validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ZeroPolicy {
    /// Zero (or negative) parts are an error.
    Reject,
    /// Zeros are replaced multiplicatively by `delta` on the unit-closure
    /// scale, the remaining parts are shrunk to keep their ratios, and the
    /// result is re-closed. Negative parts are still an error.
    Replace { delta: f64 },
}

/// A point in the D-part simplex: strictly positive parts summing to a
/// constant `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    parts: Vec<f64>,
    kappa: f64,
}

impl Composition {
    /// Build from parts that already satisfy the sum constraint to within
    /// [`CLOSURE_REL_TOL`]; the parts are then re-normalized exactly.
    pub fn new(parts: Vec<f64>, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        if parts.len() < 2 {
            return Err(Error::BadDimension {
                got: parts.len(),
                min: 2,
            });
        }
        check_positive(&parts)?;
        let sum: f64 = parts.iter().sum();
        if ((sum - kappa) / kappa).abs() > CLOSURE_REL_TOL {
            return Err(Error::SumMismatch { sum, kappa });
        }
        Ok(Self::rescaled(parts, sum, kappa))
    }

    /// Proportional closure: scale strictly positive parts to sum to `kappa`.
    pub fn close(raw: &[f64], kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        if raw.len() < 2 {
            return Err(Error::BadDimension {
                got: raw.len(),
                min: 2,
            });
        }
        check_positive(raw)?;
        let sum: f64 = raw.iter().sum();
        Ok(Self::rescaled(raw.to_vec(), sum, kappa))
    }

    fn rescaled(mut parts: Vec<f64>, sum: f64, kappa: f64) -> Self {
        let factor = kappa / sum;
        for p in parts.iter_mut() {
            *p *= factor;
        }
        Composition { parts, kappa }
    }

    /// Number of parts D.
    pub fn dim(&self) -> usize {
        self.parts.len()
    }

    /// The sum constant 𝜅.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn parts(&self) -> &[f64] {
        &self.parts
    }

    pub fn part(&self, j: usize) -> f64 {
        self.parts[j]
    }

    /// Geometric mean of the parts, computed through the mean of logs.
    pub fn geometric_mean(&self) -> f64 {
        let mean_log =
            self.parts.iter().map(|p| p.ln()).sum::<f64>() / self.parts.len() as f64;
        mean_log.exp()
    }

    /// Centered log-ratio transform: `log(c_j / g(c))` for every part.
    /// The output sums to zero.
    pub fn clr(&self) -> LogRatioVector {
        let mean_log =
            self.parts.iter().map(|p| p.ln()).sum::<f64>() / self.parts.len() as f64;
        let coords = self.parts.iter().map(|p| p.ln() - mean_log).collect();
        LogRatioVector {
            coords,
            tag: TransformTag::Clr,
        }
    }

    /// Additive log-ratio transform with the given reference part:
    /// `log(c_j / c_ref)` for every `j != ref`, in original part order.
    pub fn alr(&self, ref_index: usize) -> Result<LogRatioVector> {
        let d = self.dim();
        if ref_index >= d {
            return Err(Error::BadIndex {
                index: ref_index,
                len: d,
            });
        }
        let log_ref = self.parts[ref_index].ln();
        let coords = self
            .parts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != ref_index)
            .map(|(_, p)| p.ln() - log_ref)
            .collect();
        Ok(LogRatioVector {
            coords,
            tag: TransformTag::Alr { d, ref_index },
        })
    }

    /// Isometric log-ratio transform: inner products of the clr vector with
    /// the rows of an orthonormal contrast matrix.
    pub fn ilr(&self, basis: &ContrastMatrix) -> Result<LogRatioVector> {
        if basis.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: self.dim(),
            });
        }
        let clr = self.clr();
        let coords = basis
            .rows()
            .iter()
            .map(|row| dot(row, clr.coords()))
            .collect();
        Ok(LogRatioVector {
            coords,
            tag: TransformTag::Ilr { d: self.dim() },
        })
    }
}

/// Validate raw data and close it to a composition.
///
/// Under [`ZeroPolicy::Reject`] every entry must be strictly positive.
/// Under [`ZeroPolicy::Replace`] zeros are imputed multiplicatively: the
/// input is first closed to 1, zeros become `delta`, non-zero proportions
/// are scaled by `1 - z*delta` (z = number of zeros) so their ratios are
/// preserved, and the result is closed to `kappa`.
pub fn validate_and_close(raw: &[f64], kappa: f64, policy: ZeroPolicy) -> Result<Composition> {
    check_kappa(kappa)?;
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    if raw.len() < 2 {
        return Err(Error::BadDimension {
            got: raw.len(),
            min: 2,
        });
    }
    for (index, &value) in raw.iter().enumerate() {
        if value < 0.0 || !value.is_finite() {
            return Err(Error::ZeroPart { index, value });
        }
    }
    if raw.iter().all(|&v| v == 0.0) {
        return Err(Error::AllZero);
    }
    match policy {
        ZeroPolicy::Reject => {
            if let Some((index, &value)) = raw.iter().enumerate().find(|(_, &v)| v == 0.0) {
                return Err(Error::ZeroPart { index, value });
            }
            Composition::close(raw, kappa)
        }
        ZeroPolicy::Replace { delta } => {
            let zeros = raw.iter().filter(|&&v| v == 0.0).count();
            if zeros == 0 {
                return Composition::close(raw, kappa);
            }
            if delta <= 0.0 || (zeros as f64) * delta >= 1.0 {
                return Err(Error::InvalidParameter(format!(
                    "replacement delta {delta} infeasible for {zeros} zero parts"
                )));
            }
            let sum: f64 = raw.iter().sum();
            let shrink = 1.0 - zeros as f64 * delta;
            let replaced: Vec<f64> = raw
                .iter()
                .map(|&v| if v == 0.0 { delta } else { shrink * v / sum })
                .collect();
            Composition::close(&replaced, kappa)
        }
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sum constant must be positive, got {kappa}"
        )));
    }
    Ok(())
}

fn check_positive(parts: &[f64]) -> Result<()> {
    for (index, &value) in parts.iter().enumerate() {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::ZeroPart { index, value });
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Which transform produced a [`LogRatioVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformTag {
    /// Additive log-ratio of a D-part composition against part `ref_index`.
    Alr { d: usize, ref_index: usize },
    /// Centered log-ratio; coordinates sum to zero.
    Clr,
    /// Isometric log-ratio of a D-part composition in the default basis.
    Ilr { d: usize },
}

/// Coordinates of a composition in a Euclidean log-ratio space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRatioVector {
    coords: Vec<f64>,
    tag: TransformTag,
}

impl LogRatioVector {
    /// Wrap raw coordinates, checking that the dimension matches the tag and
    /// that clr coordinates sum to zero.
    pub fn new(coords: Vec<f64>, tag: TransformTag) -> Result<Self> {
        let expected = match tag {
            TransformTag::Clr => coords.len(),
            TransformTag::Alr { d, ref_index } => {
                if ref_index >= d {
                    return Err(Error::BadIndex {
                        index: ref_index,
                        len: d,
                    });
                }
                d - 1
            }
            TransformTag::Ilr { d } => d - 1,
        };
        if coords.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: coords.len(),
            });
        }
        if matches!(tag, TransformTag::Clr) {
            let sum: f64 = coords.iter().sum();
            if sum.abs() > CLR_SUM_TOL {
                return Err(Error::SumMismatch { sum, kappa: 0.0 });
            }
        }
        Ok(LogRatioVector { coords, tag })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn tag(&self) -> TransformTag {
        self.tag
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Rows of clr coordinates of an orthonormal simplicial basis: D-1 mutually
/// orthogonal unit vectors, each summing to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastMatrix {
    rows: Vec<Vec<f64>>,
    d: usize,
}

impl ContrastMatrix {
    /// Validate an explicit contrast matrix.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if d < 2 || rows.len() != d - 1 {
            return Err(Error::BadDimension { got: d, min: 2 });
        }
        for (a, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            let sum: f64 = row.iter().sum();
            if sum.abs() > BASIS_TOL {
                return Err(Error::InvalidParameter(format!(
                    "basis row {a} sums to {sum}"
                )));
            }
            for b in a..rows.len() {
                let want = if a == b { 1.0 } else { 0.0 };
                let got = dot(row, &rows[b]);
                if (got - want).abs() > BASIS_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "basis rows {a},{b} have inner product {got}"
                    )));
                }
            }
        }
        Ok(ContrastMatrix { rows, d })
    }

    /// The default deterministic basis for dimension `d`: Helmert-style
    /// contrasts of the sequential binary partitions {1..a | a+1}, signed so
    /// that the first non-zero entry of each row is positive. Row `a`
    /// (1-based) is `(1, ..., 1, -a, 0, ..., 0) / sqrt(a (a+1))`.
    pub fn helmert(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::BadDimension { got: d, min: 2 });
        }
        let mut rows = Vec::with_capacity(d - 1);
        for a in 1..d {
            let norm = (a as f64 * (a as f64 + 1.0)).sqrt();
            let mut row = vec![0.0; d];
            for entry in row.iter_mut().take(a) {
                *entry = 1.0 / norm;
            }
            row[a] = -(a as f64) / norm;
            rows.push(row);
        }
        Ok(ContrastMatrix { rows, d })
    }

    /// Dimension D of the compositions this basis applies to.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of basis rows (D-1).
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Invert a clr vector: parts proportional to `exp(coords)`, closed to `kappa`.
pub fn clr_inv(v: &LogRatioVector, kappa: f64) -> Result<Composition> {
    match v.tag() {
        TransformTag::Clr => {}
        other => {
            return Err(Error::InvalidParameter(format!(
                "expected a clr-tagged vector, got {other:?}"
            )))
        }
    }
    let raw: Vec<f64> = v.coords().iter().map(|c| c.exp()).collect();
    Composition::close(&raw, kappa)
}

/// Invert an alr vector: insert 1 at the reference slot, exponentiate the
/// rest, close to `kappa`.
pub fn alr_inv(v: &LogRatioVector, kappa: f64) -> Result<Composition> {
    let (d, ref_index) = match v.tag() {
        TransformTag::Alr { d, ref_index } => (d, ref_index),
        other => {
            return Err(Error::InvalidParameter(format!(
                "expected an alr-tagged vector, got {other:?}"
            )))
        }
    };
    let mut raw = Vec::with_capacity(d);
    let mut it = v.coords().iter();
    for j in 0..d {
        if j == ref_index {
            raw.push(1.0);
        } else {
            raw.push(it.next().expect("tag guarantees d-1 coords").exp());
        }
    }
    Composition::close(&raw, kappa)
}

/// Invert an ilr vector through the supplied basis.
pub fn ilr_inv(v: &LogRatioVector, basis: &ContrastMatrix, kappa: f64) -> Result<Composition> {
    let d = match v.tag() {
        TransformTag::Ilr { d } => d,
        other => {
            return Err(Error::InvalidParameter(format!(
                "expected an ilr-tagged vector, got {other:?}"
            )))
        }
    };
    if basis.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: basis.dim(),
        });
    }
    let mut clr_coords = vec![0.0; d];
    for (coef, row) in v.coords().iter().zip(basis.rows()) {
        for (c, r) in clr_coords.iter_mut().zip(row) {
            *c += coef * r;
        }
    }
    let raw: Vec<f64> = clr_coords.iter().map(|c| c.exp()).collect();
    Composition::close(&raw, kappa)
}
