//! Kernel-ratio estimation of the summary characteristics.
//!
//! The geometry of a pattern (pair distances, per-pair grid ranges, and the
//! kernel mass sums of the denominator) does not depend on the mark labeling,
//! so it is computed once per pattern and shared read-only across anchors,
//! component pairs, and permutations. Numerator sweeps then only combine the
//! current mark columns with the precomputed ranges.

use serde::{Deserialize, Serialize};

use super::{
    compute_moments, eval_test_function, kernel_value, transform_marks, KernelFamily, KernelSpec,
    RGrid, Scope, StatKind, StatisticSpec, SummaryCurve,
};
use crate::error::{Error, Result};
use crate::pattern::MarkedPattern;

/// Estimator tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Skip pairs and grid points whose kernel weight is exactly zero
    /// (compact kernels only). The pruned sweep is bit-identical to the
    /// unpruned one; disabling is a diagnostic.
    pub pruning: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions { pruning: true }
    }
}

#[derive(Debug, Clone)]
struct PairEntry {
    i: u32,
    k: u32,
    dist: f64,
    /// Inclusive grid index range with non-zero kernel support.
    t_lo: u32,
    t_hi: u32,
}

/// One neighbor of an anchor in the adjacency layout.
#[derive(Debug, Clone)]
struct AdjEntry {
    neighbor: u32,
    dist: f64,
    t_lo: u32,
    t_hi: u32,
}

/// Precomputed pair ranges and kernel mass sums for one pattern.
///
/// Pairs are kept twice: as an i < k list for the global sweeps and as a
/// per-anchor adjacency (neighbors ascending) for the local sweeps, whose
/// writes then stay within one anchor row at a time. The per-anchor
/// contribution order is identical in both layouts, so local sums agree
/// bit for bit regardless of the route.
#[derive(Debug, Clone)]
pub struct PairGeometry {
    grid: RGrid,
    family: KernelFamily,
    h: f64,
    n: usize,
    pairs: Vec<PairEntry>,
    adj_offsets: Vec<usize>,
    adj: Vec<AdjEntry>,
    mass_local: Vec<f64>,
    mass_global: Vec<f64>,
}

impl PairGeometry {
    pub fn build(
        pattern: &MarkedPattern,
        grid: &RGrid,
        kernel: &KernelSpec,
        opts: &EstimatorOptions,
    ) -> Result<Self> {
        let n = pattern.len();
        if n < 2 {
            return Err(Error::DegeneratePattern(n));
        }
        let h = kernel.resolve_bandwidth(pattern.intensity())?;
        let support = match kernel.family {
            KernelFamily::Gaussian => f64::INFINITY,
            _ => h,
        };
        let r = grid.distances();
        let t_len = r.len();
        let locations = pattern.locations();

        let mut pairs = Vec::new();
        for i in 0..n {
            for k in (i + 1)..n {
                let dist = locations[i].distance(&locations[k]);
                let (t_lo, t_hi) = if opts.pruning && support.is_finite() {
                    let lo = r.partition_point(|&x| x <= dist - support);
                    let hi = r.partition_point(|&x| x < dist + support);
                    if lo >= hi {
                        continue;
                    }
                    (lo, hi - 1)
                } else {
                    (0, t_len - 1)
                };
                pairs.push(PairEntry {
                    i: i as u32,
                    k: k as u32,
                    dist,
                    t_lo: t_lo as u32,
                    t_hi: t_hi as u32,
                });
            }
        }

        // adjacency: per anchor, neighbors in ascending order
        let mut degree = vec![0usize; n];
        for p in &pairs {
            degree[p.i as usize] += 1;
            degree[p.k as usize] += 1;
        }
        let mut adj_offsets = vec![0usize; n + 1];
        for i in 0..n {
            adj_offsets[i + 1] = adj_offsets[i] + degree[i];
        }
        let mut cursor = adj_offsets[..n].to_vec();
        let mut adj = vec![
            AdjEntry {
                neighbor: 0,
                dist: 0.0,
                t_lo: 0,
                t_hi: 0
            };
            2 * pairs.len()
        ];
        for p in &pairs {
            for (at, other) in [(p.i as usize, p.k), (p.k as usize, p.i)] {
                adj[cursor[at]] = AdjEntry {
                    neighbor: other,
                    dist: p.dist,
                    t_lo: p.t_lo,
                    t_hi: p.t_hi,
                };
                cursor[at] += 1;
            }
        }

        let mut mass_local = vec![0.0; n * t_len];
        for anchor in 0..n {
            let row = &mut mass_local[anchor * t_len..(anchor + 1) * t_len];
            for e in &adj[adj_offsets[anchor]..adj_offsets[anchor + 1]] {
                for t in e.t_lo as usize..=e.t_hi as usize {
                    row[t] += kernel_value(e.dist - r[t], kernel.family, h);
                }
            }
        }
        let mut mass_global = vec![0.0; t_len];
        for p in &pairs {
            for t in p.t_lo as usize..=p.t_hi as usize {
                let w = kernel_value(p.dist - r[t], kernel.family, h);
                mass_global[t] += 2.0 * w;
            }
        }

        Ok(PairGeometry {
            grid: grid.clone(),
            family: kernel.family,
            h,
            n,
            pairs,
            adj_offsets,
            adj,
            mass_local,
            mass_global,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &RGrid {
        &self.grid
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    /// Denominator kernel sums over ordered pairs, per grid point.
    pub fn mass_global(&self) -> &[f64] {
        &self.mass_global
    }

    /// Denominator kernel sums for the pairs anchored at point `i`.
    pub fn local_mass(&self, i: usize) -> &[f64] {
        let t_len = self.grid.len();
        &self.mass_local[i * t_len..(i + 1) * t_len]
    }

    /// Numerator kernel sums for every anchor at once, written row-major
    /// (n x T) into `out`. Uses the local (anchored) test-function forms.
    pub fn local_numerators(
        &self,
        kind: StatKind,
        a: &[f64],
        b: &[f64],
        mu_l: f64,
        out: &mut [f64],
    ) {
        let t_len = self.grid.len();
        debug_assert_eq!(out.len(), self.n * t_len);
        out.fill(0.0);
        let r = self.grid.distances();
        for anchor in 0..self.n {
            let row = &mut out[anchor * t_len..(anchor + 1) * t_len];
            let a_anchor = a[anchor];
            for e in &self.adj[self.adj_offsets[anchor]..self.adj_offsets[anchor + 1]] {
                let c = eval_test_function(kind, true, a_anchor, b[e.neighbor as usize], 0.0, mu_l);
                for t in e.t_lo as usize..=e.t_hi as usize {
                    row[t] += c * kernel_value(e.dist - r[t], self.family, self.h);
                }
            }
        }
    }

    /// Numerator kernel sums of the global characteristic (length T),
    /// summed over ordered pairs with the global test-function forms.
    pub fn global_numerator(
        &self,
        kind: StatKind,
        a: &[f64],
        b: &[f64],
        mu_j: f64,
        mu_l: f64,
        out: &mut [f64],
    ) {
        let t_len = self.grid.len();
        debug_assert_eq!(out.len(), t_len);
        out.fill(0.0);
        let r = self.grid.distances();
        for p in &self.pairs {
            let (i, k) = (p.i as usize, p.k as usize);
            let c1 = eval_test_function(kind, false, a[i], b[k], mu_j, mu_l);
            let c2 = eval_test_function(kind, false, a[k], b[i], mu_j, mu_l);
            let c = c1 + c2;
            for t in p.t_lo as usize..=p.t_hi as usize {
                let w = kernel_value(p.dist - r[t], self.family, self.h);
                out[t] += c * w;
            }
        }
    }

    /// Numerator kernel sums for a single anchor (length T). Contribution
    /// order per anchor matches [`PairGeometry::local_numerators`] exactly,
    /// so the two routes agree bit for bit.
    pub fn single_local_numerator(
        &self,
        anchor: usize,
        kind: StatKind,
        a: &[f64],
        b: &[f64],
        mu_l: f64,
        out: &mut [f64],
    ) {
        let t_len = self.grid.len();
        debug_assert_eq!(out.len(), t_len);
        out.fill(0.0);
        let r = self.grid.distances();
        let a_anchor = a[anchor];
        for e in &self.adj[self.adj_offsets[anchor]..self.adj_offsets[anchor + 1]] {
            let c = eval_test_function(kind, true, a_anchor, b[e.neighbor as usize], 0.0, mu_l);
            for t in e.t_lo as usize..=e.t_hi as usize {
                out[t] += c * kernel_value(e.dist - r[t], self.family, self.h);
            }
        }
    }
}

/// Element-wise ratio with NaN at grid points without kernel mass.
pub fn ratio_track(numerator: &[f64], mass: &[f64]) -> Vec<f64> {
    numerator
        .iter()
        .zip(mass)
        .map(|(n, m)| if *m == 0.0 { f64::NAN } else { n / m })
        .collect()
}

/// Estimate a global summary characteristic as the kernel-weighted mean of
/// the test function over ordered pairs. Grid points with no kernel mass
/// carry NaN; normalization is attached separately by [`super::normalize`].
pub fn estimate_global(
    pattern: &MarkedPattern,
    spec: &StatisticSpec,
    grid: &RGrid,
    kernel: &KernelSpec,
) -> Result<SummaryCurve> {
    if !matches!(spec.scope, Scope::Global) {
        return Err(Error::InvalidParameter(
            "estimate_global needs a global-scoped spec".into(),
        ));
    }
    if grid.r_max() >= pattern.window().diameter() {
        return Err(Error::InvalidParameter(format!(
            "r_max {} reaches the window diameter {}",
            grid.r_max(),
            pattern.window().diameter()
        )));
    }
    let (marks, geom) = prepare(pattern, spec, grid, kernel)?;
    let moments = compute_moments(&marks)?;
    let a = marks.column(spec.j);
    let b = marks.column(spec.l);
    let mut numerator = vec![0.0; grid.len()];
    geom.global_numerator(
        spec.kind,
        &a,
        &b,
        moments.mean(spec.j),
        moments.mean(spec.l),
        &mut numerator,
    );
    let kernel_mass = geom.mass_global().to_vec();
    let unnormalized = ratio_track(&numerator, &kernel_mass);
    Ok(SummaryCurve {
        spec: *spec,
        grid: grid.clone(),
        numerator,
        kernel_mass,
        unnormalized,
        factor: None,
        normalized: None,
        normalizer_withheld: false,
    })
}

/// Estimate a local summary characteristic anchored at the spec's point.
pub fn estimate_local(
    pattern: &MarkedPattern,
    spec: &StatisticSpec,
    grid: &RGrid,
    kernel: &KernelSpec,
) -> Result<SummaryCurve> {
    let anchor = match spec.scope {
        Scope::Local(i) => i,
        Scope::Global => {
            return Err(Error::InvalidParameter(
                "estimate_local needs a local-scoped spec".into(),
            ))
        }
    };
    if anchor >= pattern.len() {
        return Err(Error::BadIndex {
            index: anchor,
            len: pattern.len(),
        });
    }
    let (marks, geom) = prepare(pattern, spec, grid, kernel)?;
    let moments = compute_moments(&marks)?;
    let a = marks.column(spec.j);
    let b = marks.column(spec.l);
    let mut numerator = vec![0.0; grid.len()];
    geom.single_local_numerator(anchor, spec.kind, &a, &b, moments.mean(spec.l), &mut numerator);
    let kernel_mass = geom.local_mass(anchor).to_vec();
    let unnormalized = ratio_track(&numerator, &kernel_mass);
    Ok(SummaryCurve {
        spec: *spec,
        grid: grid.clone(),
        numerator,
        kernel_mass,
        unnormalized,
        factor: None,
        normalized: None,
        normalizer_withheld: false,
    })
}

fn prepare(
    pattern: &MarkedPattern,
    spec: &StatisticSpec,
    grid: &RGrid,
    kernel: &KernelSpec,
) -> Result<(super::TransformedMarks, PairGeometry)> {
    if pattern.len() < 2 {
        return Err(Error::DegeneratePattern(pattern.len()));
    }
    let marks = transform_marks(pattern, spec.transform)?;
    spec.validate(marks.dim())?;
    let geom = PairGeometry::build(pattern, grid, kernel, &EstimatorOptions::default())?;
    Ok((marks, geom))
}
