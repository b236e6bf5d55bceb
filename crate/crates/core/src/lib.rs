//! Second-order mark summary characteristics for spatial point patterns
//! whose marks are compositions.
//!
//! The crate provides:
//!
//! * [`coda`] — compositional geometry: closure, geometric mean, and the
//!   alr/clr/ilr log-ratio transforms with their inverses.
//! * [`pattern`] — marked point patterns, a homogeneous Poisson generator,
//!   Dirichlet mark sampling, and the simulation scenario builders.
//! * [`summary`] — kernel-smoothed estimators of the mark correlation
//!   function, mark variogram, and Shimatani's I, in global and local
//!   (per-point) form, with their normalizing factors.
//! * [`envelope`] — random-labeling permutation ensembles and global
//!   envelope tests based on the extreme rank length (ERL) ordering.
//! * [`simstudy`] — a parallel, checkpointed scenario runner that measures
//!   type-I error and detection power at configurable scale.
//! * [`rng`] — splittable RNG streams keyed by task indices, so results are
//!   reproducible under any parallel schedule.

pub mod coda;
pub mod envelope;
mod error;
pub mod pattern;
pub mod rng;
pub mod simstudy;
pub mod summary;

pub use error::{Error, Result};
