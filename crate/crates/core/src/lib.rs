//! Stage-aware analysis of experiments that enroll units over time.
//!
//! When an experiment reads out while enrollment is still ongoing, the units
//! observed so far are usually not a representative draw from the target
//! population: fast arrivers are over-represented, and a difference-in-means
//! read at day `t` mixes the treatment effect with that selection effect.
//! This crate models per-stratum participation over time, classifies each
//! analysis day into enrollment stages (unstable / overlapping /
//! representative), and provides estimators and validity checks appropriate
//! to each stage:
//!
//! - [`roster`] — population data model and CSV interchange format;
//! - [`survival`] — Kaplan–Meier and Cox participation fits over calendar
//!   days, plus predictive evaluation of the fitted curves;
//! - [`stages`] — the lower participation envelope, threshold crossings, and
//!   the worst-case gap between naive and reweighted estimates;
//! - [`estimators`] — difference-in-means, per-stratum effects, inverse
//!   participation weighting, outcome regression, doubly robust combination,
//!   and jackknife bias corrections;
//! - [`inference`] — percentile bootstrap intervals, Welch t-tests, sample
//!   ratio mismatch checks, and multiple-testing corrections;
//! - [`synth`] — a synthetic experiment generator with known ground truth;
//! - [`harness`] — the day-by-day analysis pipeline and policy evaluation
//!   used by the command line interface.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod inference;
pub mod roster;
pub mod stages;
pub mod survival;
pub mod synth;

mod columns;

pub use error::{Error, Result};
pub use estimators::{hte, EffectEstimate, EstimatorSpec, Method};
pub use harness::{analyze, evaluate, AnalysisOptions, AnalysisOutput, StoppingPolicy, SuiteConfig};
pub use roster::{CovariateProfile, CovariateSpec, PopulationRoster, RosterSchema, UnitRecord};
pub use stages::{Stage, StageConfig, StageReport};
pub use survival::{SurvivalFit, SurvivalKind};
pub use synth::SynthConfig;
