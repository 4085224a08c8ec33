//! Enrollment-stage classification.
//!
//! The lower participation envelope `pi_inf(t)` — the smallest fitted
//! participation probability across the population's strata — summarizes
//! how far enrollment has progressed for the *worst-covered* stratum. Two
//! thresholds turn it into stages:
//!
//! - below `eta_overlap` the day is **unstable**: some stratum is barely
//!   observed and even reweighted estimates stand on thin support;
//! - past `eta_overlap` the day is **overlapping**: every stratum has
//!   meaningful representation and weighting becomes trustworthy;
//! - past `eta_representative` the day is **representative**: the
//!   worst-case gap between the naive and reweighted estimates (the bias
//!   bound below) is within the configured tolerance, so the naive readout
//!   itself is acceptable.
//!
//! `eta_representative` may be given directly or derived from a bias
//! tolerance `rho_fraction` (acceptable bias as a fraction of the effect
//! scale) and an effect-heterogeneity constant `C` via
//! `eta_r = C / (rho_fraction + C)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators;
use crate::roster::PopulationRoster;
use crate::survival::{fit_cox, fit_km, CoxOptions, SurvivalFit, SurvivalKind};

// ── Configuration ───────────────────────────────────────────────────────

/// Thresholds and constants for stage classification.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct StageConfig {
    /// Envelope threshold that ends the unstable stage.
    pub eta_overlap: f64,
    /// Acceptable bias, expressed as a fraction of the effect scale.
    pub rho_fraction: f64,
    /// Effect-heterogeneity constant used to derive the representative
    /// threshold; 2 is a robust default when no historical estimate
    /// exists.
    pub c_constant: f64,
    /// Explicit representative threshold; when absent it is derived as
    /// `c_constant / (rho_fraction + c_constant)`.
    pub eta_representative: Option<f64>,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            eta_overlap: 0.5,
            rho_fraction: 0.2,
            c_constant: 2.0,
            eta_representative: None,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_overlap > 0.0 && self.eta_overlap < 1.0) {
            return Err(Error::Config(format!(
                "eta_overlap must lie in (0, 1), got {}",
                self.eta_overlap
            )));
        }
        if let Some(eta_r) = self.eta_representative {
            if !(eta_r > 0.0 && eta_r < 1.0) {
                return Err(Error::Config(format!(
                    "eta_representative must lie in (0, 1), got {eta_r}"
                )));
            }
        }
        if !(self.c_constant > 0.0 && self.c_constant.is_finite()) {
            return Err(Error::Config(format!(
                "c_constant must be positive and finite, got {}",
                self.c_constant
            )));
        }
        if !(self.rho_fraction > 0.0 && self.rho_fraction.is_finite()) {
            return Err(Error::Config(format!(
                "rho_fraction must be positive and finite, got {}",
                self.rho_fraction
            )));
        }
        Ok(())
    }

    /// The threshold that ends the overlapping stage: the configured
    /// `eta_representative` if present, otherwise derived from `c_constant`
    /// and `rho_fraction`.
    pub fn representative_threshold(&self) -> f64 {
        self.eta_representative
            .unwrap_or_else(|| self.c_constant / (self.rho_fraction + self.c_constant))
    }
}

/// `eta_r = c / (rho_fraction + c)`: the envelope level at which the worst
/// case naive-vs-reweighted gap drops below the bias tolerance. Strictly
/// increasing in `c`, strictly decreasing in `rho_fraction`.
pub fn representativeness_threshold(c: f64, rho_fraction: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("c must be positive and finite, got {c}")));
    }
    if !(rho_fraction > 0.0 && rho_fraction.is_finite()) {
        return Err(Error::Config(format!(
            "rho_fraction must be positive and finite, got {rho_fraction}"
        )));
    }
    Ok(c / (rho_fraction + c))
}

// ── Stage report ────────────────────────────────────────────────────────

/// Enrollment stage of one analysis day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Unstable,
    Overlapping,
    Representative,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Unstable => "unstable",
            Stage::Overlapping => "overlapping",
            Stage::Representative => "representative",
        };
        f.write_str(s)
    }
}

/// The per-day envelope series with its threshold crossings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageReport {
    pub config: StageConfig,
    pub survival: SurvivalKind,
    /// `(day, pi_inf(day))` for each analysis day, ascending.
    pub series: Vec<(u32, f64)>,
    /// First day whose envelope exceeds `eta_overlap`, if any.
    pub t_overlap: Option<u32>,
    /// First day whose envelope exceeds the representative threshold.
    pub t_representative: Option<u32>,
}

/// Compact summary of the stage analysis for JSON reports.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageSummary {
    pub eta_overlap: f64,
    pub eta_representative: f64,
    pub c_constant: f64,
    pub t_overlap: Option<u32>,
    pub t_representative: Option<u32>,
}

impl StageReport {
    /// Builds a report from an already-computed envelope series (days must
    /// be ascending). Crossings are first days strictly above threshold.
    pub fn from_series(
        config: StageConfig,
        survival: SurvivalKind,
        series: Vec<(u32, f64)>,
    ) -> Result<StageReport> {
        config.validate()?;
        if series.is_empty() {
            return Err(Error::Validation("stage series must not be empty".into()));
        }
        if series.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Validation("stage series days must be ascending".into()));
        }
        let t_overlap = first_crossing(&series, config.eta_overlap);
        let t_representative = first_crossing(&series, config.representative_threshold());
        Ok(StageReport { config, survival, series, t_overlap, t_representative })
    }

    /// Stage of day `t`. Representative takes precedence over overlapping
    /// so the classification stays coherent even when the thresholds are
    /// configured out of order.
    pub fn stage_at(&self, t: u32) -> Stage {
        if matches!(self.t_representative, Some(tr) if t >= tr) {
            Stage::Representative
        } else if matches!(self.t_overlap, Some(to) if t >= to) {
            Stage::Overlapping
        } else {
            Stage::Unstable
        }
    }

    pub fn summary(&self) -> StageSummary {
        StageSummary {
            eta_overlap: self.config.eta_overlap,
            eta_representative: self.config.representative_threshold(),
            c_constant: self.config.c_constant,
            t_overlap: self.t_overlap,
            t_representative: self.t_representative,
        }
    }

    /// Writes the series as CSV rows `t,pi_inf,stage`.
    pub fn export_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "t,pi_inf,stage")?;
        for &(t, pi) in &self.series {
            writeln!(w, "{},{},{}", t, pi, self.stage_at(t))?;
        }
        Ok(())
    }
}

/// Smallest listed day whose value strictly exceeds `threshold`; `None`
/// when the series never crosses within its span.
pub fn first_crossing(series: &[(u32, f64)], threshold: f64) -> Option<u32> {
    series.iter().find(|&&(_, v)| v > threshold).map(|&(t, _)| t)
}

// ── Envelope ────────────────────────────────────────────────────────────

/// Lower participation envelope at day `t`: the minimum of `pi(t|x)` over
/// the population's strata. Strata with no observed participant at `t`
/// contribute 0 regardless of the fitted curve — overlap requires every
/// stratum to actually appear in the data, and a smooth model fit cannot
/// substitute for presence.
pub fn pi_inf(fit: &SurvivalFit, t: u32) -> Result<f64> {
    if t > fit.t_obs() {
        return Err(Error::DayOutOfRange { t, horizon: fit.t_obs() });
    }
    (0..fit.strata().len())
        .map(|s| {
            if fit.arrived_by_stratum(t, s) == 0 {
                0.0
            } else {
                fit.pi_by_stratum(t, s)
            }
        })
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
        .ok_or_else(|| Error::Validation("fit covers no strata".into()))
}

/// Computes the envelope series by refitting the participation model at
/// every day `1..=t_obs` (each day sees only its own past, as an online
/// analysis would) and classifies the stages.
///
/// Early days where a Cox fit cannot be produced (no arrivals yet, a
/// diverging likelihood, or non-convergence) report an envelope of 0: the
/// day cannot certify overlap, which is exactly what 0 encodes. Structural
/// failures such as rank deficiency abort, because they would affect every
/// day.
pub fn stage_series(
    roster: &PopulationRoster,
    t_obs: u32,
    survival: SurvivalKind,
    cox: &CoxOptions,
    config: &StageConfig,
) -> Result<StageReport> {
    config.validate()?;
    roster.check_day(t_obs)?;
    let series = (1..=t_obs)
        .into_par_iter()
        .map(|t| {
            let fit = match survival {
                SurvivalKind::KaplanMeier => fit_km(roster, t),
                SurvivalKind::Cox => fit_cox(roster, t, cox),
            };
            match fit {
                Ok(fit) => Ok((t, pi_inf(&fit, t)?)),
                Err(
                    Error::InsufficientData(_)
                    | Error::MonotoneLikelihood { .. }
                    | Error::NonConvergence { .. },
                ) => Ok((t, 0.0)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    StageReport::from_series(config.clone(), survival, series)
}

// ── Heterogeneity constant and bias bound ───────────────────────────────

/// Participant-share-weighted mean of |per-stratum effect| at day `t`.
/// Strata where an arm is still missing cannot report an effect and
/// contribute zero while keeping their share in the weights.
fn weighted_abs_hte(roster: &PopulationRoster, t: u32) -> Result<f64> {
    let effects = estimators::hte(roster, t)?;
    let total: usize = effects.iter().map(|e| e.n_treated + e.n_control).sum();
    if total == 0 {
        return Err(Error::InsufficientData(format!("no participants at day {t}")));
    }
    Ok(effects
        .iter()
        .filter_map(|e| {
            e.effect
                .map(|h| (e.n_treated + e.n_control) as f64 / total as f64 * h.abs())
        })
        .sum())
}

/// Estimates the effect-heterogeneity constant at day `t`:
/// `2 * (participant-share-weighted mean |HTE|) / |difference in means|`.
pub fn estimate_c(roster: &PopulationRoster, t: u32) -> Result<f64> {
    let dim = estimators::dim(roster, t)?.value;
    let weighted = weighted_abs_hte(roster, t)?;
    if dim.abs() < 1e-12 {
        return Err(Error::UnstableDenominator { value: dim });
    }
    Ok(2.0 * weighted / dim.abs())
}

/// Worst-case gap between the naive difference in means and the
/// participation-reweighted estimate at day `t`:
/// `2 * (1/pi_inf(t) - 1) * weighted mean |HTE|`.
///
/// A zero envelope leaves the bound undefined — the day is still unstable.
pub fn bias_bound(roster: &PopulationRoster, fit: &SurvivalFit, t: u32) -> Result<f64> {
    let envelope = pi_inf(fit, t)?;
    if envelope <= 0.0 {
        return Err(Error::ZeroEnvelope { t });
    }
    let weighted = weighted_abs_hte(roster, t)?;
    Ok(2.0 * (1.0 / envelope - 1.0) * weighted)
}

/// Scores a declared covariate as a stratification candidate at day `t`:
/// the largest per-level |effect| under univariate stratification by that
/// covariate, relative to the overall |difference in means|. Covariates
/// that modify the effect score well above 1; independent ones score
/// near 1.
pub fn covariate_selection_score(
    roster: &PopulationRoster,
    t: u32,
    covariate: &str,
) -> Result<f64> {
    if !roster.schema().covariates.iter().any(|c| c.name == covariate) {
        return Err(Error::Validation(format!(
            "covariate {covariate:?} is not declared in the roster schema"
        )));
    }
    let dim = estimators::dim(roster, t)?.value;
    if dim.abs() < 1e-12 {
        return Err(Error::UnstableDenominator { value: dim });
    }

    // Univariate stratification: group participants by this covariate's
    // level, marginalizing over the others.
    let mut sums: std::collections::BTreeMap<u16, ([f64; 2], [usize; 2])> =
        std::collections::BTreeMap::new();
    for unit in roster.units() {
        if !unit.participates_at(t) {
            continue;
        }
        let level = unit
            .profile
            .level_of(covariate)
            .expect("declared covariates appear in every profile");
        let arm = unit.arm.expect("participants always carry an arm") as usize;
        let entry = sums.entry(level).or_default();
        entry.0[arm] += unit.outcome.expect("participants always carry an outcome");
        entry.1[arm] += 1;
    }

    let mut best: Option<f64> = None;
    for (sum, n) in sums.values() {
        if n[0] > 0 && n[1] > 0 {
            let effect = sum[1] / n[1] as f64 - sum[0] / n[0] as f64;
            let ratio = effect.abs() / dim.abs();
            best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
        }
    }
    best.ok_or_else(|| {
        Error::InsufficientData(format!(
            "no level of {covariate:?} has participants in both arms at day {t}"
        ))
    })
}

// ── Tests ───────────────────────────────────────────────────────────────
