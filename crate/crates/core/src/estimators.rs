//! Treatment-effect estimators for a partially enrolled experiment.
//!
//! All estimators read the experiment at an analysis day `t`: only units
//! with `arrival_day < t` contribute outcomes, while the full roster
//! supplies the population composition. The naive difference in means over
//! participants mixes the treatment effect with selection on arrival speed;
//! the weighted and model-based estimators below correct toward the
//! population by using per-stratum participation probabilities `pi(t|x)`
//! from a [`SurvivalFit`](crate::survival::SurvivalFit) or a per-stratum
//! outcome model with population weights.

use crate::columns::Columns;
use crate::error::{Error, Result};
use crate::roster::{CovariateProfile, PopulationRoster};
use crate::survival::{self, CoxOptions, SurvivalFit, SurvivalKind};

/// Participation probabilities below this cannot be inverted into stable
/// weights; weighting estimators refuse to run instead of amplifying a few
/// outcomes by a factor of a million or more.
pub const WEIGHT_FLOOR: f64 = 1e-6;

// ── Result types ────────────────────────────────────────────────────────

/// Which estimator produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DifferenceInMeans,
    Ipw,
    OutcomeRegression,
    DoublyRobust,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::DifferenceInMeans => "difference_in_means",
            Method::Ipw => "ipw",
            Method::OutcomeRegression => "outcome_regression",
            Method::DoublyRobust => "doubly_robust",
        };
        f.write_str(s)
    }
}

/// How inverse-participation weights are normalized within each arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide each arm's weighted outcome sum by the arm's participant
    /// count. Unbiased for the population effect under the participation
    /// model, at the cost of weights that need not sum to the count.
    #[default]
    ArmCount,
    /// Divide by the sum of weights in the arm (self-normalizing ratio
    /// form), trading a little bias for lower variance.
    WeightSum,
}

/// A point estimate of the average treatment effect at day `t`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EffectEstimate {
    pub method: Method,
    pub t: u32,
    pub value: f64,
    /// Participants in each arm at `t`.
    pub n_treated: usize,
    pub n_control: usize,
}

/// Per-stratum effect among participants at day `t`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StratumEffect {
    pub profile: CovariateProfile,
    /// Units of this stratum in the whole population.
    pub population: usize,
    pub n_treated: usize,
    pub n_control: usize,
    /// Treated-minus-control mean among participants; `None` until both
    /// arms have at least one participant in the stratum.
    pub effect: Option<f64>,
}

/// How the jackknife extrapolates away first-order enrollment bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JackknifeScheme {
    /// Re-estimate on one day less of enrollment (drop the newest arrival
    /// cohort) and extrapolate linearly in the window length:
    /// `t * est(t) - (t - 1) * est(t - 1)`. This cancels bias terms that
    /// decay like `1/t`, which is how composition bias behaves when each
    /// unit keeps a fixed per-day arrival hazard: the share still missing
    /// from a stratum shrinks roughly in proportion to `1/t`.
    #[default]
    WindowTruncation,
    /// Classic grouped jackknife: average every leave-one-cohort-out
    /// re-estimate and extrapolate in the cohort count:
    /// `d * est - (d - 1) * mean(leave-one-out)`. Note that deleting an
    /// early (large, fast-arriving) cohort moves the estimate more than
    /// deleting a late one, so on enrollment-biased data this average
    /// tends to widen rather than cancel the bias; it is provided for
    /// comparison and for data where cohorts are exchangeable.
    CohortAverage,
}

/// Jackknife output: the raw estimate together with its bias-corrected
/// counterpart.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JackknifeEstimate {
    pub method: Method,
    pub scheme: JackknifeScheme,
    pub t: u32,
    /// Estimate on the full data.
    pub raw: f64,
    /// Extrapolated estimate with the first-order enrollment bias removed.
    pub corrected: f64,
    /// Number of arrival-day cohorts among participants at `t`.
    pub cohorts: usize,
}

/// Per-stratum, per-arm outcome means fitted on the participants at `t`,
/// used by the regression and doubly robust estimators.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OutcomeModel {
    t: u32,
    strata: Vec<CovariateProfile>,
    /// `cells[s][arm]` = predicted mean outcome.
    cells: Vec<[f64; 2]>,
    /// Strata/arm cells that had no participants and fell back to the
    /// arm-wide participant mean.
    pub borrowed_cells: Vec<(CovariateProfile, u8)>,
}

impl OutcomeModel {
    /// Model-predicted mean outcome for a stratum and arm.
    pub fn predict(&self, x: &CovariateProfile, arm: u8) -> Result<f64> {
        if arm > 1 {
            return Err(Error::Validation(format!("arm must be 0 or 1, got {arm}")));
        }
        let s = self
            .strata
            .binary_search(x)
            .map_err(|_| Error::UnknownStratum(x.to_string()))?;
        Ok(self.cells[s][arm as usize])
    }

    pub fn fitted_at(&self) -> u32 {
        self.t
    }
}

// ── Estimator specification (for resampling plans) ──────────────────────

/// A closed description of one estimator, complete enough to re-run it on
/// resampled or cohort-deleted data: the bootstrap and jackknife both
/// re-execute everything inside, including the participation refit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EstimatorSpec {
    pub method: Method,
    /// Participation model used by weighting methods.
    pub survival: SurvivalKind,
    pub cox: CoxOptions,
    pub normalization: Normalization,
}

impl EstimatorSpec {
    pub fn new(method: Method) -> Self {
        EstimatorSpec {
            method,
            survival: SurvivalKind::KaplanMeier,
            cox: CoxOptions::default(),
            normalization: Normalization::default(),
        }
    }

    /// Runs the described estimator on a column view. `designs` carries the
    /// per-stratum Cox design rows (ignored for Kaplan–Meier fits) so that
    /// resamples do not recompute the encoding.
    pub(crate) fn evaluate(&self, cols: &Columns, designs: &[Vec<f64>], t: u32) -> Result<f64> {
        match self.method {
            Method::DifferenceInMeans => Ok(dim_kernel(cols, t)?.0),
            Method::Ipw => {
                let pi = self.pi_kernel(cols, designs, t)?;
                ipw_kernel(cols, t, &pi, self.normalization, WEIGHT_FLOOR)
            }
            Method::OutcomeRegression => {
                let model = model_kernel(cols, t)?;
                Ok(or_kernel(cols, &model))
            }
            Method::DoublyRobust => {
                let pi = self.pi_kernel(cols, designs, t)?;
                let model = model_kernel(cols, t)?;
                dr_kernel(cols, t, &pi, &model, self.normalization, WEIGHT_FLOOR)
            }
        }
    }

    fn pi_kernel(&self, cols: &Columns, designs: &[Vec<f64>], t: u32) -> Result<Vec<f64>> {
        match self.survival {
            SurvivalKind::KaplanMeier => Ok(survival::km_pi_at_day(cols, t)),
            SurvivalKind::Cox => survival::cox_pi_at_day(cols, designs, t, &self.cox),
        }
    }
}

/// Runs the estimator described by `spec` at day `t`.
pub fn estimate(roster: &PopulationRoster, t: u32, spec: &EstimatorSpec) -> Result<EffectEstimate> {
    roster.check_day(t)?;
    let cols = roster.columns();
    let designs = survival::design_columns_for(roster, spec.cox.encoding);
    let value = spec.evaluate(&cols, &designs, t)?;
    let (_, n_treated, n_control) = dim_kernel(&cols, t)?;
    Ok(EffectEstimate { method: spec.method, t, value, n_treated, n_control })
}

// ── Difference in means ─────────────────────────────────────────────────

/// Naive treated-minus-control mean over the participants at day `t`. This
/// is the estimator whose early-day readings carry enrollment bias.
pub fn dim(roster: &PopulationRoster, t: u32) -> Result<EffectEstimate> {
    roster.check_day(t)?;
    let (value, n_treated, n_control) = dim_kernel(&roster.columns(), t)?;
    Ok(EffectEstimate { method: Method::DifferenceInMeans, t, value, n_treated, n_control })
}

fn dim_kernel(cols: &Columns, t: u32) -> Result<(f64, usize, usize)> {
    let mut sum = [0.0f64; 2];
    let mut n = [0usize; 2];
    for i in 0..cols.n() {
        if cols.participates(i, t) {
            let arm = cols.arm[i].expect("participants always carry an arm") as usize;
            sum[arm] += cols.outcome[i].expect("participants always carry an outcome");
            n[arm] += 1;
        }
    }
    if n[0] == 0 || n[1] == 0 {
        return Err(Error::InsufficientData(format!(
            "difference in means needs both arms at day {t}: {} treated, {} control",
            n[1], n[0]
        )));
    }
    Ok((sum[1] / n[1] as f64 - sum[0] / n[0] as f64, n[1], n[0]))
}

// ── Per-stratum effects ─────────────────────────────────────────────────

/// Treated-minus-control participant means within each stratum at day `t`,
/// in sorted stratum order. Strata where either arm has not yet arrived
/// report `effect: None`.
pub fn hte(roster: &PopulationRoster, t: u32) -> Result<Vec<StratumEffect>> {
    roster.check_day(t)?;
    let cols = roster.columns();
    let cells = hte_kernel(&cols, t);
    Ok(roster
        .stratum_profiles()
        .iter()
        .zip(cells)
        .map(|(profile, c)| StratumEffect {
            profile: profile.clone(),
            population: c.population,
            n_treated: c.n[1],
            n_control: c.n[0],
            effect: c.effect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct StratumCell {
    pub population: usize,
    pub n: [usize; 2],
    pub sum: [f64; 2],
}

impl StratumCell {
    pub fn effect(&self) -> Option<f64> {
        if self.n[0] > 0 && self.n[1] > 0 {
            Some(self.sum[1] / self.n[1] as f64 - self.sum[0] / self.n[0] as f64)
        } else {
            None
        }
    }
}

pub(crate) fn hte_kernel(cols: &Columns, t: u32) -> Vec<StratumCell> {
    let mut cells = vec![StratumCell::default(); cols.n_strata];
    for i in 0..cols.n() {
        let cell = &mut cells[cols.stratum[i] as usize];
        cell.population += 1;
        if cols.participates(i, t) {
            let arm = cols.arm[i].expect("participants always carry an arm") as usize;
            cell.n[arm] += 1;
            cell.sum[arm] += cols.outcome[i].expect("participants always carry an outcome");
        }
    }
    cells
}

// ── Inverse participation weighting ─────────────────────────────────────

/// Inverse-participation-weighted effect at day `t`, normalizing each arm
/// by its participant count. `fit` must cover the roster's strata; for an
/// analysis that uses only day-`t` information, fit it censored at `t`.
pub fn ipw(roster: &PopulationRoster, t: u32, fit: &SurvivalFit) -> Result<EffectEstimate> {
    ipw_with(roster, t, fit, Normalization::ArmCount)
}

/// [`ipw`] with an explicit weight normalization.
pub fn ipw_with(
    roster: &PopulationRoster,
    t: u32,
    fit: &SurvivalFit,
    normalization: Normalization,
) -> Result<EffectEstimate> {
    roster.check_day(t)?;
    let pi = pi_from_fit(roster, t, fit)?;
    let cols = roster.columns();
    let value = ipw_kernel(&cols, t, &pi, normalization, WEIGHT_FLOOR)?;
    let (_, n_treated, n_control) = dim_kernel(&cols, t)?;
    Ok(EffectEstimate { method: Method::Ipw, t, value, n_treated, n_control })
}

fn pi_from_fit(roster: &PopulationRoster, t: u32, fit: &SurvivalFit) -> Result<Vec<f64>> {
    if fit.strata() != roster.stratum_profiles() {
        return Err(Error::Validation(
            "participation fit covers different strata than the roster".into(),
        ));
    }
    if t > fit.t_obs() {
        return Err(Error::DayOutOfRange { t, horizon: fit.t_obs() });
    }
    Ok((0..fit.strata().len()).map(|s| fit.pi_by_stratum(t, s)).collect())
}

pub(crate) fn ipw_kernel(
    cols: &Columns,
    t: u32,
    pi: &[f64],
    normalization: Normalization,
    floor: f64,
) -> Result<f64> {
    // Weights are only taken for strata that have participants, so a tiny
    // pi for a stratum that has not arrived yet is harmless.
    let mut starved: Vec<u32> = Vec::new();
    let mut weighted = [0.0f64; 2];
    let mut count = [0usize; 2];
    let mut weight_sum = [0.0f64; 2];
    for i in 0..cols.n() {
        if !cols.participates(i, t) {
            continue;
        }
        let s = cols.stratum[i] as usize;
        if pi[s] < floor {
            if !starved.contains(&(s as u32)) {
                starved.push(s as u32);
            }
            continue;
        }
        let arm = cols.arm[i].expect("participants always carry an arm") as usize;
        let w = 1.0 / pi[s];
        weighted[arm] += w * cols.outcome[i].expect("participants always carry an outcome");
        count[arm] += 1;
        weight_sum[arm] += w;
    }
    if !starved.is_empty() {
        starved.sort_unstable();
        let strata = starved
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::WeightFloor { floor, strata, t });
    }
    if count[0] == 0 || count[1] == 0 {
        return Err(Error::InsufficientData(format!(
            "weighting needs both arms at day {t}: {} treated, {} control",
            count[1], count[0]
        )));
    }
    let value = match normalization {
        Normalization::ArmCount => {
            weighted[1] / count[1] as f64 - weighted[0] / count[0] as f64
        }
        Normalization::WeightSum => weighted[1] / weight_sum[1] - weighted[0] / weight_sum[0],
    };
    Ok(value)
}

// ── Outcome regression ──────────────────────────────────────────────────

/// Fits the per-stratum, per-arm participant outcome means at day `t`.
/// Cells with no participants borrow the arm-wide participant mean and are
/// listed in `borrowed_cells`; an arm with no participants anywhere is an
/// error because nothing can stand in for it.
pub fn stratum_mean_model(roster: &PopulationRoster, t: u32) -> Result<OutcomeModel> {
    roster.check_day(t)?;
    let cols = roster.columns();
    let kernel = model_kernel(&cols, t)?;
    let strata = roster.stratum_profiles().to_vec();
    let borrowed_cells = kernel
        .borrowed
        .iter()
        .map(|&(s, arm)| (strata[s].clone(), arm))
        .collect();
    Ok(OutcomeModel { t, strata, cells: kernel.cells, borrowed_cells })
}

/// Population-averaged model effect: the mean of `g1(x) - g0(x)` over every
/// unit in the roster, participant or not.
pub fn outcome_regression(roster: &PopulationRoster, t: u32) -> Result<EffectEstimate> {
    roster.check_day(t)?;
    let cols = roster.columns();
    let model = model_kernel(&cols, t)?;
    let value = or_kernel(&cols, &model);
    let (_, n_treated, n_control) = dim_kernel(&cols, t)?;
    Ok(EffectEstimate { method: Method::OutcomeRegression, t, value, n_treated, n_control })
}

pub(crate) struct ModelCells {
    /// `cells[s][arm]` = predicted mean outcome for the stratum.
    pub cells: Vec<[f64; 2]>,
    /// `(stratum index, arm)` cells that borrowed the arm-wide mean.
    pub borrowed: Vec<(usize, u8)>,
}

pub(crate) fn model_kernel(cols: &Columns, t: u32) -> Result<ModelCells> {
    let hte = hte_kernel(cols, t);
    let mut arm_sum = [0.0f64; 2];
    let mut arm_n = [0usize; 2];
    for cell in &hte {
        for arm in 0..2 {
            arm_sum[arm] += cell.sum[arm];
            arm_n[arm] += cell.n[arm];
        }
    }
    for arm in 0..2u8 {
        if arm_n[arm as usize] == 0 {
            return Err(Error::ModelUndefined { stratum: "all".into(), arm });
        }
    }
    let arm_mean = [arm_sum[0] / arm_n[0] as f64, arm_sum[1] / arm_n[1] as f64];

    let mut cells = Vec::with_capacity(hte.len());
    let mut borrowed = Vec::new();
    for (s, cell) in hte.iter().enumerate() {
        let mut pred = [0.0f64; 2];
        for arm in 0..2 {
            if cell.n[arm] > 0 {
                pred[arm] = cell.sum[arm] / cell.n[arm] as f64;
            } else {
                pred[arm] = arm_mean[arm];
                borrowed.push((s, arm as u8));
            }
        }
        cells.push(pred);
    }
    Ok(ModelCells { cells, borrowed })
}

pub(crate) fn or_kernel(cols: &Columns, model: &ModelCells) -> f64 {
    let mut total = 0.0;
    for i in 0..cols.n() {
        let s = cols.stratum[i] as usize;
        total += model.cells[s][1] - model.cells[s][0];
    }
    total / cols.n() as f64
}

// ── Doubly robust ───────────────────────────────────────────────────────

/// Doubly robust effect at day `t`: the population-averaged model effect
/// plus inverse-participation-weighted residuals. Correct when either the
/// participation fit or the outcome model is right.
pub fn doubly_robust(
    roster: &PopulationRoster,
    t: u32,
    fit: &SurvivalFit,
) -> Result<EffectEstimate> {
    roster.check_day(t)?;
    let pi = pi_from_fit(roster, t, fit)?;
    let cols = roster.columns();
    let model = model_kernel(&cols, t)?;
    let value = dr_kernel(&cols, t, &pi, &model, Normalization::ArmCount, WEIGHT_FLOOR)?;
    let (_, n_treated, n_control) = dim_kernel(&cols, t)?;
    Ok(EffectEstimate { method: Method::DoublyRobust, t, value, n_treated, n_control })
}

pub(crate) fn dr_kernel(
    cols: &Columns,
    t: u32,
    pi: &[f64],
    model: &ModelCells,
    normalization: Normalization,
    floor: f64,
) -> Result<f64> {
    let mut starved: Vec<u32> = Vec::new();
    let mut weighted = [0.0f64; 2];
    let mut count = [0usize; 2];
    let mut weight_sum = [0.0f64; 2];
    for i in 0..cols.n() {
        if !cols.participates(i, t) {
            continue;
        }
        let s = cols.stratum[i] as usize;
        if pi[s] < floor {
            if !starved.contains(&(s as u32)) {
                starved.push(s as u32);
            }
            continue;
        }
        let arm = cols.arm[i].expect("participants always carry an arm") as usize;
        let residual =
            cols.outcome[i].expect("participants always carry an outcome") - model.cells[s][arm];
        weighted[arm] += residual / pi[s];
        count[arm] += 1;
        weight_sum[arm] += 1.0 / pi[s];
    }
    if !starved.is_empty() {
        starved.sort_unstable();
        let strata = starved
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::WeightFloor { floor, strata, t });
    }
    if count[0] == 0 || count[1] == 0 {
        return Err(Error::InsufficientData(format!(
            "weighting needs both arms at day {t}: {} treated, {} control",
            count[1], count[0]
        )));
    }
    let residual_term = match normalization {
        Normalization::ArmCount => {
            weighted[1] / count[1] as f64 - weighted[0] / count[0] as f64
        }
        Normalization::WeightSum => weighted[1] / weight_sum[1] - weighted[0] / weight_sum[0],
    };
    Ok(or_kernel(cols, model) + residual_term)
}

// ── Jackknife bias correction ───────────────────────────────────────────

/// Jackknife bias correction at day `t`.
///
/// Enrollment-driven composition bias shrinks as the observation window
/// grows; both schemes estimate the first-order term by re-running the
/// complete estimator — participation refit included — on reduced data
/// and extrapolating it away. `WindowTruncation` re-estimates on the
/// window that ends one day earlier; `CohortAverage` averages the classic
/// leave-one-cohort-out replicates (non-participants stay in every
/// replicate).
pub fn jackknife(
    roster: &PopulationRoster,
    t: u32,
    spec: &EstimatorSpec,
    scheme: JackknifeScheme,
) -> Result<JackknifeEstimate> {
    roster.check_day(t)?;
    let cols = roster.columns();
    let designs = survival::design_columns_for(roster, spec.cox.encoding);

    let mut cohort_days: Vec<u32> = (0..cols.n())
        .filter(|&i| cols.participates(i, t))
        .map(|i| cols.arrival[i].expect("participants always carry an arrival day"))
        .collect();
    cohort_days.sort_unstable();
    cohort_days.dedup();
    if cohort_days.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "jackknife needs at least two arrival-day cohorts at day {t}, found {}",
            cohort_days.len()
        )));
    }

    let raw = spec.evaluate(&cols, &designs, t)?;
    let corrected = match scheme {
        JackknifeScheme::WindowTruncation => {
            let shorter = spec.evaluate(&cols, &designs, t - 1)?;
            f64::from(t) * raw - f64::from(t - 1) * shorter
        }
        JackknifeScheme::CohortAverage => {
            let d = cohort_days.len() as f64;
            let mut replicate_sum = 0.0;
            for &day in &cohort_days {
                let reduced = cols.without_arrival_day(day);
                replicate_sum += spec.evaluate(&reduced, &designs, t)?;
            }
            d * raw - (d - 1.0) * (replicate_sum / d)
        }
    };
    Ok(JackknifeEstimate {
        method: spec.method,
        scheme,
        t,
        raw,
        corrected,
        cohorts: cohort_days.len(),
    })
}

// ── Tests ───────────────────────────────────────────────────────────────
