//! Day-by-day analysis over an enrollment window, and head-to-head
//! evaluation of stopping policies on suites of synthetic experiments.
//!
//! [`analyze`] walks every analysis day of a roster, labels it with its
//! enrollment stage, and emits the stage-appropriate estimates: the naive
//! difference in means is tracked throughout for reference, the weighted
//! estimate with a bootstrap interval is reported while enrollment is
//! overlapping but not yet representative, and the plain difference in
//! means graduates to a bootstrap interval once the participation envelope
//! clears the representativeness threshold. Validity diagnostics (sample
//! ratio checks and pre-experiment A/A comparisons) run alongside.
//!
//! [`evaluate`] generates a suite of synthetic experiments — some with a
//! real effect, some without — and scores stopping policies by when they
//! stop and whether the test they run at that moment gets the call right.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::columns::derive_seed;
use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorSpec, Method, Normalization};
use crate::inference::{self, Correction, ValidityReport};
use crate::roster::PopulationRoster;
use crate::stages::{stage_series, Stage, StageConfig, StageReport, StageSummary};
use crate::survival::{CoxOptions, SurvivalKind};
use crate::synth::{self, HteOrientation, SynthConfig};

// ── Analysis options ────────────────────────────────────────────────────

/// Everything [`analyze`] needs besides the roster itself. All fields have
/// defaults, so a sparse JSON config (or `AnalysisOptions::default()`)
/// works out of the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    /// Participation model behind the envelope and the weighted estimates.
    pub survival: SurvivalKind,
    pub cox: CoxOptions,
    /// Stage thresholds (overlap and representativeness).
    pub stage: StageConfig,
    /// Bootstrap replicates behind every confidence interval.
    pub bootstrap_replicates: usize,
    /// Two-sided test level; intervals are reported at `1 - alpha`.
    pub alpha: f64,
    /// Master seed for the bootstrap streams. Two runs with equal options
    /// and data produce byte-identical output.
    pub seed: u64,
    /// Pre-experiment metrics to include in the A/A comparison; `None`
    /// means every metric the roster declares.
    pub aa_metrics: Option<Vec<String>>,
    /// Weight normalization for the weighted estimator.
    pub normalization: Normalization,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            survival: SurvivalKind::KaplanMeier,
            cox: CoxOptions::default(),
            stage: StageConfig::default(),
            bootstrap_replicates: 1000,
            alpha: 0.05,
            seed: 0,
            aa_metrics: None,
            normalization: Normalization::default(),
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.bootstrap_replicates < 2 {
            return Err(Error::Config(format!(
                "bootstrap_replicates must be at least 2, got {}",
                self.bootstrap_replicates
            )));
        }
        Ok(())
    }
}

// ── Per-day output rows ─────────────────────────────────────────────────

/// One estimate at one analysis day. Interval bounds are present only when
/// the day's stage licenses an interval for this method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub t: u32,
    pub method: Method,
    pub point: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n_treated: usize,
    pub n_control: usize,
}

/// A day/phase the analysis could not fill in. The walk keeps going; gaps
/// record what is missing and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisGap {
    pub t: u32,
    /// Which computation failed, e.g. `"ipw"` or `"difference_in_means_ci"`.
    pub phase: String,
    pub message: String,
}

/// Complete output of one [`analyze`] run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    /// The options the run used, echoed for reproducibility.
    pub options: AnalysisOptions,
    /// Envelope series and stage crossings.
    pub stages: StageReport,
    /// Per-day estimates, ascending in `t`, difference in means first
    /// within a day.
    pub estimates: Vec<EstimateRow>,
    /// Sample-ratio and A/A diagnostics over the full window.
    pub validity: ValidityReport,
    /// Days/phases that produced no estimate, with the reason.
    pub gaps: Vec<AnalysisGap>,
}

/// Compact digest of an [`AnalysisOutput`] for one-page reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub horizon: u32,
    pub stages: StageSummary,
    /// The last emitted row of each method, in first-appearance order.
    pub final_estimates: Vec<EstimateRow>,
    pub gap_count: usize,
    /// Smallest sample-ratio p-value across days, if any day was checked.
    pub srm_min_p: Option<f64>,
    /// A/A cells still flagged by the false-discovery-rate correction at
    /// `alpha`.
    pub aa_flagged: usize,
    pub alpha: f64,
}

impl AnalysisOutput {
    pub fn summary(&self) -> AnalysisSummary {
        let mut final_estimates: Vec<EstimateRow> = Vec::new();
        for row in &self.estimates {
            match final_estimates.iter_mut().find(|r| r.method == row.method) {
                Some(slot) => *slot = row.clone(),
                None => final_estimates.push(row.clone()),
            }
        }
        let srm_min_p = self
            .validity
            .srm
            .iter()
            .map(|c| c.p)
            .min_by(f64::total_cmp);
        let aa_flagged = self
            .validity
            .flags(Correction::BenjaminiHochberg, self.options.alpha)
            .map(|flags| flags.iter().filter(|&&f| f).count())
            .unwrap_or(0);
        AnalysisSummary {
            horizon: self.stages.series.last().map(|&(t, _)| t).unwrap_or(0),
            stages: self.stages.summary(),
            final_estimates,
            gap_count: self.gaps.len(),
            srm_min_p,
            aa_flagged,
            alpha: self.options.alpha,
        }
    }
}

/// Writes estimate rows as CSV with header
/// `t,method,point,ci_lo,ci_hi,n_treat,n_ctrl`; absent interval bounds
/// stay empty.
pub fn write_estimates_csv(rows: &[EstimateRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "t,method,point,ci_lo,ci_hi,n_treat,n_ctrl")?;
    for row in rows {
        let lo = row.ci_lo.map(|v| v.to_string()).unwrap_or_default();
        let hi = row.ci_hi.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            row.t, row.method, row.point, lo, hi, row.n_treated, row.n_control
        )?;
    }
    Ok(())
}

// ── Day-by-day analysis ─────────────────────────────────────────────────

/// Walks days `1..=horizon`: fits the participation model censored at each
/// day, labels the day's stage, and emits what the stage supports. The
/// difference in means is computed every day; while the stage is
/// overlapping the weighted estimate is added with a bootstrap interval;
/// once representative, the difference in means itself carries the
/// interval and the weighted estimate is retired. Per-day estimator
/// failures become [`AnalysisGap`]s instead of aborting the walk.
pub fn analyze(roster: &PopulationRoster, options: &AnalysisOptions) -> Result<AnalysisOutput> {
    options.validate()?;
    let horizon = roster.horizon();
    let stages = stage_series(roster, horizon, options.survival, &options.cox, &options.stage)?;
    let level = 1.0 - options.alpha;
    let dim_spec = EstimatorSpec::new(Method::DifferenceInMeans);
    let ipw_spec = EstimatorSpec {
        method: Method::Ipw,
        survival: options.survival,
        cox: options.cox.clone(),
        normalization: options.normalization,
    };

    let mut estimates = Vec::new();
    let mut gaps = Vec::new();
    let gap = |gaps: &mut Vec<AnalysisGap>, t: u32, phase: &str, err: Error| {
        gaps.push(AnalysisGap {
            t,
            phase: phase.to_string(),
            message: err.to_string(),
        });
    };

    for t in 1..=horizon {
        let stage = stages.stage_at(t);
        let day_seed = derive_seed(options.seed, u64::from(t));

        match estimators::dim(roster, t) {
            Ok(est) => {
                let (ci_lo, ci_hi) = if stage == Stage::Representative {
                    match inference::bootstrap_ci(
                        roster,
                        t,
                        &dim_spec,
                        options.bootstrap_replicates,
                        level,
                        derive_seed(day_seed, 0),
                    ) {
                        Ok((lo, hi)) => (Some(lo), Some(hi)),
                        Err(err) => {
                            gap(&mut gaps, t, "difference_in_means_ci", err);
                            (None, None)
                        }
                    }
                } else {
                    (None, None)
                };
                estimates.push(EstimateRow {
                    t,
                    method: Method::DifferenceInMeans,
                    point: est.value,
                    ci_lo,
                    ci_hi,
                    n_treated: est.n_treated,
                    n_control: est.n_control,
                });
            }
            Err(err) => gap(&mut gaps, t, "difference_in_means", err),
        }

        if stage == Stage::Overlapping {
            match estimators::estimate(roster, t, &ipw_spec) {
                Ok(est) => {
                    let (ci_lo, ci_hi) = match inference::bootstrap_ci(
                        roster,
                        t,
                        &ipw_spec,
                        options.bootstrap_replicates,
                        level,
                        derive_seed(day_seed, 1),
                    ) {
                        Ok((lo, hi)) => (Some(lo), Some(hi)),
                        Err(err) => {
                            gap(&mut gaps, t, "ipw_ci", err);
                            (None, None)
                        }
                    };
                    estimates.push(EstimateRow {
                        t,
                        method: Method::Ipw,
                        point: est.value,
                        ci_lo,
                        ci_hi,
                        n_treated: est.n_treated,
                        n_control: est.n_control,
                    });
                }
                Err(err) => gap(&mut gaps, t, "ipw", err),
            }
        }
    }

    let metrics = match &options.aa_metrics {
        Some(names) => names.clone(),
        None => roster.pre_metric_names().to_vec(),
    };
    let alphas = if (options.alpha - 0.01).abs() < 1e-12 {
        vec![options.alpha]
    } else {
        vec![options.alpha, 0.01]
    };
    let validity = inference::validity_report(roster, &metrics, 1..=horizon, 1.0, &alphas)?;

    Ok(AnalysisOutput {
        options: options.clone(),
        stages,
        estimates,
        validity,
        gaps,
    })
}

// ── Power-analysis sample size ──────────────────────────────────────────

/// Classic two-sided sample-size rule `ceil(16 sigma_sq / delta^2)` for 80%
/// power at the 5% level: the number of units **per arm** needed to detect
/// a mean difference of `delta` when each arm's outcome variance is
/// `sigma_sq`. Doubling the detectable effect cuts the requirement to a
/// quarter.
pub fn power_sample_size(sigma_sq: f64, delta: f64) -> Result<usize> {
    if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
        return Err(Error::Config(format!(
            "sigma_sq must be positive and finite, got {sigma_sq}"
        )));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Config(format!(
            "delta must be positive and finite, got {delta}"
        )));
    }
    Ok((16.0 * sigma_sq / (delta * delta)).ceil() as usize)
}

// ── Stopping policies ───────────────────────────────────────────────────

/// When to stop an ongoing experiment and which test to run at that point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoppingPolicy {
    /// Stop on the first day the cumulative participant count reaches the
    /// power-analysis requirement, then run a two-sided t-test on the
    /// participants seen so far — the fixed-sample convention that ignores
    /// who has arrived.
    PowerBaseline {
        /// Anticipated per-arm outcome variance fed to the power rule.
        sigma_sq: f64,
        /// Smallest effect the experimenter wants to detect.
        delta: f64,
        /// When true (the default convention) the `16 sigma_sq / delta^2`
        /// count is per arm, so the stop waits for twice that in total.
        #[serde(default = "default_true")]
        per_arm: bool,
    },
    /// Stop on the first day the participation envelope clears the overlap
    /// threshold, then test with a bootstrap interval around the weighted
    /// estimate.
    StopAtOverlap { stage: StageConfig },
    /// Stop on the first day the envelope clears the representativeness
    /// threshold, then run the plain t-test — the composition bias is
    /// bounded below the tolerance by construction.
    StopAtRepresentative { stage: StageConfig },
}

fn default_true() -> bool {
    true
}

impl StoppingPolicy {
    /// Stable label used in reports: `power_baseline`, `stop_at_overlap` or
    /// `stop_at_representative`.
    pub fn label(&self) -> &'static str {
        match self {
            StoppingPolicy::PowerBaseline { .. } => "power_baseline",
            StoppingPolicy::StopAtOverlap { .. } => "stop_at_overlap",
            StoppingPolicy::StopAtRepresentative { .. } => "stop_at_representative",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StoppingPolicy::PowerBaseline { sigma_sq, delta, .. } => {
                power_sample_size(*sigma_sq, *delta).map(|_| ())
            }
            StoppingPolicy::StopAtOverlap { stage }
            | StoppingPolicy::StopAtRepresentative { stage } => stage.validate(),
        }
    }
}

/// First day (within the horizon) on which `policy` would stop on this
/// roster, or `None` if it never triggers. Stage policies read the
/// crossing from `stages`, which must have been fitted on the same roster;
/// its thresholds are overridden by the policy's own.
fn stopping_day(
    policy: &StoppingPolicy,
    roster: &PopulationRoster,
    stages: Option<&StageReport>,
) -> Result<Option<u32>> {
    match policy {
        StoppingPolicy::PowerBaseline {
            sigma_sq,
            delta,
            per_arm,
        } => {
            let per_arm_n = power_sample_size(*sigma_sq, *delta)?;
            let required = if *per_arm { 2 * per_arm_n } else { per_arm_n };
            for t in 1..=roster.horizon() {
                if roster.participants_at(t)?.len() >= required {
                    return Ok(Some(t));
                }
            }
            Ok(None)
        }
        StoppingPolicy::StopAtOverlap { stage } => {
            let base = stages.ok_or_else(|| {
                Error::Config("stage policy evaluated without a stage report".into())
            })?;
            let report =
                StageReport::from_series(stage.clone(), base.survival, base.series.clone())?;
            Ok(report.t_overlap)
        }
        StoppingPolicy::StopAtRepresentative { stage } => {
            let base = stages.ok_or_else(|| {
                Error::Config("stage policy evaluated without a stage report".into())
            })?;
            let report =
                StageReport::from_series(stage.clone(), base.survival, base.series.clone())?;
            Ok(report.t_representative)
        }
    }
}

// ── Experiment suites ───────────────────────────────────────────────────

/// A batch of synthetic experiments for policy evaluation: `null_experiments`
/// copies of `base` (which must carry no average effect) followed by
/// `effective_experiments` copies with the treatment effect switched on.
/// Every experiment gets its own generation seed derived from the master
/// seed passed to [`evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub null_experiments: usize,
    pub effective_experiments: usize,
    /// Template for every experiment. Its `treatment_shift` must be zero:
    /// the nulls use it verbatim, so a built-in shift would make them
    /// effective and break the ground-truth labels.
    pub base: SynthConfig,
    /// Average effect given to the effective experiments.
    pub effect_size: f64,
    /// Stratum-effect spread for the effective experiments (the nulls keep
    /// the spread configured in `base`).
    pub effective_amplitude: f64,
    /// Which strata carry the larger effects in the effective experiments.
    pub effective_orientation: HteOrientation,
    /// Participation model the policies fit on each experiment.
    pub survival: SurvivalKind,
    pub cox: CoxOptions,
    /// Bootstrap replicates for the overlap policy's interval test.
    pub bootstrap_replicates: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            null_experiments: 80,
            effective_experiments: 20,
            base: SynthConfig::default(),
            effect_size: 0.08,
            effective_amplitude: 1.0,
            effective_orientation: HteOrientation::Falling,
            survival: SurvivalKind::KaplanMeier,
            cox: CoxOptions::default(),
            bootstrap_replicates: 400,
        }
    }
}

impl SuiteConfig {
    pub fn total_experiments(&self) -> usize {
        self.null_experiments + self.effective_experiments
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_experiments() == 0 {
            return Err(Error::Config("suite has no experiments".into()));
        }
        if self.base.treatment_shift != 0.0 {
            return Err(Error::Config(format!(
                "base config must be a true null (treatment_shift 0), got {}",
                self.base.treatment_shift
            )));
        }
        if self.effective_experiments > 0 && !(self.effect_size != 0.0 && self.effect_size.is_finite())
        {
            return Err(Error::Config(format!(
                "effect_size must be nonzero and finite, got {}",
                self.effect_size
            )));
        }
        if self.bootstrap_replicates < 2 {
            return Err(Error::Config(format!(
                "bootstrap_replicates must be at least 2, got {}",
                self.bootstrap_replicates
            )));
        }
        self.base.validate()
    }

    /// Generator config for experiment `index`: nulls come first, then the
    /// effective ones. The seed is derived from `master_seed` and the
    /// index, so suites are reproducible experiment by experiment.
    pub fn experiment_config(&self, index: usize, master_seed: u64) -> Result<SynthConfig> {
        if index >= self.total_experiments() {
            return Err(Error::Config(format!(
                "experiment index {index} out of range for a suite of {}",
                self.total_experiments()
            )));
        }
        let mut config = self.base.clone();
        config.seed = derive_seed(master_seed, 2 * index as u64);
        if index >= self.null_experiments {
            config.treatment_shift = self.effect_size;
            config.hte_amplitude = self.effective_amplitude;
            config.hte_orientation = self.effective_orientation;
        }
        Ok(config)
    }
}

// ── Policy evaluation ───────────────────────────────────────────────────

/// Confusion-matrix tally for one policy over a suite. Experiments where
/// the policy never triggered within the horizon are excluded from the
/// rates and counted separately, so the five counts always sum to the
/// suite size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub policy: StoppingPolicy,
    pub true_positives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Experiments where the policy never triggered within the horizon.
    pub no_decision: usize,
    /// `fp / (fp + tn)`; absent when no decided experiment was null.
    pub fpr: Option<f64>,
    /// `tp / (tp + fn)`; absent when no decided experiment was effective.
    pub tpr: Option<f64>,
    /// Median stop day over decided experiments.
    pub median_stop_day: Option<f64>,
}

/// Full result of one [`evaluate`] run, ready for JSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub suite: SuiteConfig,
    pub alpha: f64,
    pub seed: u64,
    pub n_experiments: usize,
    /// How experiments are labeled: an experiment counts as effective
    /// exactly when its generator's true average effect is nonzero.
    pub ground_truth_rule: String,
    pub policies: Vec<PolicyOutcome>,
}

#[derive(Clone, Copy, PartialEq)]
enum Verdict {
    TruePositive,
    TrueNegative,
    FalsePositive,
    FalseNegative,
    NoDecision,
}

fn classify(significant: bool, effective: bool) -> Verdict {
    match (significant, effective) {
        (true, true) => Verdict::TruePositive,
        (true, false) => Verdict::FalsePositive,
        (false, true) => Verdict::FalseNegative,
        (false, false) => Verdict::TrueNegative,
    }
}

/// Significance call for `policy` stopped at day `stop`: stage policies in
/// the overlap window test whether the bootstrap interval around the
/// weighted estimate excludes zero; the baseline and the representative
/// policy run Welch's t-test on the participants' outcomes.
fn decide(
    policy: &StoppingPolicy,
    roster: &PopulationRoster,
    stop: u32,
    alpha: f64,
    suite: &SuiteConfig,
    boot_seed: u64,
) -> Result<bool> {
    match policy {
        StoppingPolicy::StopAtOverlap { .. } => {
            let spec = EstimatorSpec {
                method: Method::Ipw,
                survival: suite.survival,
                cox: suite.cox.clone(),
                normalization: Normalization::default(),
            };
            let (lo, hi) = inference::bootstrap_ci(
                roster,
                stop,
                &spec,
                suite.bootstrap_replicates,
                1.0 - alpha,
                boot_seed,
            )?;
            Ok(lo > 0.0 || hi < 0.0)
        }
        StoppingPolicy::PowerBaseline { .. } | StoppingPolicy::StopAtRepresentative { .. } => {
            let mut treated = Vec::new();
            let mut control = Vec::new();
            for unit in roster.participants_at(stop)? {
                let (Some(arm), Some(outcome)) = (unit.arm, unit.outcome) else {
                    continue;
                };
                if arm == 1 {
                    treated.push(outcome);
                } else {
                    control.push(outcome);
                }
            }
            let test = inference::t_test(&treated, &control)?;
            Ok(test.p <= alpha)
        }
    }
}

/// Runs every policy on every experiment of the suite and tallies the
/// calls against the generator's ground truth. Per-experiment generation
/// and test seeds derive from `seed`, and experiments run in parallel with
/// a deterministic tally, so the whole evaluation is reproducible.
pub fn evaluate(
    policies: &[StoppingPolicy],
    suite: &SuiteConfig,
    alpha: f64,
    seed: u64,
) -> Result<EvaluationSummary> {
    if policies.is_empty() {
        return Err(Error::Config("no stopping policies to evaluate".into()));
    }
    for policy in policies {
        policy.validate()?;
    }
    suite.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }

    let needs_stages = policies.iter().any(|p| {
        matches!(
            p,
            StoppingPolicy::StopAtOverlap { .. } | StoppingPolicy::StopAtRepresentative { .. }
        )
    });
    let n = suite.total_experiments();

    let per_experiment: Vec<Vec<(Verdict, Option<u32>)>> = (0..n)
        .into_par_iter()
        .map(|index| -> Result<Vec<(Verdict, Option<u32>)>> {
            let config = suite.experiment_config(index, seed)?;
            let (roster, truth) = synth::generate(&config)?;
            let effective = truth.true_tau != 0.0;
            let stages = if needs_stages {
                Some(stage_series(
                    &roster,
                    roster.horizon(),
                    suite.survival,
                    &suite.cox,
                    &StageConfig::default(),
                )?)
            } else {
                None
            };
            let test_seed = derive_seed(seed, 2 * index as u64 + 1);
            policies
                .iter()
                .enumerate()
                .map(|(p, policy)| {
                    let stop = stopping_day(policy, &roster, stages.as_ref())?;
                    match stop {
                        None => Ok((Verdict::NoDecision, None)),
                        Some(t) => {
                            let boot_seed = derive_seed(test_seed, p as u64);
                            let significant = decide(policy, &roster, t, alpha, suite, boot_seed)?;
                            Ok((classify(significant, effective), Some(t)))
                        }
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let outcomes = policies
        .iter()
        .enumerate()
        .map(|(p, policy)| {
            let mut tally = BTreeMap::from([
                ("tp", 0usize),
                ("tn", 0),
                ("fp", 0),
                ("fn", 0),
                ("none", 0),
            ]);
            let mut stop_days = Vec::new();
            for row in &per_experiment {
                let (verdict, stop) = row[p];
                let key = match verdict {
                    Verdict::TruePositive => "tp",
                    Verdict::TrueNegative => "tn",
                    Verdict::FalsePositive => "fp",
                    Verdict::FalseNegative => "fn",
                    Verdict::NoDecision => "none",
                };
                *tally.get_mut(key).unwrap() += 1;
                if let Some(t) = stop {
                    stop_days.push(t);
                }
            }
            let rate = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
            let (tp, tn, fp, fneg) = (tally["tp"], tally["tn"], tally["fp"], tally["fn"]);
            stop_days.sort_unstable();
            let median_stop_day = match stop_days.len() {
                0 => None,
                len if len % 2 == 1 => Some(f64::from(stop_days[len / 2])),
                len => Some(f64::from(stop_days[len / 2 - 1] + stop_days[len / 2]) / 2.0),
            };
            PolicyOutcome {
                policy: policy.clone(),
                true_positives: tp,
                true_negatives: tn,
                false_positives: fp,
                false_negatives: fneg,
                no_decision: tally["none"],
                fpr: rate(fp, fp + tn),
                tpr: rate(tp, tp + fneg),
                median_stop_day,
            }
        })
        .collect();

    Ok(EvaluationSummary {
        suite: suite.clone(),
        alpha,
        seed,
        n_experiments: n,
        ground_truth_rule: "effective iff the generator's true average effect is nonzero".into(),
        policies: outcomes,
    })
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roster::{RosterSchema, UnitRecord};

    fn unit(
        schema: &RosterSchema,
        id: &str,
        x: u16,
        arrival: Option<u32>,
        arm: u8,
        y: f64,
    ) -> UnitRecord {
        UnitRecord {
            unit_id: id.into(),
            profile: schema.profile(&[x]).unwrap(),
            arrival_day: arrival,
            arm: arrival.map(|_| arm),
            outcome: arrival.map(|_| y),
            pre_metrics: None,
        }
    }

    /// Everyone arrives on day 0, so participation is total from the first
    /// analysis day onward.
    fn day_zero_roster(horizon: u32) -> PopulationRoster {
        let schema = RosterSchema::new(vec![("x", 1u16)], horizon);
        let units = (0..16)
            .map(|i| {
                let arm = (i % 2) as u8;
                let y = if arm == 1 { 1.3 + 0.01 * i as f64 } else { 1.0 + 0.01 * i as f64 };
                unit(&schema, &format!("u{i}"), 0, Some(0), arm, y)
            })
            .collect();
        PopulationRoster::new(schema, units, vec![]).unwrap()
    }

    /// Three arrival waves (days 0, 2, 4) of a single stratum, balanced
    /// arms within each wave: participation is 0.3 on days 1-2, 0.7 on
    /// days 3-4 and 1.0 afterwards.
    fn three_wave_roster() -> PopulationRoster {
        let schema = RosterSchema::new(vec![("x", 1u16)], 6);
        let mut units = Vec::new();
        let waves = [(0u32, 6usize), (2, 8), (4, 6)];
        let mut id = 0;
        for (day, count) in waves {
            for k in 0..count {
                let arm = (k % 2) as u8;
                let y = if arm == 1 { 2.0 + 0.1 * k as f64 } else { 1.0 + 0.1 * k as f64 };
                units.push(unit(&schema, &format!("u{id}"), 0, Some(day), arm, y));
                id += 1;
            }
        }
        PopulationRoster::new(schema, units, vec![]).unwrap()
    }

    fn small_options(stage: StageConfig) -> AnalysisOptions {
        AnalysisOptions {
            stage,
            bootstrap_replicates: 60,
            seed: 11,
            ..AnalysisOptions::default()
        }
    }

    #[test]
    fn power_sample_size_matches_hand_values() {
        assert_eq!(power_sample_size(1.0, 0.1).unwrap(), 1600, "sigma_sq 1, delta 0.1");
        assert_eq!(power_sample_size(0.25, 0.5).unwrap(), 16, "sigma_sq 0.25, delta 0.5");
        // Doubling the detectable effect quarters the requirement.
        assert_eq!(
            power_sample_size(1.0, 0.1).unwrap(),
            4 * power_sample_size(1.0, 0.2).unwrap()
        );
        assert!(power_sample_size(0.0, 0.1).is_err(), "zero variance must be rejected");
        assert!(power_sample_size(1.0, 0.0).is_err(), "zero effect must be rejected");
        assert!(power_sample_size(1.0, -0.2).is_err(), "negative effect must be rejected");
    }

    #[test]
    fn day_zero_arrivals_are_representative_immediately_and_skip_ipw() {
        let roster = day_zero_roster(5);
        let out = analyze(&roster, &small_options(StageConfig::default())).unwrap();

        assert_eq!(out.stages.t_representative, Some(1), "full participation from day 1");
        assert!(out.gaps.is_empty(), "gaps: {:?}", out.gaps);
        assert_eq!(out.estimates.len(), 5, "one row per day");
        for row in &out.estimates {
            assert_eq!(row.method, Method::DifferenceInMeans, "day {} method", row.t);
            assert!(
                row.ci_lo.is_some() && row.ci_hi.is_some(),
                "representative day {} must carry an interval",
                row.t
            );
            assert!(
                row.ci_lo.unwrap() <= row.point && row.point <= row.ci_hi.unwrap(),
                "interval [{:?}, {:?}] must bracket the point {}",
                row.ci_lo,
                row.ci_hi,
                row.point
            );
            assert_eq!((row.n_treated, row.n_control), (8, 8));
        }
    }

    #[test]
    fn analysis_emits_ipw_exactly_in_the_overlap_window() {
        let roster = three_wave_roster();
        let stage = StageConfig {
            eta_overlap: 0.25,
            eta_representative: Some(0.65),
            ..StageConfig::default()
        };
        let out = analyze(&roster, &small_options(stage)).unwrap();

        assert_eq!(out.stages.t_overlap, Some(1), "0.3 clears 0.25 on day 1");
        assert_eq!(out.stages.t_representative, Some(3), "0.7 clears 0.65 on day 3");
        assert!(out.gaps.is_empty(), "gaps: {:?}", out.gaps);

        for t in 1..=6 {
            let day: Vec<_> = out.estimates.iter().filter(|r| r.t == t).collect();
            let dim = day
                .iter()
                .find(|r| r.method == Method::DifferenceInMeans)
                .unwrap_or_else(|| panic!("day {t} must have a difference-in-means row"));
            let ipw = day.iter().find(|r| r.method == Method::Ipw);
            match out.stages.stage_at(t) {
                Stage::Unstable => unreachable!("no unstable day in this fixture"),
                Stage::Overlapping => {
                    assert!(dim.ci_lo.is_none(), "day {t}: naive row carries no interval yet");
                    let ipw = ipw.unwrap_or_else(|| panic!("overlap day {t} must add a weighted row"));
                    assert!(ipw.ci_lo.is_some() && ipw.ci_hi.is_some(), "day {t} weighted interval");
                }
                Stage::Representative => {
                    assert!(ipw.is_none(), "day {t}: weighted row retired once representative");
                    assert!(dim.ci_lo.is_some(), "day {t}: naive row graduates to an interval");
                }
            }
        }
        let (n_dim, n_ipw) = (
            out.estimates.iter().filter(|r| r.method == Method::DifferenceInMeans).count(),
            out.estimates.iter().filter(|r| r.method == Method::Ipw).count(),
        );
        assert_eq!((n_dim, n_ipw), (6, 2), "six naive rows, weighted only on days 1-2");
    }

    #[test]
    fn stage_labels_in_the_report_match_the_emitted_envelope() {
        let roster = three_wave_roster();
        let stage = StageConfig {
            eta_overlap: 0.25,
            eta_representative: Some(0.65),
            ..StageConfig::default()
        };
        let out = analyze(&roster, &small_options(stage.clone())).unwrap();
        // Recompute each day's stage from the exported envelope series and
        // the configured thresholds alone.
        let eta_r = 0.65;
        let mut crossed_o = false;
        let mut crossed_r = false;
        for &(t, pi) in &out.stages.series {
            crossed_o = crossed_o || pi > stage.eta_overlap;
            crossed_r = crossed_r || pi > eta_r;
            let expected = if crossed_r {
                Stage::Representative
            } else if crossed_o {
                Stage::Overlapping
            } else {
                Stage::Unstable
            };
            assert_eq!(out.stages.stage_at(t), expected, "day {t} label vs envelope {pi}");
        }
    }

    #[test]
    fn analysis_records_gaps_and_keeps_walking() {
        // Days 1-2 have only treated participants, so the naive estimate
        // is undefined there; a control wave lands on day 2.
        let schema = RosterSchema::new(vec![("x", 1u16)], 4);
        let units = vec![
            unit(&schema, "t0", 0, Some(0), 1, 2.0),
            unit(&schema, "t1", 0, Some(0), 1, 2.2),
            unit(&schema, "c0", 0, Some(2), 0, 1.0),
            unit(&schema, "c1", 0, Some(2), 0, 1.2),
        ];
        let roster = PopulationRoster::new(schema, units, vec![]).unwrap();
        // Thresholds high enough that no day is overlapping or better:
        // only the naive walk runs.
        let stage = StageConfig {
            eta_overlap: 0.95,
            eta_representative: Some(0.99),
            ..StageConfig::default()
        };
        let out = analyze(&roster, &small_options(stage)).unwrap();

        assert_eq!(out.gaps.len(), 2, "days 1 and 2 cannot produce an estimate");
        for (gap, expected_t) in out.gaps.iter().zip([1u32, 2]) {
            assert_eq!(gap.t, expected_t);
            assert_eq!(gap.phase, "difference_in_means");
            assert!(
                gap.message.contains("arm"),
                "message should name the missing arm, got {:?}",
                gap.message
            );
        }
        let days: Vec<u32> = out.estimates.iter().map(|r| r.t).collect();
        assert_eq!(days, vec![3, 4], "the walk resumes once both arms participate");
    }

    #[test]
    fn analysis_covers_declared_pre_metrics_across_all_days() {
        let schema = RosterSchema::new(vec![("x", 1u16)], 3);
        let units = (0..12)
            .map(|i| UnitRecord {
                unit_id: format!("u{i}"),
                profile: schema.profile(&[0]).unwrap(),
                arrival_day: Some(0),
                arm: Some((i % 2) as u8),
                outcome: Some(1.0 + 0.05 * i as f64),
                pre_metrics: Some(vec![0.5 + 0.01 * i as f64, 2.0 - 0.01 * i as f64]),
            })
            .collect();
        let roster =
            PopulationRoster::new(schema, units, vec!["sessions".into(), "spend".into()]).unwrap();
        let out = analyze(&roster, &small_options(StageConfig::default())).unwrap();

        assert_eq!(out.validity.aa.len(), 2 * 3, "two metrics over three days");
        assert_eq!(out.validity.srm.len(), 3, "one ratio check per day");
        assert_eq!(out.validity.alpha_levels, vec![0.05, 0.01]);
        assert_eq!(out.options.alpha, 0.05);
    }

    #[test]
    fn estimates_csv_has_the_expected_header_and_blank_intervals() {
        let rows = vec![
            EstimateRow {
                t: 1,
                method: Method::DifferenceInMeans,
                point: 0.25,
                ci_lo: None,
                ci_hi: None,
                n_treated: 10,
                n_control: 12,
            },
            EstimateRow {
                t: 2,
                method: Method::Ipw,
                point: 0.125,
                ci_lo: Some(-0.05),
                ci_hi: Some(0.3),
                n_treated: 11,
                n_control: 13,
            },
        ];
        let mut buf = Vec::new();
        write_estimates_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,method,point,ci_lo,ci_hi,n_treat,n_ctrl");
        assert_eq!(lines[1], "1,difference_in_means,0.25,,,10,12");
        assert_eq!(lines[2], "2,ipw,0.125,-0.05,0.3,11,13");
    }

    #[test]
    fn summary_digests_crossings_final_rows_and_gap_count() {
        let roster = three_wave_roster();
        let stage = StageConfig {
            eta_overlap: 0.25,
            eta_representative: Some(0.65),
            ..StageConfig::default()
        };
        let out = analyze(&roster, &small_options(stage)).unwrap();
        let summary = out.summary();

        assert_eq!(summary.horizon, 6);
        assert_eq!(summary.stages.t_overlap, Some(1));
        assert_eq!(summary.stages.t_representative, Some(3));
        assert_eq!(summary.gap_count, 0);
        assert_eq!(summary.final_estimates.len(), 2, "one final row per method seen");
        let final_dim = &summary.final_estimates[0];
        assert_eq!((final_dim.method, final_dim.t), (Method::DifferenceInMeans, 6));
        let final_ipw = &summary.final_estimates[1];
        assert_eq!((final_ipw.method, final_ipw.t), (Method::Ipw, 2));
        assert!(summary.srm_min_p.is_some_and(|p| p > 0.05), "balanced arms");
    }

    #[test]
    fn analysis_output_round_trips_through_json() {
        let roster = three_wave_roster();
        let out = analyze(&roster, &small_options(StageConfig::default())).unwrap();
        let json = serde_json::to_string(&out).unwrap();
        let back: AnalysisOutput = serde_json::from_str(&json).unwrap();
        assert_eq!(back, out);
    }

    #[test]
    fn identical_runs_produce_identical_output() {
        let roster = three_wave_roster();
        let options = small_options(StageConfig {
            eta_overlap: 0.25,
            eta_representative: Some(0.65),
            ..StageConfig::default()
        });
        let a = analyze(&roster, &options).unwrap();
        let b = analyze(&roster, &options).unwrap();
        assert_eq!(a, b, "analysis must be deterministic in (data, options)");
    }

    #[test]
    fn options_reject_bad_alpha_and_replicates() {
        let roster = day_zero_roster(3);
        for alpha in [0.0, 1.0, -0.1] {
            let options = AnalysisOptions { alpha, ..AnalysisOptions::default() };
            assert!(analyze(&roster, &options).is_err(), "alpha {alpha} must be rejected");
        }
        let options = AnalysisOptions { bootstrap_replicates: 1, ..AnalysisOptions::default() };
        assert!(analyze(&roster, &options).is_err(), "one replicate is not a bootstrap");
    }

    // ── Policy evaluation ───────────────────────────────────────────────

    /// Small suite that still arranges all three stages within the horizon.
    fn small_suite(nulls: usize, effectives: usize) -> SuiteConfig {
        SuiteConfig {
            null_experiments: nulls,
            effective_experiments: effectives,
            base: SynthConfig {
                n_units: 240,
                treat_count: 120,
                horizon: 16,
                ..SynthConfig::default()
            },
            effect_size: 0.6,
            bootstrap_replicates: 80,
            ..SuiteConfig::default()
        }
    }

    fn all_policies() -> Vec<StoppingPolicy> {
        vec![
            StoppingPolicy::PowerBaseline { sigma_sq: 0.05, delta: 0.2, per_arm: true },
            StoppingPolicy::StopAtOverlap { stage: StageConfig::default() },
            StoppingPolicy::StopAtRepresentative {
                stage: StageConfig {
                    eta_representative: Some(0.6),
                    ..StageConfig::default()
                },
            },
        ]
    }

    #[test]
    fn policy_labels_round_trip_through_json() {
        for policy in all_policies() {
            let json = serde_json::to_string(&policy).unwrap();
            assert!(
                json.contains(&format!("\"kind\":\"{}\"", policy.label())),
                "tag should match label, got {json}"
            );
            let back: StoppingPolicy = serde_json::from_str(&json).unwrap();
            assert_eq!(back, policy);
        }
        // The per-arm convention is the default when the field is omitted.
        let sparse: StoppingPolicy =
            serde_json::from_str(r#"{"kind":"power_baseline","sigma_sq":0.05,"delta":0.2}"#)
                .unwrap();
        assert!(matches!(sparse, StoppingPolicy::PowerBaseline { per_arm: true, .. }));
    }

    #[test]
    fn baseline_stop_day_never_moves_later_as_the_target_effect_grows() {
        let (roster, _) = synth::generate(&SynthConfig {
            n_units: 300,
            treat_count: 150,
            horizon: 15,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut last = u32::MAX;
        for delta in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let policy = StoppingPolicy::PowerBaseline { sigma_sq: 0.04, delta, per_arm: true };
            let stop = stopping_day(&policy, &roster, None).unwrap();
            // A policy that never triggers is "later" than any real day.
            let day = stop.unwrap_or(u32::MAX);
            assert!(
                day <= last,
                "delta {delta} stops on {day:?}, later than the smaller effect's {last:?}"
            );
            last = day;
        }
    }

    #[test]
    fn baseline_counts_participants_not_horizon_days() {
        // 4 of 6 units participate by day 2; a per-arm requirement of 2
        // (total 4) stops there, and an unreachable one never stops.
        let schema = RosterSchema::new(vec![("x", 1u16)], 5);
        let units = vec![
            unit(&schema, "a", 0, Some(0), 1, 1.0),
            unit(&schema, "b", 0, Some(0), 0, 1.0),
            unit(&schema, "c", 0, Some(1), 1, 1.0),
            unit(&schema, "d", 0, Some(1), 0, 1.0),
            unit(&schema, "e", 0, None, 0, 0.0),
            unit(&schema, "f", 0, None, 0, 0.0),
        ];
        let roster = PopulationRoster::new(schema, units, vec![]).unwrap();
        // 16 * 0.25 / 1.0 = 4 per arm with per_arm=false -> 4 total.
        let policy = StoppingPolicy::PowerBaseline { sigma_sq: 0.25, delta: 1.0, per_arm: false };
        assert_eq!(stopping_day(&policy, &roster, None).unwrap(), Some(2));
        let policy = StoppingPolicy::PowerBaseline { sigma_sq: 0.25, delta: 1.0, per_arm: true };
        assert_eq!(
            stopping_day(&policy, &roster, None).unwrap(),
            None,
            "8 participants never accrue"
        );
    }

    #[test]
    fn evaluation_counts_sum_to_the_suite_size_and_rerun_identically() {
        let suite = small_suite(6, 2);
        let policies = all_policies();
        let summary = evaluate(&policies, &suite, 0.05, 33).unwrap();

        assert_eq!(summary.n_experiments, 8);
        assert_eq!(summary.policies.len(), 3);
        for outcome in &summary.policies {
            let total = outcome.true_positives
                + outcome.true_negatives
                + outcome.false_positives
                + outcome.false_negatives
                + outcome.no_decision;
            assert_eq!(total, 8, "{} tally must cover every experiment", outcome.policy.label());
            for rate in [outcome.fpr, outcome.tpr].into_iter().flatten() {
                assert!((0.0..=1.0).contains(&rate), "rate {rate} out of range");
            }
        }
        let again = evaluate(&policies, &suite, 0.05, 33).unwrap();
        assert_eq!(again, summary, "evaluation must be deterministic in the seed");
    }

    #[test]
    fn all_null_suite_reports_no_tpr_and_modest_fpr() {
        // Amplitude zero makes the arms identically distributed, so every
        // policy's test is exact and false positives stay near alpha.
        let mut suite = small_suite(24, 0);
        suite.base.hte_amplitude = 0.0;
        let policies = all_policies();
        let summary = evaluate(&policies, &suite, 0.05, 7).unwrap();

        for outcome in &summary.policies {
            assert_eq!(outcome.tpr, None, "{}: no effective experiments", outcome.policy.label());
            assert_eq!(outcome.true_positives + outcome.false_negatives, 0);
            let fpr = outcome.fpr.expect("every policy decides on this suite");
            assert!(
                fpr <= 0.25,
                "{}: false positive rate {fpr} too far above the 0.05 target",
                outcome.policy.label()
            );
        }
    }

    #[test]
    fn effective_experiments_get_the_configured_shift_and_nulls_do_not() {
        let suite = small_suite(3, 2);
        for index in 0..5 {
            let config = suite.experiment_config(index, 9).unwrap();
            if index < 3 {
                assert_eq!(config.treatment_shift, 0.0, "experiment {index} is a null");
            } else {
                assert_eq!(config.treatment_shift, 0.6, "experiment {index} is effective");
                assert_eq!(config.hte_orientation, HteOrientation::Falling);
            }
        }
        let a = suite.experiment_config(0, 9).unwrap();
        let b = suite.experiment_config(1, 9).unwrap();
        assert_ne!(a.seed, b.seed, "experiments must draw distinct seeds");
        assert!(suite.experiment_config(5, 9).is_err(), "index past the suite must fail");
    }

    #[test]
    fn suite_validation_rejects_shifted_nulls_and_empty_suites() {
        let mut suite = small_suite(2, 1);
        suite.base.treatment_shift = 0.1;
        assert!(suite.validate().is_err(), "null template with a built-in effect");

        let mut suite = small_suite(2, 1);
        suite.effect_size = 0.0;
        assert!(suite.validate().is_err(), "effective experiments with no effect");

        let suite = small_suite(0, 0);
        assert!(suite.validate().is_err(), "empty suite");

        assert!(small_suite(2, 1).validate().is_ok());
    }

    #[test]
    fn evaluation_median_stop_day_orders_the_policies() {
        // With generous data the baseline crosses its sample-size bar well
        // before the envelope clears the representativeness threshold.
        let suite = small_suite(4, 0);
        let policies = vec![
            StoppingPolicy::PowerBaseline { sigma_sq: 0.01, delta: 0.2, per_arm: true },
            StoppingPolicy::StopAtRepresentative {
                stage: StageConfig { eta_representative: Some(0.6), ..StageConfig::default() },
            },
        ];
        let summary = evaluate(&policies, &suite, 0.05, 21).unwrap();
        let baseline = summary.policies[0].median_stop_day.expect("baseline stops");
        let representative = summary.policies[1].median_stop_day.expect("stage policy stops");
        assert!(
            baseline < representative,
            "baseline median {baseline} should precede representative median {representative}"
        );
    }
}
