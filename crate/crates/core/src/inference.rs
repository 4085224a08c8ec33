//! Statistical inference and experiment-validity checks.
//!
//! Four tools that the day-by-day analysis loop leans on: percentile
//! bootstrap intervals for any estimator in this crate, Welch two-sample
//! t-tests, a sample-ratio-mismatch chi-square, and multiple-testing
//! corrections (Bonferroni, Benjamini–Hochberg, Benjamini–Yekutieli) that
//! tie the per-day A/A comparisons together into a [`ValidityReport`].

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::ops::RangeInclusive;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::columns::derive_seed;
use crate::error::{Error, Result};
use crate::estimators::EstimatorSpec;
use crate::roster::PopulationRoster;
use crate::survival;

// ── Bootstrap confidence intervals ──────────────────────────────────────

/// Percentile bootstrap interval for an estimator at analysis day `t`.
///
/// Each replicate resamples the participants at `t` with replacement
/// (non-participants are kept as-is, so participation fits see the same
/// population denominator), re-runs the full estimator — including any
/// survival re-fit it needs — and the interval is the pair of empirical
/// percentiles at `(1 − level)/2` and `1 − (1 − level)/2`.
///
/// Replicate seeds derive from `(seed, replicate index)`, so results are
/// identical regardless of how the replicates are scheduled across
/// threads. Individual replicates are allowed to fail (a resample can
/// starve an arm or a stratum); more than 10% failures is an error
/// carrying the counts and the first failure message.
pub fn bootstrap_ci(
    roster: &PopulationRoster,
    t: u32,
    spec: &EstimatorSpec,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    roster.check_day(t)?;
    if replicates < 2 {
        return Err(Error::Config(format!(
            "bootstrap needs at least 2 replicates, got {replicates}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level must be inside (0, 1), got {level}"
        )));
    }
    let cols = roster.columns();
    let designs = survival::design_columns_for(roster, spec.cox.encoding);
    let participants = cols.participant_indices(t);
    if participants.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no participants at day {t} to resample"
        )));
    }

    let outcomes: Vec<Result<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
            let sampled: Vec<usize> = (0..participants.len())
                .map(|_| participants[rng.random_range(0..participants.len())])
                .collect();
            let resampled = cols.resampled(t, &sampled);
            spec.evaluate(&resampled, &designs, t)
        })
        .collect();

    let mut values = Vec::with_capacity(replicates);
    let mut failed = 0usize;
    let mut first_failure = String::new();
    for outcome in outcomes {
        match outcome {
            Ok(v) => values.push(v),
            Err(e) => {
                if failed == 0 {
                    first_failure = e.to_string();
                }
                failed += 1;
            }
        }
    }
    if failed * 10 > replicates {
        return Err(Error::BootstrapFailures { failed, total: replicates, first_failure });
    }

    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((percentile(&values, tail), percentile(&values, 1.0 - tail)))
}

/// Nearest-rank percentile of an ascending-sorted, non-empty slice: the
/// smallest value whose rank covers fraction `q` of the sample.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

// ── Welch t-test ────────────────────────────────────────────────────────

/// Result of a Welch two-sample t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    /// Treated-minus-control t statistic (±∞ for separated constants).
    pub statistic: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Welch–Satterthwaite degrees of freedom; 0 when degenerate.
    pub df: f64,
    /// True when both samples are constant, so no sampling variance
    /// exists and the statistic is formal rather than distributional.
    pub degenerate: bool,
}

/// Welch (unequal-variance) two-sample t-test of mean(a) − mean(b).
pub fn t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if let Some(bad) = a.iter().chain(b).find(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("t-test samples must be finite, got {bad}")));
    }
    let (mean_a, var_a) = mean_and_variance(a);
    let (mean_b, var_b) = mean_and_variance(b);
    let (n_a, n_b) = (a.len() as f64, b.len() as f64);
    let se_sq = var_a / n_a + var_b / n_b;
    if se_sq == 0.0 {
        // Two constant samples: identical means are indistinguishable,
        // different means are separated with certainty.
        return Ok(if mean_a == mean_b {
            TTest { statistic: 0.0, p: 1.0, df: 0.0, degenerate: true }
        } else {
            let sign = if mean_a > mean_b { 1.0 } else { -1.0 };
            TTest { statistic: sign * f64::INFINITY, p: 0.0, df: 0.0, degenerate: true }
        });
    }
    let statistic = (mean_a - mean_b) / se_sq.sqrt();
    let df = se_sq * se_sq
        / (var_a * var_a / (n_a * n_a * (n_a - 1.0)) + var_b * var_b / (n_b * n_b * (n_b - 1.0)));
    let t_dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Validation(format!("t distribution with df {df}: {e}")))?;
    let p = (2.0 * t_dist.sf(statistic.abs())).min(1.0);
    Ok(TTest { statistic, p, df, degenerate: false })
}

fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss / (n - 1.0))
}

// ── Sample ratio mismatch ───────────────────────────────────────────────

/// One-degree-of-freedom Pearson chi-square test of the observed
/// treated/control split against an intended `treated:control` ratio.
/// Returns `(chi_square, p)`.
pub fn srm_test(n_treat: usize, n_ctrl: usize, expected_ratio: f64) -> Result<(f64, f64)> {
    if n_treat + n_ctrl == 0 {
        return Err(Error::InsufficientData(
            "sample ratio test needs at least one assigned unit".into(),
        ));
    }
    if !(expected_ratio.is_finite() && expected_ratio > 0.0) {
        return Err(Error::Config(format!(
            "expected treated:control ratio must be positive and finite, got {expected_ratio}"
        )));
    }
    let total = (n_treat + n_ctrl) as f64;
    let treat_share = expected_ratio / (1.0 + expected_ratio);
    let expected_treat = total * treat_share;
    let expected_ctrl = total - expected_treat;
    let chi_square = (n_treat as f64 - expected_treat).powi(2) / expected_treat
        + (n_ctrl as f64 - expected_ctrl).powi(2) / expected_ctrl;
    let p = ChiSquared::new(1.0).expect("one degree of freedom is valid").sf(chi_square);
    Ok((chi_square, p))
}

// ── Multiple-testing corrections ────────────────────────────────────────

/// Supported multiple-testing correction procedures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    /// Family-wise: reject p ≤ α/m.
    Bonferroni,
    /// FDR step-up: reject through the largest k with p_(k) ≤ αk/m.
    BenjaminiHochberg,
    /// FDR step-up under arbitrary dependence: BH with α divided by the
    /// harmonic sum c(m) = Σ 1/i.
    BenjaminiYekutieli,
}

/// All corrections, in the column order used by reports.
pub const CORRECTIONS: [Correction; 3] =
    [Correction::Bonferroni, Correction::BenjaminiHochberg, Correction::BenjaminiYekutieli];

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Correction::Bonferroni => "bonferroni",
            Correction::BenjaminiHochberg => "bh",
            Correction::BenjaminiYekutieli => "by",
        })
    }
}

/// Per-hypothesis rejection flags after correcting `ps` at level `alpha`.
///
/// Note on ordering guarantees: step-up rejections are monotone in the
/// level, so BY ⊆ BH always, and Bonferroni ⊆ BH because p ≤ α/m passes
/// the k=1 step. Bonferroni and BY are *not* ordered relative to each
/// other — a single small p can clear α/m yet miss α/(m·c(m)).
pub fn correct_pvalues(ps: &[f64], method: Correction, alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must be inside (0, 1), got {alpha}")));
    }
    if let Some(bad) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Validation(format!("p-values must lie in [0, 1], got {bad}")));
    }
    let m = ps.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    match method {
        Correction::Bonferroni => {
            let threshold = alpha / m as f64;
            Ok(ps.iter().map(|&p| p <= threshold).collect())
        }
        Correction::BenjaminiHochberg => Ok(step_up(ps, alpha, 1.0)),
        Correction::BenjaminiYekutieli => {
            let harmonic: f64 = (1..=m).map(|i| 1.0 / i as f64).sum();
            Ok(step_up(ps, alpha, harmonic))
        }
    }
}

/// Step-up procedure: find the largest k (1-based, over ascending p) with
/// p_(k) ≤ αk/(m·penalty), then reject everything at or below p_(k).
fn step_up(ps: &[f64], alpha: f64, penalty: f64) -> Vec<bool> {
    let m = ps.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| ps[i].total_cmp(&ps[j]));
    let mut cutoff = None;
    for (rank, &idx) in order.iter().enumerate().rev() {
        let k = (rank + 1) as f64;
        if ps[idx] <= alpha * k / (m as f64 * penalty) {
            cutoff = Some(ps[idx]);
            break;
        }
    }
    match cutoff {
        Some(threshold) => ps.iter().map(|&p| p <= threshold).collect(),
        None => vec![false; m],
    }
}

// ── Validity report ─────────────────────────────────────────────────────

/// Sample-ratio check for one analysis day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrmCheck {
    pub t: u32,
    pub n_treat: usize,
    pub n_ctrl: usize,
    pub chi_square: f64,
    pub p: f64,
}

/// One cell of the A/A grid: a pre-experiment metric compared across arms
/// among the participants at one analysis day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AaCell {
    pub metric: String,
    pub t: u32,
    /// (treated mean − control mean) / control mean; absent when either
    /// arm is empty or the control mean is exactly zero.
    pub rel_diff: Option<f64>,
    /// Welch p-value; absent when an arm has fewer than two values, in
    /// which case the cell is excluded from corrections.
    pub p: Option<f64>,
}

/// Internal-validity summary: per-day sample-ratio checks plus the
/// pre-experiment A/A grid with multiple-testing corrections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub srm: Vec<SrmCheck>,
    pub aa: Vec<AaCell>,
    /// Correction name → one flag row per alpha level, each row aligned
    /// index-for-index with `aa` (cells without a p-value stay `false`).
    pub corrections: BTreeMap<String, Vec<Vec<bool>>>,
    /// Significance levels the corrections were computed at.
    pub alpha_levels: Vec<f64>,
}

impl ValidityReport {
    /// Rejection flags for one correction at one tested alpha level.
    pub fn flags(&self, method: Correction, alpha: f64) -> Option<&[bool]> {
        let row = self.alpha_levels.iter().position(|&a| a == alpha)?;
        self.corrections.get(&method.to_string()).map(|rows| rows[row].as_slice())
    }

    /// Writes the A/A grid as CSV: `metric,t,rel_diff,p,bonferroni,bh,by`,
    /// with correction flags at the first (primary) alpha level.
    pub fn write_aa_csv(&self, mut writer: impl Write) -> Result<()> {
        writeln!(writer, "metric,t,rel_diff,p,bonferroni,bh,by")?;
        for (i, cell) in self.aa.iter().enumerate() {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let flag = |method: Correction| {
                self.corrections
                    .get(&method.to_string())
                    .and_then(|rows| rows.first())
                    .is_some_and(|row| row[i])
            };
            writeln!(
                writer,
                "{},{},{},{},{},{},{}",
                cell.metric,
                cell.t,
                opt(cell.rel_diff),
                opt(cell.p),
                flag(Correction::Bonferroni),
                flag(Correction::BenjaminiHochberg),
                flag(Correction::BenjaminiYekutieli),
            )?;
        }
        Ok(())
    }
}

/// A/A check over named pre-experiment metrics and a day range, with SRM
/// rows at a 1:1 intended split and corrections at α ∈ {0.05, 0.01}.
pub fn aa_check(
    roster: &PopulationRoster,
    metrics: &[String],
    t_range: RangeInclusive<u32>,
) -> Result<ValidityReport> {
    validity_report(roster, metrics, t_range, 1.0, &[0.05, 0.01])
}

/// General form of [`aa_check`]: explicit intended treated:control ratio
/// and explicit alpha levels. Corrections are applied across the full
/// metric × day grid jointly, not per metric or per day.
pub fn validity_report(
    roster: &PopulationRoster,
    metrics: &[String],
    t_range: RangeInclusive<u32>,
    expected_ratio: f64,
    alpha_levels: &[f64],
) -> Result<ValidityReport> {
    for metric in metrics {
        if !roster.pre_metric_names().contains(metric) {
            return Err(Error::MetricMissing(metric.clone()));
        }
    }
    if alpha_levels.is_empty() {
        return Err(Error::Config("at least one alpha level is required".into()));
    }
    for &alpha in alpha_levels {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be inside (0, 1), got {alpha}")));
        }
    }
    let metric_index: Vec<usize> = metrics
        .iter()
        .map(|m| {
            roster
                .pre_metric_names()
                .iter()
                .position(|n| n == m)
                .expect("presence checked above")
        })
        .collect();

    let mut srm = Vec::new();
    let mut aa = Vec::new();
    for t in t_range {
        roster.check_day(t)?;
        let participants = roster.participants_at(t)?;
        let mut n_arm = [0usize; 2];
        for unit in &participants {
            let arm = unit.arm.expect("participants always carry an arm");
            n_arm[arm as usize] += 1;
        }
        if n_arm[0] + n_arm[1] > 0 {
            let (chi_square, p) = srm_test(n_arm[1], n_arm[0], expected_ratio)?;
            srm.push(SrmCheck { t, n_treat: n_arm[1], n_ctrl: n_arm[0], chi_square, p });
        }
        for (metric, &slot) in metrics.iter().zip(&metric_index) {
            let mut values: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            for unit in &participants {
                if let Some(pre) = &unit.pre_metrics {
                    let arm = unit.arm.expect("participants always carry an arm");
                    values[arm as usize].push(pre[slot]);
                }
            }
            let rel_diff = match (mean_of(&values[1]), mean_of(&values[0])) {
                (Some(treat), Some(ctrl)) if ctrl != 0.0 => Some((treat - ctrl) / ctrl),
                _ => None,
            };
            let p = if values[0].len() >= 2 && values[1].len() >= 2 {
                Some(t_test(&values[1], &values[0])?.p)
            } else {
                None
            };
            aa.push(AaCell { metric: metric.clone(), t, rel_diff, p });
        }
    }

    // Correct across the full grid: gather defined p-values, run each
    // procedure at each level, scatter flags back to cell positions.
    let defined: Vec<usize> = (0..aa.len()).filter(|&i| aa[i].p.is_some()).collect();
    let ps: Vec<f64> = defined.iter().map(|&i| aa[i].p.expect("filtered")).collect();
    let mut corrections = BTreeMap::new();
    for method in CORRECTIONS {
        let mut rows = Vec::with_capacity(alpha_levels.len());
        for &alpha in alpha_levels {
            let compact = correct_pvalues(&ps, method, alpha)?;
            let mut flags = vec![false; aa.len()];
            for (&cell, flag) in defined.iter().zip(compact) {
                flags[cell] = flag;
            }
            rows.push(flags);
        }
        corrections.insert(method.to_string(), rows);
    }

    Ok(ValidityReport { srm, aa, corrections, alpha_levels: alpha_levels.to_vec() })
}

fn mean_of(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

// ── Tests ───────────────────────────────────────────────────────────────
