//! Participation-over-time models.
//!
//! Arrival into the experiment is treated as a time-to-event outcome on the
//! integer day grid: unit `i` "fails" on its arrival day, and every unit
//! that has not arrived by the analysis day `t_obs` is administratively
//! censored there. A fit produces, per covariate stratum `x`, the curve
//! `pi(t | x)` = estimated probability that a unit of stratum `x` has
//! arrived strictly before day `t`, for `t` in `0..=t_obs`.
//!
//! Two model kinds are supported:
//!
//! - **Kaplan–Meier**, fitted separately per stratum. With administrative
//!   censoring only at `t_obs`, the product-limit estimator telescopes to
//!   the empirical arrival CDF, so the curves are exact stratum CDFs.
//! - **Cox proportional hazards** over the covariates (ordinal levels by
//!   default, one-hot as an option), maximized by Newton–Raphson on the
//!   Breslow-tie partial likelihood, with the Breslow baseline cumulative
//!   hazard: `pi(t | x) = 1 - S0(t)^exp(beta · x)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::columns::{Columns, StratumDayCounts};
use crate::error::{Error, Result};
use crate::roster::{CovariateProfile, CovariateSpec, PopulationRoster};

// ── Options and fit container ───────────────────────────────────────────

/// Which participation model to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalKind {
    KaplanMeier,
    Cox,
}

impl std::fmt::Display for SurvivalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SurvivalKind::KaplanMeier => write!(f, "km"),
            SurvivalKind::Cox => write!(f, "cox"),
        }
    }
}

/// How covariate levels enter the Cox design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateEncoding {
    /// One column per covariate, holding the integer level. Levels must be
    /// ordered for this to be meaningful, which is how rosters declare them.
    #[default]
    Ordinal,
    /// One indicator column per level present in the data, dropping the
    /// smallest present level of each covariate as the reference.
    OneHot,
}

/// Newton–Raphson controls for the Cox fit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CoxOptions {
    pub max_iters: u32,
    /// Convergence declared when the score sup-norm drops below this.
    pub tolerance: f64,
    pub encoding: CovariateEncoding,
    /// A coefficient wandering past this magnitude while the likelihood is
    /// still improving is reported as monotone-likelihood divergence.
    pub coefficient_bound: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions {
            max_iters: 50,
            tolerance: 1e-8,
            encoding: CovariateEncoding::Ordinal,
            coefficient_bound: 30.0,
        }
    }
}

/// A fitted participation model, censored at `t_obs`. Holds one curve per
/// stratum present in the population, on the day grid `0..=t_obs`.
#[derive(Debug, Clone)]
pub struct SurvivalFit {
    kind: SurvivalKind,
    t_obs: u32,
    strata: Vec<CovariateProfile>,
    /// `curves[s][t]` = estimated participation probability of stratum `s`
    /// at day `t`.
    curves: Vec<Vec<f64>>,
    /// `arrived[s][t]` = observed participants of stratum `s` at day `t`
    /// (arrival day strictly before `t`).
    arrived: Vec<Vec<usize>>,
    cox: Option<CoxDetails>,
}

#[derive(Debug, Clone)]
struct CoxDetails {
    beta: Vec<f64>,
    columns: Vec<DesignColumn>,
    covariates: Vec<CovariateSpec>,
    /// Breslow baseline survival `S0(t)` on `0..=t_obs`.
    baseline: Vec<f64>,
    /// `(column name, beta)` pairs in design order, kept materialized so
    /// `coefficients()` can hand out a slice.
    named: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
enum DesignColumn {
    /// The level of covariate `cov` as a real number.
    Ordinal { cov: usize, name: String },
    /// 1 when covariate `cov` has exactly `level`.
    Indicator { cov: usize, level: u16, name: String },
}

impl DesignColumn {
    fn name(&self) -> &str {
        match self {
            DesignColumn::Ordinal { name, .. } | DesignColumn::Indicator { name, .. } => name,
        }
    }

    fn value(&self, levels: &[u16]) -> f64 {
        match *self {
            DesignColumn::Ordinal { cov, .. } => f64::from(levels[cov]),
            DesignColumn::Indicator { cov, level, .. } => {
                if levels[cov] == level {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl SurvivalFit {
    pub fn kind(&self) -> SurvivalKind {
        self.kind
    }

    /// Last day of the fit's grid (the administrative censoring day).
    pub fn t_obs(&self) -> u32 {
        self.t_obs
    }

    /// Strata the fit stores curves for, in sorted profile order.
    pub fn strata(&self) -> &[CovariateProfile] {
        &self.strata
    }

    /// Estimated participation probability of stratum `x` at day `t`.
    ///
    /// For Kaplan–Meier fits `x` must be a stratum seen at fit time; Cox
    /// fits can score any profile over the fitted covariates.
    pub fn pi_hat(&self, t: u32, x: &CovariateProfile) -> Result<f64> {
        if t > self.t_obs {
            return Err(Error::DayOutOfRange { t, horizon: self.t_obs });
        }
        if let Ok(s) = self.strata.binary_search(x) {
            return Ok(self.curves[s][t as usize]);
        }
        match &self.cox {
            Some(details) => {
                let levels = profile_levels(x, &details.covariates)?;
                let eta: f64 = details
                    .columns
                    .iter()
                    .zip(&details.beta)
                    .map(|(col, b)| b * col.value(&levels))
                    .sum();
                Ok(1.0 - details.baseline[t as usize].powf(eta.exp()))
            }
            None => Err(Error::UnknownStratum(x.to_string())),
        }
    }

    pub(crate) fn pi_by_stratum(&self, t: u32, s: usize) -> f64 {
        self.curves[s][t as usize]
    }

    /// Observed participant count of stratum `s` at day `t`.
    pub(crate) fn arrived_by_stratum(&self, t: u32, s: usize) -> usize {
        self.arrived[s][t as usize]
    }

    /// Fitted coefficients as `(column name, beta)` pairs; empty for
    /// Kaplan–Meier fits.
    pub fn coefficients(&self) -> &[(String, f64)] {
        self.cox.as_ref().map_or(&[], |d| &d.named)
    }

    /// Breslow baseline survival over the grid; `None` for Kaplan–Meier.
    pub fn baseline_survival(&self) -> Option<&[f64]> {
        self.cox.as_ref().map(|d| d.baseline.as_slice())
    }

    /// Writes the fitted curves as CSV rows `stratum,t,pi_hat`.
    pub fn export_curves_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "stratum,t,pi_hat")?;
        for (s, profile) in self.strata.iter().enumerate() {
            for t in 0..=self.t_obs {
                writeln!(w, "{},{},{}", profile, t, self.curves[s][t as usize])?;
            }
        }
        Ok(())
    }

    /// Writes Cox coefficients as CSV rows `covariate,beta`. Errors for
    /// model kinds that have no coefficients.
    pub fn export_coefficients_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        let details = self.cox.as_ref().ok_or_else(|| {
            Error::Config("only Cox fits have coefficients to export".into())
        })?;
        writeln!(w, "covariate,beta")?;
        for (name, beta) in &details.named {
            writeln!(w, "{name},{beta}")?;
        }
        Ok(())
    }
}

fn profile_levels(x: &CovariateProfile, covariates: &[CovariateSpec]) -> Result<Vec<u16>> {
    if x.levels().len() != covariates.len()
        || x.levels().iter().zip(covariates).any(|((n, _), spec)| *n != spec.name)
    {
        return Err(Error::UnknownStratum(x.to_string()));
    }
    for ((_, level), spec) in x.levels().iter().zip(covariates) {
        if *level >= spec.cardinality {
            return Err(Error::UnknownStratum(x.to_string()));
        }
    }
    Ok(x.levels().iter().map(|&(_, l)| l).collect())
}

// ── Kaplan–Meier ────────────────────────────────────────────────────────

/// Fits per-stratum Kaplan–Meier participation curves, administratively
/// censoring every not-yet-arrived unit at `t_obs`.
///
/// At each arrival day the hazard is `d_j / n_j` with `n_j` the stratum
/// population not yet arrived before that day. Because the only censoring
/// is at the end of the grid, the risk set shrinks exactly by the event
/// counts and the product limit telescopes: the curve equals the empirical
/// per-stratum arrival CDF, computed here with integer counts so the
/// identity is exact.
pub fn fit_km(roster: &PopulationRoster, t_obs: u32) -> Result<SurvivalFit> {
    roster.check_day(t_obs)?;
    let counts = roster.columns().stratum_day_counts(t_obs);
    Ok(SurvivalFit {
        kind: SurvivalKind::KaplanMeier,
        t_obs,
        strata: roster.stratum_profiles().to_vec(),
        curves: km_curves_from_counts(&counts, t_obs),
        arrived: cumulative_arrivals(&counts, t_obs),
        cox: None,
    })
}

fn cumulative_arrivals(counts: &StratumDayCounts, t_obs: u32) -> Vec<Vec<usize>> {
    counts
        .arrivals
        .iter()
        .map(|days| {
            let mut cum = Vec::with_capacity(t_obs as usize + 1);
            let mut total = 0;
            cum.push(0);
            for &d in days {
                total += d;
                cum.push(total);
            }
            cum
        })
        .collect()
}

fn km_curves_from_counts(counts: &StratumDayCounts, t_obs: u32) -> Vec<Vec<f64>> {
    counts
        .population
        .iter()
        .zip(&counts.arrivals)
        .map(|(&pop, arrivals)| {
            let mut curve = Vec::with_capacity(t_obs as usize + 1);
            let mut at_risk = pop;
            curve.push(0.0);
            for &arrived in arrivals.iter().take(t_obs as usize) {
                at_risk -= arrived;
                // (pop - at_risk) / pop == 1 - prod_j (1 - d_j/n_j): the
                // risk set loses exactly the event count each day.
                let pi = if pop == 0 { 0.0 } else { (pop - at_risk) as f64 / pop as f64 };
                curve.push(pi);
            }
            curve
        })
        .collect()
}

/// Per-stratum participation probability at a single day, for hot paths
/// that refit inside bootstrap resamples. Strata with no population in
/// `cols` report 0.
pub(crate) fn km_pi_at_day(cols: &Columns, t: u32) -> Vec<f64> {
    let mut pop = vec![0usize; cols.n_strata];
    let mut arrived = vec![0usize; cols.n_strata];
    for i in 0..cols.n() {
        let s = cols.stratum[i] as usize;
        pop[s] += 1;
        if cols.participates(i, t) {
            arrived[s] += 1;
        }
    }
    (0..cols.n_strata)
        .map(|s| if pop[s] == 0 { 0.0 } else { arrived[s] as f64 / pop[s] as f64 })
        .collect()
}

// ── Cox proportional hazards ────────────────────────────────────────────

/// Fits a Cox proportional-hazards model of arrival over the covariates,
/// censored at `t_obs`, and materializes `pi(t|x) = 1 - S0(t)^exp(beta·x)`
/// for every stratum present.
pub fn fit_cox(roster: &PopulationRoster, t_obs: u32, options: &CoxOptions) -> Result<SurvivalFit> {
    roster.check_day(t_obs)?;
    let cols = roster.columns();
    let counts = cols.stratum_day_counts(t_obs);
    let strata = roster.stratum_profiles().to_vec();
    let columns = design_columns(&strata, roster.schema().covariates.len(), options.encoding);
    let designs = encode_strata(&strata, &columns);

    let core = cox_newton(&counts, &designs, t_obs, options)?;

    let curves: Vec<Vec<f64>> = designs
        .iter()
        .map(|x| {
            let w = dot(&core.beta, x).exp();
            core.baseline.iter().map(|s0| 1.0 - s0.powf(w)).collect()
        })
        .collect();

    let named = columns
        .iter()
        .zip(&core.beta)
        .map(|(c, &b)| (c.name().to_string(), b))
        .collect();
    Ok(SurvivalFit {
        kind: SurvivalKind::Cox,
        t_obs,
        strata,
        curves,
        arrived: cumulative_arrivals(&counts, t_obs),
        cox: Some(CoxDetails {
            beta: core.beta,
            columns,
            covariates: roster.schema().covariates.clone(),
            baseline: core.baseline,
            named,
        }),
    })
}

/// Per-stratum `pi(t|s)` from a fresh Cox fit censored at `t`, for
/// bootstrap refits. `designs` must describe the same stratum indexing as
/// `cols` (it is computed once on the original roster).
pub(crate) fn cox_pi_at_day(
    cols: &Columns,
    designs: &[Vec<f64>],
    t: u32,
    options: &CoxOptions,
) -> Result<Vec<f64>> {
    let counts = cols.stratum_day_counts(t);
    let core = cox_newton(&counts, designs, t, options)?;
    Ok(designs
        .iter()
        .map(|x| {
            let w = dot(&core.beta, x).exp();
            1.0 - core.baseline[t as usize].powf(w)
        })
        .collect())
}

/// Design matrix rows for each stratum under `encoding`.
pub(crate) fn design_columns_for(
    roster: &PopulationRoster,
    encoding: CovariateEncoding,
) -> Vec<Vec<f64>> {
    let strata = roster.stratum_profiles();
    let columns = design_columns(strata, roster.schema().covariates.len(), encoding);
    encode_strata(strata, &columns)
}

fn design_columns(
    strata: &[CovariateProfile],
    n_covariates: usize,
    encoding: CovariateEncoding,
) -> Vec<DesignColumn> {
    match encoding {
        CovariateEncoding::Ordinal => (0..n_covariates)
            .map(|cov| {
                let name = strata
                    .first()
                    .map(|p| p.levels()[cov].0.clone())
                    .unwrap_or_else(|| format!("covariate_{cov}"));
                DesignColumn::Ordinal { cov, name }
            })
            .collect(),
        CovariateEncoding::OneHot => {
            let mut columns = Vec::new();
            for cov in 0..n_covariates {
                let mut present: Vec<u16> =
                    strata.iter().map(|p| p.levels()[cov].1).collect();
                present.sort_unstable();
                present.dedup();
                // The smallest present level is the reference.
                for &level in present.iter().skip(1) {
                    let name = strata
                        .first()
                        .map(|p| format!("{}={level}", p.levels()[cov].0))
                        .unwrap_or_else(|| format!("covariate_{cov}={level}"));
                    columns.push(DesignColumn::Indicator { cov, level, name });
                }
            }
            columns
        }
    }
}

fn encode_strata(strata: &[CovariateProfile], columns: &[DesignColumn]) -> Vec<Vec<f64>> {
    strata
        .iter()
        .map(|p| {
            let levels: Vec<u16> = p.levels().iter().map(|&(_, l)| l).collect();
            columns.iter().map(|c| c.value(&levels)).collect()
        })
        .collect()
}

struct CoxCore {
    beta: Vec<f64>,
    /// `S0(t)` for `t` in `0..=t_obs`.
    baseline: Vec<f64>,
}

/// Newton–Raphson on the Breslow-tie partial likelihood, over per-day
/// per-stratum counts (all units of a stratum share a design row, so the
/// likelihood only depends on these aggregates).
fn cox_newton(
    counts: &StratumDayCounts,
    designs: &[Vec<f64>],
    t_obs: u32,
    options: &CoxOptions,
) -> Result<CoxCore> {
    let n_strata = designs.len();
    let p = designs.first().map_or(0, Vec::len);

    // A design that is constant or collinear across the populated strata
    // leaves some direction of beta unidentified, with an identically zero
    // score component along it — Newton would sit at zero and "converge".
    // Catch that structurally before iterating.
    if p > 0 {
        let present: Vec<&Vec<f64>> = designs
            .iter()
            .zip(&counts.population)
            .filter(|&(_, &pop)| pop > 0)
            .map(|(x, _)| x)
            .collect();
        if !full_column_rank(&present, p) {
            return Err(Error::RankDeficient(
                "covariate design is constant or collinear across populated strata".into(),
            ));
        }
    }

    // Event days and risk counts. Units not arrived before day d are at
    // risk on day d; administrative censoring keeps everyone in the risk
    // set through t_obs.
    let mut event_days: Vec<usize> = Vec::new();
    for d in 0..t_obs as usize {
        if (0..n_strata).any(|s| counts.arrivals[s][d] > 0) {
            event_days.push(d);
        }
    }
    if event_days.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no arrivals before day {t_obs}; the partial likelihood is empty"
        )));
    }
    // risk[s][d] = units of stratum s with arrival day >= d (or censored).
    let mut risk = vec![vec![0f64; t_obs as usize]; n_strata];
    for ((row, &pop), arrivals) in risk.iter_mut().zip(&counts.population).zip(&counts.arrivals) {
        let mut at_risk = pop;
        for (cell, &arrived) in row.iter_mut().zip(arrivals) {
            *cell = at_risk as f64;
            at_risk -= arrived;
        }
    }

    let log_likelihood = |beta: &[f64]| -> f64 {
        let w: Vec<f64> = designs.iter().map(|x| dot(beta, x).exp()).collect();
        let mut ell = 0.0;
        for &d in &event_days {
            let mut s0 = 0.0;
            let mut dj = 0.0;
            for s in 0..n_strata {
                s0 += risk[s][d] * w[s];
                let ev = counts.arrivals[s][d] as f64;
                if ev > 0.0 {
                    dj += ev;
                    ell += ev * dot(beta, &designs[s]);
                }
            }
            ell -= dj * s0.ln();
        }
        ell
    };

    let mut beta = vec![0.0; p];
    let mut ell = log_likelihood(&beta);
    let mut score_norm = f64::INFINITY;

    for iter in 0..options.max_iters {
        // Score and information at the current beta.
        let w: Vec<f64> = designs.iter().map(|x| dot(&beta, x).exp()).collect();
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        for &d in &event_days {
            let mut s0 = 0.0;
            let mut s1 = vec![0.0; p];
            let mut s2 = vec![0.0; p * p];
            let mut dj = 0.0;
            for s in 0..n_strata {
                let r = risk[s][d] * w[s];
                if r > 0.0 {
                    s0 += r;
                    for a in 0..p {
                        let xa = designs[s][a];
                        s1[a] += r * xa;
                        for b in 0..=a {
                            s2[a * p + b] += r * xa * designs[s][b];
                        }
                    }
                }
                let ev = counts.arrivals[s][d] as f64;
                if ev > 0.0 {
                    dj += ev;
                    for a in 0..p {
                        score[a] += ev * designs[s][a];
                    }
                }
            }
            for a in 0..p {
                let ma = s1[a] / s0;
                score[a] -= dj * ma;
                for b in 0..=a {
                    info[a * p + b] += dj * (s2[a * p + b] / s0 - ma * s1[b] / s0);
                }
            }
        }
        for a in 0..p {
            for b in (a + 1)..p {
                info[a * p + b] = info[b * p + a];
            }
        }

        score_norm = score.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if score_norm < options.tolerance || p == 0 {
            // Converged (vacuously so when there are no covariates).
            let baseline = breslow_baseline(counts, designs, &beta, &event_days, &risk, t_obs);
            return Ok(CoxCore { beta, baseline });
        }

        let delta = cholesky_solve(&info, &score, p).ok_or_else(|| {
            Error::RankDeficient(format!(
                "information matrix became singular at iteration {iter}; \
                 the likelihood is too flat to maximize"
            ))
        })?;

        // Damped update: halve the step until the likelihood improves. The
        // comparison carries relative slack because near the optimum the
        // true improvement drops below the rounding granularity of ell.
        let slack = 1e-10 * (ell.abs() + 1.0);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate: Vec<f64> =
                beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
            let candidate_ell = log_likelihood(&candidate);
            if candidate_ell + slack >= ell {
                beta = candidate;
                ell = candidate_ell;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        if beta.iter().any(|b| b.abs() > options.coefficient_bound) {
            return Err(Error::MonotoneLikelihood { bound: options.coefficient_bound });
        }
    }

    Err(Error::NonConvergence { iters: options.max_iters, score_norm })
}

fn breslow_baseline(
    counts: &StratumDayCounts,
    designs: &[Vec<f64>],
    beta: &[f64],
    event_days: &[usize],
    risk: &[Vec<f64>],
    t_obs: u32,
) -> Vec<f64> {
    let w: Vec<f64> = designs.iter().map(|x| dot(beta, x).exp()).collect();
    let mut jump = vec![0.0; t_obs as usize];
    for &d in event_days {
        let mut s0 = 0.0;
        let mut dj = 0.0;
        for s in 0..designs.len() {
            s0 += risk[s][d] * w[s];
            dj += counts.arrivals[s][d] as f64;
        }
        jump[d] = dj / s0;
    }
    // S0(t) = exp(-H0(t)) with H0 accumulating jumps at event days < t.
    let mut baseline = Vec::with_capacity(t_obs as usize + 1);
    let mut h = 0.0;
    baseline.push(1.0);
    for &j in &jump {
        h += j;
        baseline.push((-h).exp());
    }
    baseline
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Whether the rows in `rows` (each of length `p`) span all `p` columns
/// after centering, i.e. no column is constant and none is an affine
/// combination of the others. Checked via Cholesky on the centered Gram
/// matrix with a relative pivot threshold.
fn full_column_rank(rows: &[&Vec<f64>], p: usize) -> bool {
    let n = rows.len();
    if n < 2 {
        return false;
    }
    let mut means = vec![0.0; p];
    for row in rows {
        for (m, v) in means.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut gram = vec![0.0; p * p];
    for row in rows {
        for a in 0..p {
            let xa = row[a] - means[a];
            for b in 0..=a {
                gram[a * p + b] += xa * (row[b] - means[b]);
            }
        }
    }
    for a in 0..p {
        for b in (a + 1)..p {
            gram[a * p + b] = gram[b * p + a];
        }
    }
    cholesky_solve(&gram, &vec![0.0; p], p).is_some()
}

/// Solves `A x = b` for symmetric positive-definite `A` (row-major `p*p`).
/// Returns `None` when a pivot collapses, i.e. the matrix is singular to
/// working precision.
fn cholesky_solve(a: &[f64], b: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    let scale = (0..p).map(|i| a[i * p + i].abs()).fold(0.0f64, f64::max).max(1.0);
    for i in 0..p {
        for j in 0..=i {
            let mut sum = a[i * p + j];
            for k in 0..j {
                sum -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if sum <= scale * 1e-12 {
                    return None;
                }
                l[i * p + i] = sum.sqrt();
            } else {
                l[i * p + j] = sum / l[j * p + j];
            }
        }
    }
    // Forward then back substitution.
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * p + k] * y[k];
        }
        y[i] = sum / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut sum = y[i];
        for k in (i + 1)..p {
            sum -= l[k * p + i] * x[k];
        }
        x[i] = sum / l[i * p + i];
    }
    Some(x)
}

// ── Predictive evaluation ───────────────────────────────────────────────

/// Splits the roster into train/test by unit, fits the chosen model on the
/// training population censored at each day `t = 1..=horizon`, scores the
/// held-out units by `pi(t|x)`, and reports the AUC of those scores against
/// actual participation at `t`. Days where every held-out unit has the same
/// label report `None`.
pub fn auc_eval(
    roster: &PopulationRoster,
    train_fraction: f64,
    kind: SurvivalKind,
    options: &CoxOptions,
    seed: u64,
) -> Result<Vec<(u32, Option<f64>)>> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = roster.n();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 {
        return Err(Error::InsufficientData(
            "need at least two units to split into train and test".into(),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, test_idx) = order.split_at(n_train);

    let train_units = train_idx.iter().map(|&i| roster.units()[i].clone()).collect();
    let train = PopulationRoster::new(
        roster.schema().clone(),
        train_units,
        roster.pre_metric_names().to_vec(),
    )?;

    let mut out = Vec::with_capacity(roster.horizon() as usize);
    for t in 1..=roster.horizon() {
        let fit = match kind {
            SurvivalKind::KaplanMeier => fit_km(&train, t)?,
            SurvivalKind::Cox => fit_cox(&train, t, options)?,
        };
        let mut scores = Vec::with_capacity(test_idx.len());
        let mut labels = Vec::with_capacity(test_idx.len());
        for &i in test_idx {
            let unit = &roster.units()[i];
            scores.push(fit.pi_hat(t, &unit.profile)?);
            labels.push(unit.participates_at(t));
        }
        out.push((t, rank_auc(&scores, &labels)));
    }
    Ok(out)
}

/// Tie-corrected rank AUC: the probability a random positive outscores a
/// random negative, counting ties as one half. `None` when either class is
/// empty.
fn rank_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tied run [i, j).
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

// ── Tests ───────────────────────────────────────────────────────────────
