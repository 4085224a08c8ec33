//! Synthetic ongoing-enrollment experiments with known ground truth.
//!
//! The generator builds a population whose arrival process and outcome
//! distributions are fully specified, so every estimator in this crate can
//! be scored against exact targets: the true average effect, the true
//! per-stratum effects, and a closed-form participation curve per stratum.
//!
//! The default design: units carry one ordinal covariate `x` with four
//! levels. Each unit draws a personal arrival rate `u` uniform on
//! `[x/4, (x+1)/4)`, arrives on a weekday with probability `u/(x+1)` and on
//! a weekend day with probability `u`, and — once arrived — yields a
//! treated outcome of `N(0.5, 0.1²) + Uniform[x/4, (x+1)/4)` or a control
//! outcome of `N(1, 0.1²)`. High-`x` units therefore arrive much earlier
//! than low-`x` units, the early sample over-represents them, and the true
//! average effect is exactly zero while per-stratum effects span ±0.375.

use std::fmt;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roster::{PopulationRoster, RosterSchema, UnitRecord};

// ── Configuration ───────────────────────────────────────────────────────

/// How each unit's daily arrival probability evolves over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HazardMode {
    /// One rate per unit, drawn once and reused every day. Units are
    /// persistently fast or slow, so the population arrival curve has a
    /// heavy late tail.
    #[default]
    FixedPerUnit,
    /// A fresh rate drawn every day, giving a constant expected hazard and
    /// geometric-like arrival times.
    RedrawnDaily,
}

impl fmt::Display for HazardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HazardMode::FixedPerUnit => "fixed_per_unit",
            HazardMode::RedrawnDaily => "redrawn_daily",
        })
    }
}

/// Direction of the treated-outcome uplift across covariate levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HteOrientation {
    /// Uplift support `[x/L, (x+1)/L)`: late-arriving strata get the most
    /// negative effects, early-arriving strata the most positive.
    #[default]
    Rising,
    /// Mirrored support `[(L-1-x)/L, (L-x)/L)`: early-arriving strata get
    /// the most negative effects.
    Falling,
}

impl fmt::Display for HteOrientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HteOrientation::Rising => "rising",
            HteOrientation::Falling => "falling",
        })
    }
}

/// Generator configuration. The defaults reproduce the reference design:
/// 2000 units, 30-day horizon, four covariate levels, an exact 1000/1000
/// treatment split, and a zero average effect built from ±0.375 stratum
/// effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Population size.
    pub n_units: usize,
    /// Number of observation days.
    pub horizon: u32,
    /// Number of covariate levels; level sizes are multinomial-uniform.
    pub n_levels: u16,
    /// Exact number of treated units (assigned before arrival).
    pub treat_count: usize,
    /// Standard deviation of the Gaussian outcome noise.
    pub outcome_noise_sd: f64,
    /// Day-of-week indices (0–6) on which the weekend hazard applies.
    pub weekend_days: Vec<u32>,
    /// Arrival-rate interpretation; see [`HazardMode`].
    pub hazard_mode: HazardMode,
    /// Constant added to every treated outcome; the true average effect.
    pub treatment_shift: f64,
    /// Scale on the stratum-specific uplift component. `1.0` is the
    /// reference design; `0.0` makes the arms identically distributed
    /// (an exact null, not merely a zero-mean effect).
    pub hte_amplitude: f64,
    /// Which strata receive positive vs negative uplift.
    pub hte_orientation: HteOrientation,
    /// Master RNG seed; generation is a pure function of the config.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_units: 2000,
            horizon: 30,
            n_levels: 4,
            treat_count: 1000,
            outcome_noise_sd: 0.1,
            weekend_days: vec![5, 6],
            hazard_mode: HazardMode::FixedPerUnit,
            treatment_shift: 0.0,
            hte_amplitude: 1.0,
            hte_orientation: HteOrientation::Rising,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Checks every field for internal consistency.
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::Config("n_units must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.n_levels == 0 {
            return Err(Error::Config("n_levels must be at least 1".into()));
        }
        if self.treat_count > self.n_units {
            return Err(Error::Config(format!(
                "treat_count {} exceeds n_units {}",
                self.treat_count, self.n_units
            )));
        }
        if !self.outcome_noise_sd.is_finite() || self.outcome_noise_sd < 0.0 {
            return Err(Error::Config(format!(
                "outcome_noise_sd must be finite and non-negative, got {}",
                self.outcome_noise_sd
            )));
        }
        for &d in &self.weekend_days {
            if d > 6 {
                return Err(Error::Config(format!(
                    "weekend_days entries are day-of-week indices 0..=6, got {d}"
                )));
            }
        }
        let mut sorted = self.weekend_days.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.weekend_days.len() {
            return Err(Error::Config("weekend_days contains duplicates".into()));
        }
        if !self.treatment_shift.is_finite() {
            return Err(Error::Config("treatment_shift must be finite".into()));
        }
        if !self.hte_amplitude.is_finite() {
            return Err(Error::Config("hte_amplitude must be finite".into()));
        }
        Ok(())
    }

    fn is_weekend(&self, day: u32) -> bool {
        self.weekend_days.contains(&(day % 7))
    }

    /// Arrival-rate support `[lo, hi)` for covariate level `x`.
    fn hazard_support(&self, level: u16) -> (f64, f64) {
        let l = f64::from(self.n_levels);
        let x = f64::from(level);
        (x / l, (x + 1.0) / l)
    }

    /// Uplift support `[lo, hi)` for treated outcomes at level `x`.
    fn uplift_support(&self, level: u16) -> (f64, f64) {
        let mirrored = match self.hte_orientation {
            HteOrientation::Rising => level,
            HteOrientation::Falling => self.n_levels - 1 - level,
        };
        let l = f64::from(self.n_levels);
        let x = f64::from(mirrored);
        (x / l, (x + 1.0) / l)
    }

    /// Expected treated-minus-control outcome for one covariate level.
    pub fn stratum_hte(&self, level: u16) -> Result<f64> {
        if level >= self.n_levels {
            return Err(Error::Validation(format!(
                "level {} out of range for {} levels",
                level, self.n_levels
            )));
        }
        let (lo, hi) = self.uplift_support(level);
        Ok(self.treatment_shift + self.hte_amplitude * ((lo + hi) / 2.0 - 0.5))
    }

    /// The population average treatment effect. The stratum uplifts are
    /// built to integrate to zero over the uniform covariate distribution,
    /// so this is the shift alone, exactly.
    pub fn true_tau(&self) -> f64 {
        self.treatment_shift
    }

    /// Exact participation probability `P(arrival day < t)` for covariate
    /// level `x` under this configuration.
    ///
    /// For the fixed-rate mode this averages the per-rate survival product
    /// over the rate distribution (numerically, to double precision); for
    /// the redrawn mode days are independent and the product form is exact
    /// in closed form.
    pub fn analytic_pi(&self, t: u32, level: u16) -> Result<f64> {
        if level >= self.n_levels {
            return Err(Error::Validation(format!(
                "level {} out of range for {} levels",
                level, self.n_levels
            )));
        }
        let (lo, hi) = self.hazard_support(level);
        let weekday_divisor = f64::from(level) + 1.0;
        let weekend_days = (0..t).filter(|&d| self.is_weekend(d)).count() as i32;
        let weekday_days = t as i32 - weekend_days;
        match self.hazard_mode {
            HazardMode::FixedPerUnit => {
                let survive = |u: f64| {
                    (1.0 - u).powi(weekend_days) * (1.0 - u / weekday_divisor).powi(weekday_days)
                };
                Ok(1.0 - mean_by_simpson(survive, lo, hi))
            }
            HazardMode::RedrawnDaily => {
                let mean_rate = (lo + hi) / 2.0;
                let weekend_miss = 1.0 - mean_rate;
                let weekday_miss = 1.0 - mean_rate / weekday_divisor;
                Ok(1.0
                    - weekend_miss.powi(weekend_days) * weekday_miss.powi(weekday_days))
            }
        }
    }
}

/// Mean of `f` over `[lo, hi]` by composite Simpson quadrature. The
/// integrands here are smooth products of low-degree powers, so a fixed
/// 2048-panel rule reaches double-precision accuracy.
fn mean_by_simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const PANELS: usize = 2048;
    let h = (hi - lo) / PANELS as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..PANELS {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * f(lo + h * i as f64);
    }
    acc * h / 3.0 / (hi - lo)
}

// ── Ground truth sidecar ────────────────────────────────────────────────

/// Everything an evaluator needs to score estimates of a generated
/// experiment, written alongside the roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Schema of the exported roster (covariate names, cardinalities,
    /// horizon), so analysis can reload the CSV without guessing.
    pub schema: RosterSchema,
    /// The exact configuration that produced the roster.
    pub config: SynthConfig,
    /// True population average treatment effect.
    pub true_tau: f64,
    /// True per-level treatment effects, indexed by covariate level.
    pub stratum_htes: Vec<f64>,
    /// Which [`HazardMode`] generated arrivals, as a stable string.
    pub hazard_interpretation: String,
    /// The master seed, repeated at top level for quick inspection.
    pub seed: u64,
}

// ── Generation ──────────────────────────────────────────────────────────

/// Covariate name used in generated rosters.
pub const COVARIATE_NAME: &str = "x";

/// Generates one experiment: a validated roster plus its ground truth.
///
/// Deterministic in the config: the draw order (all covariate levels, then
/// the treatment shuffle, then per-unit arrival and outcome) is part of
/// the output contract, since reordering would change every seeded roster.
pub fn generate(config: &SynthConfig) -> Result<(PopulationRoster, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let levels: Vec<u16> = (0..config.n_units)
        .map(|_| rng.random_range(0..config.n_levels))
        .collect();
    let treated = assign_arms(config.n_units, config.treat_count, &mut rng);

    let schema = RosterSchema::new(
        vec![(COVARIATE_NAME, config.n_levels)],
        config.horizon,
    );
    let id_width = config.n_units.saturating_sub(1).to_string().len();

    let mut units = Vec::with_capacity(config.n_units);
    for i in 0..config.n_units {
        let x = levels[i];
        let arrival_day = simulate_arrival(config, x, &mut rng);
        // Outcomes exist only for units that actually enter the experiment;
        // arm labels for the rest stay internal to the generator.
        let (arm, outcome) = match arrival_day {
            Some(_) => {
                let y = draw_outcome(config, x, treated[i], &mut rng);
                (Some(u8::from(treated[i])), Some(y))
            }
            None => (None, None),
        };
        units.push(UnitRecord {
            unit_id: format!("u{i:0id_width$}"),
            profile: schema.profile(&[x])?,
            arrival_day,
            arm,
            outcome,
            pre_metrics: None,
        });
    }

    let stratum_htes = (0..config.n_levels)
        .map(|x| config.stratum_hte(x))
        .collect::<Result<Vec<_>>>()?;
    let truth = GroundTruth {
        schema: schema.clone(),
        config: config.clone(),
        true_tau: config.true_tau(),
        stratum_htes,
        hazard_interpretation: config.hazard_mode.to_string(),
        seed: config.seed,
    };
    let roster = PopulationRoster::new(schema, units, Vec::new())?;
    Ok((roster, truth))
}

/// Marks exactly `treat_count` of `n` units as treated, uniformly at
/// random.
fn assign_arms(n: usize, treat_count: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut treated = vec![false; n];
    for &i in &order[..treat_count] {
        treated[i] = true;
    }
    treated
}

/// Runs one unit's daily arrival process over the horizon.
fn simulate_arrival(config: &SynthConfig, level: u16, rng: &mut ChaCha8Rng) -> Option<u32> {
    let (lo, hi) = config.hazard_support(level);
    let weekday_divisor = f64::from(level) + 1.0;
    let mut rate = match config.hazard_mode {
        HazardMode::FixedPerUnit => rng.random_range(lo..hi),
        HazardMode::RedrawnDaily => 0.0,
    };
    for day in 0..config.horizon {
        if config.hazard_mode == HazardMode::RedrawnDaily {
            rate = rng.random_range(lo..hi);
        }
        let p = if config.is_weekend(day) {
            rate
        } else {
            rate / weekday_divisor
        };
        if rng.random_bool(p) {
            return Some(day);
        }
    }
    None
}

/// Draws one observed outcome for an arrived unit.
fn draw_outcome(config: &SynthConfig, level: u16, treated: bool, rng: &mut ChaCha8Rng) -> f64 {
    let sd = config.outcome_noise_sd;
    if treated {
        let noise = Normal::new(0.5 + config.treatment_shift, sd)
            .expect("validated sd is finite and non-negative")
            .sample(rng);
        let (lo, hi) = config.uplift_support(level);
        let uplift = rng.random_range(lo..hi);
        noise + 0.5 + config.hte_amplitude * (uplift - 0.5)
    } else {
        Normal::new(1.0, sd)
            .expect("validated sd is finite and non-negative")
            .sample(rng)
    }
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn empirical_pi(roster: &PopulationRoster, level: u16, t: u32) -> f64 {
        let mut population = 0usize;
        let mut arrived = 0usize;
        for unit in roster.units() {
            if unit.profile.level_of(COVARIATE_NAME) == Some(level) {
                population += 1;
                if unit.participates_at(t) {
                    arrived += 1;
                }
            }
        }
        arrived as f64 / population as f64
    }





    #[test]
    fn default_config_round_trips_through_json() {
        let config = SynthConfig::default();
        let json = serde_json::to_string(&config).expect("serialize");
        let back: SynthConfig = serde_json::from_str(&json).expect("deserialize");
        assert_eq!(back, config, "JSON round-trip changed the config");

        let sparse: SynthConfig = serde_json::from_str(r#"{"seed": 7}"#).expect("defaults fill in");
        assert_eq!(sparse.n_units, 2000, "default n_units expected");
        assert_eq!(sparse.seed, 7, "explicit field must win");

        let err = serde_json::from_str::<SynthConfig>(r#"{"n_unit": 5}"#);
        assert!(err.is_err(), "misspelled field should be rejected, got {err:?}");
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let cases: Vec<(SynthConfig, &str)> = vec![
            (SynthConfig { n_units: 0, ..Default::default() }, "n_units 0"),
            (SynthConfig { horizon: 0, ..Default::default() }, "horizon 0"),
            (SynthConfig { n_levels: 0, ..Default::default() }, "n_levels 0"),
            (
                SynthConfig { treat_count: 2001, ..Default::default() },
                "treat_count above n_units",
            ),
            (
                SynthConfig { outcome_noise_sd: -0.1, ..Default::default() },
                "negative noise sd",
            ),
            (
                SynthConfig { weekend_days: vec![7], ..Default::default() },
                "weekend index 7",
            ),
            (
                SynthConfig { weekend_days: vec![5, 5], ..Default::default() },
                "duplicate weekend day",
            ),
            (
                SynthConfig { hte_amplitude: f64::NAN, ..Default::default() },
                "NaN amplitude",
            ),
        ];
        for (config, label) in cases {
            assert!(
                config.validate().is_err(),
                "config with {label} should fail validation"
            );
            assert!(
                generate(&config).is_err(),
                "generate should refuse a config with {label}"
            );
        }
        SynthConfig::default().validate().expect("default config must validate");
    }

    #[test]
    fn analytic_pi_matches_published_closed_form_for_slowest_stratum() {
        // Level 0 has the same rate on every day of the week, so the
        // survival average has the closed form 1 - 4(1 - 0.75^(t+1))/(t+1).
        let config = SynthConfig::default();
        for t in 0..=30 {
            let closed = 1.0 - 4.0 * (1.0 - 0.75f64.powi(t as i32 + 1)) / (f64::from(t) + 1.0);
            let numeric = config.analytic_pi(t, 0).expect("level 0 in range");
            assert_relative_eq!(numeric, closed, max_relative = 1e-10);
        }
        assert_abs_diff_eq!(
            config.analytic_pi(6, 0).expect("day 6"),
            0.505,
            epsilon = 1e-3
        );
        assert_abs_diff_eq!(
            config.analytic_pi(24, 0).expect("day 24"),
            0.84,
            epsilon = 1e-3
        );
    }

    #[test]
    fn analytic_pi_is_zero_at_start_and_monotone() {
        for mode in [HazardMode::FixedPerUnit, HazardMode::RedrawnDaily] {
            let config = SynthConfig { hazard_mode: mode, ..Default::default() };
            for x in 0..4 {
                assert_eq!(
                    config.analytic_pi(0, x).expect("day 0"),
                    0.0,
                    "nobody participates before any arrival day ({mode}, level {x})"
                );
                let mut prev = 0.0;
                for t in 1..=30 {
                    let pi = config.analytic_pi(t, x).expect("in range");
                    assert!(
                        pi >= prev && pi <= 1.0,
                        "participation must be a CDF: pi({t}|{x}) = {pi}, prev {prev}"
                    );
                    prev = pi;
                }
            }
        }
        assert!(
            SynthConfig::default().analytic_pi(5, 4).is_err(),
            "level 4 of 4 must be rejected"
        );
    }

    #[test]
    fn analytic_pi_redrawn_daily_matches_hand_product() {
        // Level 1 of 4: rate mean 0.375, weekday divisor 2, days 0 and 1
        // are weekdays, so pi(2) = 1 - (1 - 0.375/2)^2.
        let config = SynthConfig {
            hazard_mode: HazardMode::RedrawnDaily,
            ..Default::default()
        };
        let expected = 1.0 - (1.0 - 0.1875f64).powi(2);
        assert_abs_diff_eq!(
            config.analytic_pi(2, 1).expect("day 2"),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let config = SynthConfig { n_units: 300, treat_count: 150, ..Default::default() };
        let (a, _) = generate(&config).expect("generate");
        let (b, _) = generate(&config).expect("generate again");
        assert_eq!(a, b, "same config must reproduce the identical roster");

        let other = SynthConfig { seed: 1, ..config };
        let (c, _) = generate(&other).expect("other seed");
        assert_ne!(a, c, "a different seed should change the roster");
    }

    #[test]
    fn arm_assignment_is_exact_and_seed_dependent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let treated = assign_arms(500, 200, &mut rng);
        assert_eq!(
            treated.iter().filter(|&&w| w).count(),
            200,
            "exactly the requested number of units must be treated"
        );
        let mut rng2 = ChaCha8Rng::seed_from_u64(12);
        let other = assign_arms(500, 200, &mut rng2);
        assert_ne!(treated, other, "different seeds should pick different units");
    }

    #[test]
    fn exported_arms_and_outcomes_exist_exactly_for_arrivals() {
        let (roster, _) = generate(&SynthConfig::default()).expect("generate");
        assert_eq!(roster.n(), 2000, "population size from config");
        let mut treated = 0usize;
        let mut control = 0usize;
        for unit in roster.units() {
            assert_eq!(
                unit.arm.is_some(),
                unit.arrival_day.is_some(),
                "arm must be exported iff the unit arrived ({})",
                unit.unit_id
            );
            assert_eq!(
                unit.outcome.is_some(),
                unit.arrival_day.is_some(),
                "outcome must be exported iff the unit arrived ({})",
                unit.unit_id
            );
            match unit.arm {
                Some(1) => treated += 1,
                Some(0) => control += 1,
                Some(w) => panic!("arm must be binary, got {w}"),
                None => {}
            }
        }
        assert!(
            treated <= 1000 && control <= 1000,
            "observed arms cannot exceed the assigned split, got {treated}/{control}"
        );
        assert!(
            treated + control > 1800,
            "most of the default population arrives within 30 days, got {}",
            treated + control
        );
    }

    #[test]
    fn stratum_sizes_stay_within_four_sigma_of_uniform() {
        for seed in 0..3 {
            let config = SynthConfig { seed, ..Default::default() };
            let (roster, _) = generate(&config).expect("generate");
            let expected = 2000.0 / 4.0;
            let sigma = (2000.0f64 * 0.25 * 0.75).sqrt();
            for level in 0..4 {
                let count = roster
                    .units()
                    .iter()
                    .filter(|u| u.profile.level_of(COVARIATE_NAME) == Some(level))
                    .count() as f64;
                assert!(
                    (count - expected).abs() < 4.0 * sigma,
                    "seed {seed} level {level}: {count} units vs expected {expected} ± {}",
                    4.0 * sigma
                );
            }
        }
    }

    #[test]
    fn empirical_arrival_cdf_tracks_the_analytic_curve() {
        // Single-seed accuracy: the population-level arrival CDF (all
        // strata pooled, n = 2000) stays within 0.05 of its analytic
        // counterpart; per-stratum curves (n ≈ 500) are noisier and get a
        // wider allowance. Averaging ten seeds tightens the per-stratum
        // error below 0.02.
        let mut pooled_gap = vec![[0.0f64; 4]; 31];
        let n_seeds = 10;
        for seed in 0..n_seeds {
            let config = SynthConfig { seed, ..Default::default() };
            let (roster, _) = generate(&config).expect("generate");
            let shares: Vec<f64> = (0..4)
                .map(|x| {
                    roster
                        .units()
                        .iter()
                        .filter(|u| u.profile.level_of(COVARIATE_NAME) == Some(x))
                        .count() as f64
                        / 2000.0
                })
                .collect();
            let mut population_sup = 0.0f64;
            let mut stratum_sup = 0.0f64;
            for t in 1..=30 {
                let mut pop_emp = 0.0;
                let mut pop_analytic = 0.0;
                for x in 0..4u16 {
                    let emp = empirical_pi(&roster, x, t);
                    let analytic = config.analytic_pi(t, x).expect("in range");
                    stratum_sup = stratum_sup.max((emp - analytic).abs());
                    pooled_gap[t as usize][x as usize] += emp - analytic;
                    pop_emp += shares[x as usize] * emp;
                    pop_analytic += shares[x as usize] * analytic;
                }
                population_sup = population_sup.max((pop_emp - pop_analytic).abs());
            }
            assert!(
                population_sup < 0.05,
                "seed {seed}: population arrival CDF off by {population_sup}"
            );
            assert!(
                stratum_sup < 0.10,
                "seed {seed}: some stratum arrival CDF off by {stratum_sup}"
            );
        }
        let averaged_sup = pooled_gap
            .iter()
            .flat_map(|row| row.iter())
            .fold(0.0f64, |m, g| m.max((g / f64::from(n_seeds as u32)).abs()));
        assert!(
            averaged_sup < 0.02,
            "per-stratum gap averaged over {n_seeds} seeds should shrink below 0.02, got {averaged_sup}"
        );
    }

    #[test]
    fn stratum_effects_match_their_declared_values() {
        let (roster, truth) = generate(&SynthConfig::default()).expect("generate");
        assert_eq!(truth.true_tau, 0.0, "default design is an exact null on average");
        let expected: Vec<f64> = (0..4).map(|x| (2.0 * f64::from(x) - 3.0) / 8.0).collect();
        for (x, (&declared, &hand)) in truth.stratum_htes.iter().zip(&expected).enumerate() {
            assert_abs_diff_eq!(declared, hand, epsilon = 1e-15);
            let mut sums = [0.0f64; 2];
            let mut sq = [0.0f64; 2];
            let mut ns = [0usize; 2];
            for unit in roster.units() {
                if unit.profile.level_of(COVARIATE_NAME) != Some(x as u16) {
                    continue;
                }
                if let (Some(arm), Some(y)) = (unit.arm, unit.outcome) {
                    sums[arm as usize] += y;
                    sq[arm as usize] += y * y;
                    ns[arm as usize] += 1;
                }
            }
            assert!(
                ns[0] > 50 && ns[1] > 50,
                "stratum {x} should have plenty of arrivals per arm, got {ns:?}"
            );
            let mean = |w: usize| sums[w] / ns[w] as f64;
            let var = |w: usize| (sq[w] - sums[w] * sums[w] / ns[w] as f64) / (ns[w] as f64 - 1.0);
            let effect = mean(1) - mean(0);
            let se = (var(1) / ns[1] as f64 + var(0) / ns[0] as f64).sqrt();
            assert!(
                (effect - declared).abs() < 3.0 * se,
                "stratum {x}: empirical effect {effect} vs declared {declared} (3 SE = {})",
                3.0 * se
            );
            let control_mean = mean(0);
            let control_se = (var(0) / ns[0] as f64).sqrt();
            assert!(
                (control_mean - 1.0).abs() < 3.0 * control_se,
                "stratum {x}: control mean {control_mean} should sit at 1.0"
            );
        }
    }

    #[test]
    fn weekend_hazard_spikes_for_the_fastest_stratum() {
        // Level 3 arrives with probability u ~ U[0.75, 1) on weekends but
        // only u/4 on weekdays. Pool the first weekend (days 5 and 6)
        // across seeds: the at-risk arrival fraction should sit near the
        // (slightly survivor-tilted) rate mean, far above the weekday rate.
        let mut at_risk = 0usize;
        let mut arrived = 0usize;
        for seed in 0..5 {
            let config = SynthConfig { seed, ..Default::default() };
            let (roster, _) = generate(&config).expect("generate");
            for unit in roster.units() {
                if unit.profile.level_of(COVARIATE_NAME) != Some(3) {
                    continue;
                }
                for day in [5u32, 6] {
                    let still_at_risk = match unit.arrival_day {
                        Some(a) => a >= day,
                        None => true,
                    };
                    if still_at_risk {
                        at_risk += 1;
                        if unit.arrival_day == Some(day) {
                            arrived += 1;
                        }
                    }
                }
            }
        }
        let weekend_rate = arrived as f64 / at_risk as f64;
        assert!(
            weekend_rate > 0.75 && weekend_rate < 1.0,
            "fastest stratum weekend arrival rate should sit in (0.75, 1), got {weekend_rate} ({arrived}/{at_risk})"
        );
    }

    #[test]
    fn redrawn_daily_arrives_faster_and_tracks_its_own_curve() {
        let fixed = SynthConfig::default();
        let redrawn = SynthConfig {
            hazard_mode: HazardMode::RedrawnDaily,
            ..Default::default()
        };
        let (roster_fixed, truth_fixed) = generate(&fixed).expect("fixed");
        let (roster_redrawn, truth_redrawn) = generate(&redrawn).expect("redrawn");
        assert_eq!(truth_fixed.hazard_interpretation, "fixed_per_unit");
        assert_eq!(truth_redrawn.hazard_interpretation, "redrawn_daily");

        // Persistent slow units create a heavy late tail that independent
        // daily redraws do not have, so the redrawn CDF ends well above.
        let slow_fixed = empirical_pi(&roster_fixed, 0, 30);
        let slow_redrawn = empirical_pi(&roster_redrawn, 0, 30);
        assert!(
            slow_redrawn > slow_fixed + 0.05,
            "redrawn-daily should finish clearly higher: {slow_redrawn} vs {slow_fixed}"
        );

        let mut sup = 0.0f64;
        for t in 1..=30 {
            for x in 0..4 {
                let emp = empirical_pi(&roster_redrawn, x, t);
                let analytic = redrawn.analytic_pi(t, x).expect("in range");
                sup = sup.max((emp - analytic).abs());
            }
        }
        assert!(
            sup < 0.10,
            "redrawn-daily empirical CDF should track its analytic curve, sup gap {sup}"
        );
    }

    #[test]
    fn zero_amplitude_makes_the_arms_identically_distributed() {
        let config = SynthConfig {
            hte_amplitude: 0.0,
            seed: 3,
            ..Default::default()
        };
        let (roster, truth) = generate(&config).expect("generate");
        assert_eq!(truth.true_tau, 0.0, "null design");
        assert!(
            truth.stratum_htes.iter().all(|&h| h == 0.0),
            "every stratum effect must vanish, got {:?}",
            truth.stratum_htes
        );
        let mut stats = [(0.0f64, 0.0f64, 0usize); 2];
        for unit in roster.units() {
            if let (Some(arm), Some(y)) = (unit.arm, unit.outcome) {
                let (sum, sq, n) = &mut stats[arm as usize];
                *sum += y;
                *sq += y * y;
                *n += 1;
            }
        }
        let mean = |w: usize| stats[w].0 / stats[w].2 as f64;
        let var = |w: usize| {
            (stats[w].1 - stats[w].0 * stats[w].0 / stats[w].2 as f64) / (stats[w].2 as f64 - 1.0)
        };
        let se = (var(0) / stats[0].2 as f64 + var(1) / stats[1].2 as f64).sqrt();
        assert!(
            (mean(1) - mean(0)).abs() < 3.0 * se,
            "arm means should agree under the exact null: {} vs {}",
            mean(1),
            mean(0)
        );
        for w in 0..2 {
            assert!(
                (mean(w) - 1.0).abs() < 0.02,
                "arm {w} mean should sit at 1.0, got {}",
                mean(w)
            );
            assert!(
                (var(w).sqrt() - 0.1).abs() < 0.02,
                "arm {w} outcome sd should be the configured noise, got {}",
                var(w).sqrt()
            );
        }
    }

    #[test]
    fn falling_orientation_mirrors_the_stratum_effects() {
        let rising = SynthConfig::default();
        let falling = SynthConfig {
            hte_orientation: HteOrientation::Falling,
            ..Default::default()
        };
        let (_, truth_rising) = generate(&rising).expect("rising");
        let (_, truth_falling) = generate(&falling).expect("falling");
        let mut reversed = truth_rising.stratum_htes.clone();
        reversed.reverse();
        assert_eq!(
            truth_falling.stratum_htes, reversed,
            "falling orientation must mirror the rising effects level-for-level"
        );
        assert_eq!(truth_falling.true_tau, 0.0, "mirroring keeps the average at zero");
    }

    #[test]
    fn shift_moves_every_stratum_effect_by_the_same_amount() {
        let config = SynthConfig {
            treatment_shift: 0.08,
            hte_amplitude: 0.5,
            ..Default::default()
        };
        let (_, truth) = generate(&config).expect("generate");
        assert_abs_diff_eq!(truth.true_tau, 0.08, epsilon = 1e-15);
        let base = SynthConfig { hte_amplitude: 0.5, ..Default::default() };
        for x in 0..4 {
            let shifted = truth.stratum_htes[x as usize];
            let unshifted = base.stratum_hte(x).expect("in range");
            assert_abs_diff_eq!(shifted, unshifted + 0.08, epsilon = 1e-15);
        }
    }

    #[test]
    fn ground_truth_serializes_with_schema_and_config() {
        let (_, truth) = generate(&SynthConfig { n_units: 50, treat_count: 25, ..Default::default() })
            .expect("generate");
        let json = serde_json::to_string_pretty(&truth).expect("serialize");
        let back: GroundTruth = serde_json::from_str(&json).expect("deserialize");
        assert_eq!(back, truth, "ground truth must round-trip through JSON");
        assert!(
            json.contains("\"true_tau\""),
            "sidecar should expose the true effect by name"
        );
    }
}
