//! Population roster: one row per unit in the target population.
//!
//! The roster keeps *every* unit, including those that have not arrived in
//! the experiment yet. Participation probabilities need the full population
//! as their denominator, so "not arrived" is data, not a missing row. A unit
//! that has arrived carries its arrival day, arm label and observed outcome;
//! a unit that has not carries none of the three.
//!
//! Day semantics: day indices start at 0 (the first day of the experiment is
//! day 0), and a unit with `arrival_day = a` counts as a participant at
//! analysis day `t` exactly when `a < t`. "Day 1 results" therefore means
//! `t = 1`: everything observed during the first day.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::columns::Columns;
use crate::error::{Error, Result};

// ── Schema ──────────────────────────────────────────────────────────────

/// One categorical covariate: a name and the number of levels `0..cardinality`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub cardinality: u16,
}

/// Declared shape of a roster: covariates (with level counts) and the
/// experiment horizon in days. Nothing is inferred from data; a roster is
/// only valid against a schema declared up front.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RosterSchema {
    pub covariates: Vec<CovariateSpec>,
    /// Number of days the experiment runs; arrival days must be `<= horizon`.
    pub horizon: u32,
}

impl RosterSchema {
    pub fn new(covariates: Vec<(impl Into<String>, u16)>, horizon: u32) -> Self {
        RosterSchema {
            covariates: covariates
                .into_iter()
                .map(|(name, cardinality)| CovariateSpec { name: name.into(), cardinality })
                .collect(),
            horizon,
        }
    }

    /// Builds a profile from bare levels, pairing them with the declared
    /// covariate names and checking each level against its cardinality.
    pub fn profile(&self, levels: &[u16]) -> Result<CovariateProfile> {
        if levels.len() != self.covariates.len() {
            return Err(Error::Validation(format!(
                "profile has {} levels but the schema declares {} covariates",
                levels.len(),
                self.covariates.len()
            )));
        }
        for (spec, &level) in self.covariates.iter().zip(levels) {
            if level >= spec.cardinality {
                return Err(Error::Validation(format!(
                    "covariate {:?} level {} out of declared range 0..{}",
                    spec.name, level, spec.cardinality
                )));
            }
        }
        Ok(CovariateProfile {
            levels: self
                .covariates
                .iter()
                .zip(levels)
                .map(|(spec, &level)| (spec.name.clone(), level))
                .collect(),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let mut names: Vec<&str> = self.covariates.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.covariates.len() {
            return Err(Error::Config("covariate names must be distinct".into()));
        }
        for spec in &self.covariates {
            if spec.cardinality == 0 {
                return Err(Error::Config(format!(
                    "covariate {:?} must have at least one level",
                    spec.name
                )));
            }
        }
        Ok(())
    }
}

// ── Profiles and units ──────────────────────────────────────────────────

/// A unit's covariate values: an ordered list of `(name, level)` pairs.
/// Two profiles are the same stratum exactly when the sequences are equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CovariateProfile {
    levels: Vec<(String, u16)>,
}

impl CovariateProfile {
    pub fn levels(&self) -> &[(String, u16)] {
        &self.levels
    }

    /// Level of a named covariate, if the profile carries it.
    pub fn level_of(&self, name: &str) -> Option<u16> {
        self.levels.iter().find(|(n, _)| n == name).map(|&(_, l)| l)
    }
}

/// Renders as `name=level` pairs joined with `|`, e.g. `x=2|region=0`.
/// A covariate-free profile renders as `all`.
impl fmt::Display for CovariateProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.levels.is_empty() {
            return write!(f, "all");
        }
        for (i, (name, level)) in self.levels.iter().enumerate() {
            if i > 0 {
                write!(f, "|")?;
            }
            write!(f, "{name}={level}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for CovariateProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(CovariateProfile { levels: Vec::new() });
        }
        let levels = s
            .split('|')
            .map(|pair| {
                let (name, level) = pair.split_once('=').ok_or_else(|| {
                    Error::Validation(format!("malformed profile segment {pair:?} in {s:?}"))
                })?;
                let level = level.parse::<u16>().map_err(|_| {
                    Error::Validation(format!("malformed level in profile segment {pair:?}"))
                })?;
                Ok((name.to_string(), level))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CovariateProfile { levels })
    }
}

/// Profiles serialize as their display string so JSON reports stay
/// readable (`"x=2|region=0"`), and parse back from the same form.
impl serde::Serialize for CovariateProfile {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for CovariateProfile {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One population unit. `arm` and `outcome` are present if and only if
/// `arrival_day` is: outcomes are only observed on arrival, and units that
/// have not arrived have not been assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub unit_id: String,
    pub profile: CovariateProfile,
    pub arrival_day: Option<u32>,
    /// 0 = control, 1 = treated.
    pub arm: Option<u8>,
    pub outcome: Option<f64>,
    /// Pre-experiment metric values, aligned with the roster's metric names.
    pub pre_metrics: Option<Vec<f64>>,
}

impl UnitRecord {
    /// True when this unit is observed at analysis day `t` (strictly earlier
    /// arrival).
    pub fn participates_at(&self, t: u32) -> bool {
        matches!(self.arrival_day, Some(a) if a < t)
    }
}

// ── Roster ──────────────────────────────────────────────────────────────

/// Population counts for one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumSummary {
    pub profile: CovariateProfile,
    /// Number of population units in the stratum.
    pub population: usize,
    /// Number of those that have arrived by the horizon.
    pub participants: usize,
}

/// The validated population roster. Immutable once constructed; all
/// analysis functions take it by shared reference.
#[derive(Debug, Clone)]
pub struct PopulationRoster {
    schema: RosterSchema,
    units: Vec<UnitRecord>,
    pre_metric_names: Vec<String>,
    /// Distinct profiles present in the population, sorted.
    strata: Vec<CovariateProfile>,
    /// Per-unit index into `strata`.
    stratum_ids: Vec<u32>,
}

impl PartialEq for PopulationRoster {
    fn eq(&self, other: &Self) -> bool {
        // Derived fields are functions of these three.
        self.schema == other.schema
            && self.units == other.units
            && self.pre_metric_names == other.pre_metric_names
    }
}

impl PopulationRoster {
    /// Validates units against the schema and builds the stratum index.
    ///
    /// `pre_metric_names` names the entries of each unit's `pre_metrics`
    /// vector; pass an empty list when no pre-experiment metrics exist.
    pub fn new(
        schema: RosterSchema,
        units: Vec<UnitRecord>,
        pre_metric_names: Vec<String>,
    ) -> Result<Self> {
        schema.validate()?;

        let mut seen_ids: HashMap<&str, usize> = HashMap::with_capacity(units.len());
        for (i, unit) in units.iter().enumerate() {
            if let Some(&first) = seen_ids.get(unit.unit_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate unit_id {:?} (units {} and {})",
                    unit.unit_id, first, i
                )));
            }
            seen_ids.insert(&unit.unit_id, i);

            // Profile must match the schema, name for name, with each level
            // in range. Rebuilding via the schema checks both at once.
            let declared = schema
                .profile(&unit.profile.levels.iter().map(|&(_, l)| l).collect::<Vec<_>>())
                .map_err(|e| {
                    Error::Validation(format!("unit {:?}: {e}", unit.unit_id))
                })?;
            if declared != unit.profile {
                return Err(Error::Validation(format!(
                    "unit {:?}: profile {} does not match the declared covariates",
                    unit.unit_id, unit.profile
                )));
            }

            match unit.arrival_day {
                Some(a) => {
                    if a > schema.horizon {
                        return Err(Error::Validation(format!(
                            "unit {:?}: arrival day {} past horizon {}",
                            unit.unit_id, a, schema.horizon
                        )));
                    }
                    if unit.arm.is_none() || unit.outcome.is_none() {
                        return Err(Error::Validation(format!(
                            "unit {:?}: arrived units need both arm and outcome",
                            unit.unit_id
                        )));
                    }
                }
                None => {
                    if unit.arm.is_some() || unit.outcome.is_some() {
                        return Err(Error::Validation(format!(
                            "unit {:?}: arm/outcome present without an arrival day",
                            unit.unit_id
                        )));
                    }
                }
            }
            if let Some(arm) = unit.arm {
                if arm > 1 {
                    return Err(Error::Validation(format!(
                        "unit {:?}: arm must be 0 or 1, got {arm}",
                        unit.unit_id
                    )));
                }
            }
            if let Some(y) = unit.outcome {
                if !y.is_finite() {
                    return Err(Error::Validation(format!(
                        "unit {:?}: outcome must be finite",
                        unit.unit_id
                    )));
                }
            }
            match (&unit.pre_metrics, pre_metric_names.len()) {
                (None, 0) => {}
                (None, _) => {}
                (Some(v), n) if v.len() == n => {
                    if let Some(bad) = v.iter().find(|m| !m.is_finite()) {
                        return Err(Error::Validation(format!(
                            "unit {:?}: pre-metric value {bad} must be finite",
                            unit.unit_id
                        )));
                    }
                }
                (Some(v), n) => {
                    return Err(Error::Validation(format!(
                        "unit {:?}: {} pre-metric values for {} declared metrics",
                        unit.unit_id,
                        v.len(),
                        n
                    )));
                }
            }
        }

        let mut strata: Vec<CovariateProfile> = units.iter().map(|u| u.profile.clone()).collect();
        strata.sort_unstable();
        strata.dedup();
        let index: HashMap<&CovariateProfile, u32> =
            strata.iter().enumerate().map(|(i, p)| (p, i as u32)).collect();
        let stratum_ids = units.iter().map(|u| index[&u.profile]).collect();

        Ok(PopulationRoster { schema, units, pre_metric_names, strata, stratum_ids })
    }

    pub fn schema(&self) -> &RosterSchema {
        &self.schema
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    /// Population size, arrived or not.
    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn horizon(&self) -> u32 {
        self.schema.horizon
    }

    pub fn pre_metric_names(&self) -> &[String] {
        &self.pre_metric_names
    }

    /// Units observed at analysis day `t` (arrival strictly before `t`).
    pub fn participants_at(&self, t: u32) -> Result<Vec<&UnitRecord>> {
        self.check_day(t)?;
        Ok(self.units.iter().filter(|u| u.participates_at(t)).collect())
    }

    /// Distinct strata present in the population, sorted by profile, with
    /// population and arrived-by-horizon counts.
    pub fn strata(&self) -> Vec<StratumSummary> {
        let mut population = vec![0usize; self.strata.len()];
        let mut participants = vec![0usize; self.strata.len()];
        for (unit, &sid) in self.units.iter().zip(&self.stratum_ids) {
            population[sid as usize] += 1;
            if unit.participates_at(self.schema.horizon) {
                participants[sid as usize] += 1;
            }
        }
        self.strata
            .iter()
            .enumerate()
            .map(|(i, profile)| StratumSummary {
                profile: profile.clone(),
                population: population[i],
                participants: participants[i],
            })
            .collect()
    }

    /// The distinct profiles present, sorted. Index order matches the
    /// stratum ids used throughout the crate.
    pub fn stratum_profiles(&self) -> &[CovariateProfile] {
        &self.strata
    }

    /// Index of `profile` in [`Self::stratum_profiles`], if present.
    pub fn stratum_id_of(&self, profile: &CovariateProfile) -> Option<usize> {
        self.strata.binary_search(profile).ok()
    }

    pub(crate) fn stratum_ids(&self) -> &[u32] {
        &self.stratum_ids
    }

    pub(crate) fn check_day(&self, t: u32) -> Result<()> {
        if t > self.schema.horizon {
            return Err(Error::DayOutOfRange { t, horizon: self.schema.horizon });
        }
        Ok(())
    }

    pub(crate) fn columns(&self) -> Columns {
        Columns::from_roster(self)
    }
}

// ── CSV interchange ─────────────────────────────────────────────────────
//
// Header: unit_id,<cov_1>,...,<cov_k>,arrival_day,arm,outcome[,pre_<m>,...]
// Empty string means "absent". UTF-8, LF line endings, `.` decimal point.

/// Loads a roster from CSV, validating against `schema`. Error messages
/// carry 1-based line numbers (the header is line 1).
pub fn load_roster(path: impl AsRef<Path>, schema: &RosterSchema) -> Result<PopulationRoster> {
    let file = std::fs::File::open(path.as_ref())?;
    load_roster_from(file, schema)
}

/// [`load_roster`] over any reader; useful for tests and in-memory data.
pub fn load_roster_from(reader: impl std::io::Read, schema: &RosterSchema) -> Result<PopulationRoster> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);

    let headers = rdr.headers().map_err(csv_error)?.clone();
    let k = schema.covariates.len();
    let fixed: Vec<String> = std::iter::once("unit_id".to_string())
        .chain(schema.covariates.iter().map(|c| c.name.clone()))
        .chain(["arrival_day".to_string(), "arm".to_string(), "outcome".to_string()])
        .collect();
    if headers.len() < fixed.len() {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "header has {} columns, expected at least {} ({})",
                headers.len(),
                fixed.len(),
                fixed.join(",")
            ),
        });
    }
    for (i, want) in fixed.iter().enumerate() {
        if headers.get(i) != Some(want.as_str()) {
            return Err(Error::Parse {
                line: 1,
                msg: format!(
                    "header column {} is {:?}, expected {:?}",
                    i + 1,
                    headers.get(i).unwrap_or(""),
                    want
                ),
            });
        }
    }
    let mut pre_metric_names = Vec::new();
    for i in fixed.len()..headers.len() {
        let h = headers.get(i).unwrap_or("");
        match h.strip_prefix("pre_") {
            Some(name) if !name.is_empty() => pre_metric_names.push(name.to_string()),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("trailing column {h:?} must be named pre_<metric>"),
                })
            }
        }
    }

    let mut units = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |msg: String| Error::Parse { line, msg };

        if record.len() != headers.len() {
            return Err(fail(format!(
                "row has {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }

        let unit_id = record[0].to_string();
        if unit_id.is_empty() {
            return Err(fail("unit_id must not be empty".into()));
        }
        if let Some(prev) = seen.insert(unit_id.clone(), line) {
            return Err(fail(format!(
                "duplicate unit_id {unit_id:?} (first seen at line {prev})"
            )));
        }

        let mut levels = Vec::with_capacity(k);
        for (j, spec) in schema.covariates.iter().enumerate() {
            let raw = &record[1 + j];
            let level: u16 = raw.parse().map_err(|_| {
                fail(format!("covariate {:?}: cannot parse level {raw:?}", spec.name))
            })?;
            if level >= spec.cardinality {
                return Err(fail(format!(
                    "covariate {:?}: level {} out of declared range 0..{}",
                    spec.name, level, spec.cardinality
                )));
            }
            levels.push(level);
        }
        let profile = schema.profile(&levels).expect("levels were just checked");

        let arrival_day = parse_opt::<u32>(&record[1 + k], "arrival_day", &fail)?;
        if let Some(a) = arrival_day {
            if a > schema.horizon {
                return Err(fail(format!(
                    "arrival_day {a} past horizon {}",
                    schema.horizon
                )));
            }
        }
        let arm = parse_opt::<u8>(&record[2 + k], "arm", &fail)?;
        if let Some(a) = arm {
            if a > 1 {
                return Err(fail(format!("arm must be 0 or 1, got {a}")));
            }
        }
        let outcome = parse_opt::<f64>(&record[3 + k], "outcome", &fail)?;
        if let Some(y) = outcome {
            if !y.is_finite() {
                return Err(fail(format!("outcome must be finite, got {y}")));
            }
        }
        match (arrival_day.is_some(), arm.is_some(), outcome.is_some()) {
            (true, true, true) | (false, false, false) => {}
            (false, _, _) => {
                return Err(fail("arm/outcome present without an arrival day".into()))
            }
            (true, _, _) => {
                return Err(fail("arrived unit needs both arm and outcome".into()))
            }
        }

        let pre_cells: Vec<&str> =
            (0..pre_metric_names.len()).map(|j| &record[4 + k + j]).collect();
        let pre_metrics = if pre_cells.iter().all(|c| c.is_empty()) {
            None
        } else if pre_cells.iter().all(|c| !c.is_empty()) {
            let mut vals = Vec::with_capacity(pre_cells.len());
            for (cell, name) in pre_cells.iter().zip(&pre_metric_names) {
                let v: f64 = cell.parse().map_err(|_| {
                    fail(format!("pre-metric {name:?}: cannot parse {cell:?}"))
                })?;
                if !v.is_finite() {
                    return Err(fail(format!("pre-metric {name:?} must be finite, got {v}")));
                }
                vals.push(v);
            }
            Some(vals)
        } else {
            return Err(fail(
                "pre-metric cells must be all present or all empty in a row".into(),
            ));
        };

        units.push(UnitRecord { unit_id, profile, arrival_day, arm, outcome, pre_metrics });
    }

    PopulationRoster::new(schema.clone(), units, pre_metric_names)
}

/// Writes a roster back out in the interchange format. `load_roster` of the
/// written file reproduces the roster exactly.
pub fn write_roster(roster: &PopulationRoster, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_roster_to(roster, file)
}

/// [`write_roster`] over any writer.
pub fn write_roster_to(roster: &PopulationRoster, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = vec!["unit_id".into()];
    header.extend(roster.schema.covariates.iter().map(|c| c.name.clone()));
    header.extend(["arrival_day".into(), "arm".into(), "outcome".into()]);
    header.extend(roster.pre_metric_names.iter().map(|m| format!("pre_{m}")));
    w.write_record(&header).map_err(csv_error)?;

    let empty = String::new();
    for unit in &roster.units {
        let mut row: Vec<String> = vec![unit.unit_id.clone()];
        row.extend(unit.profile.levels().iter().map(|(_, l)| l.to_string()));
        row.push(unit.arrival_day.map_or(empty.clone(), |a| a.to_string()));
        row.push(unit.arm.map_or(empty.clone(), |a| a.to_string()));
        row.push(unit.outcome.map_or(empty.clone(), |y| y.to_string()));
        match &unit.pre_metrics {
            Some(vals) => row.extend(vals.iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(empty.clone(), roster.pre_metric_names.len())),
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_opt<T: std::str::FromStr>(
    raw: &str,
    field: &str,
    fail: &impl Fn(String) -> Error,
) -> Result<Option<T>> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<T>()
        .map(Some)
        .map_err(|_| fail(format!("{field}: cannot parse {raw:?}")))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse { line, msg: e.to_string() }
}

// ── Tests ───────────────────────────────────────────────────────────────
