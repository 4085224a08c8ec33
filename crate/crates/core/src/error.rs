//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong while loading data, fitting participation
/// models, or evaluating estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A CSV row or header that could not be parsed or failed row-level
    /// validation. `line` is 1-based (the header is line 1).
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    /// Roster-level validation failure (duplicate ids, schema mismatch,
    /// inconsistent arrival/arm/outcome fields, ...).
    #[error("invalid roster: {0}")]
    Validation(String),

    /// A configuration value outside its documented range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An analysis day outside `0..=horizon`.
    #[error("day {t} is outside 0..={horizon}")]
    DayOutOfRange { t: u32, horizon: u32 },

    /// A stratum that the fit or roster has never seen.
    #[error("unknown stratum {0}")]
    UnknownStratum(String),

    /// Not enough observations to evaluate the requested quantity
    /// (e.g. an empty arm, or fewer than two arrival cohorts).
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Newton–Raphson ran out of iterations before the score vanished.
    #[error(
        "partial likelihood maximization did not converge after {iters} \
         iterations (score norm {score_norm:.3e})"
    )]
    NonConvergence { iters: u32, score_norm: f64 },

    /// The covariate design has linearly dependent columns.
    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    /// The partial likelihood keeps improving as a coefficient runs off to
    /// infinity (perfect separation in arrival order).
    #[error(
        "monotone likelihood: coefficient magnitude exceeded {bound} while \
         the fit was still improving"
    )]
    MonotoneLikelihood { bound: f64 },

    /// Inverse-weighting was asked to divide by a participation probability
    /// at or below the floor.
    #[error(
        "participation probability at or below {floor:e} for strata [{strata}] at day {t}; \
         inverse weighting is unreliable here"
    )]
    WeightFloor { floor: f64, strata: String, t: u32 },

    /// A ratio whose denominator is numerically zero.
    #[error("denominator {value:e} is too close to zero for a stable ratio")]
    UnstableDenominator { value: f64 },

    /// The lower participation envelope is still zero, so worst-case gap
    /// bounds are undefined.
    #[error("lower participation envelope is zero at day {t}")]
    ZeroEnvelope { t: u32 },

    /// Too many bootstrap resamples failed to produce a statistic.
    #[error("bootstrap: {failed} of {total} resamples failed ({first_failure})")]
    BootstrapFailures {
        failed: usize,
        total: usize,
        first_failure: String,
    },

    /// A pre-experiment metric name that the roster does not carry.
    #[error("metric {0:?} is not present in the roster")]
    MetricMissing(String),

    /// An outcome model that cannot predict for a stratum/arm it is asked
    /// about.
    #[error("outcome model is undefined for stratum {stratum}, arm {arm}")]
    ModelUndefined { stratum: String, arm: u8 },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
