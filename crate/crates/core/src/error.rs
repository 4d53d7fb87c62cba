use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pre-integration needs at least 2 IMU samples, got {0}")]
    TooFewSamples(usize),
    #[error("IMU timestamps not strictly increasing at sample {0}")]
    NonMonotoneTimestamps(usize),
    #[error("IMU buffer does not cover the requested interval")]
    ImuCoverage,
    #[error("state bias differs from pre-integration bias by {0}")]
    BiasMismatch(f64),
    #[error("combined GPS covariance is singular")]
    SingularCovariance,
    #[error("factor covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("unknown state id {0}")]
    UnknownState(usize),
    #[error("state {0} already exists")]
    DuplicateState(usize),
    #[error("GPS measurement at t={t} has no anchor state within {max_gap} s")]
    NoAnchorState { t: f64, max_gap: f64 },
    #[error("GPS measurement at t={t} precedes its anchor state at t={anchor}")]
    MeasurementBeforeAnchor { t: f64, anchor: f64 },
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("correspondences have no horizontal spread")]
    DegenerateSpread,
    #[error("solve window is empty")]
    EmptyWindow,
    #[error("global frame not yet observable")]
    NotObservable,
    #[error("no dropout segment to align")]
    NoSegment,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("estimator diverged: {0}")]
    Diverged(String),
    #[error("fewer than 2 associated trajectory pairs ({0})")]
    TooFewAssociations(usize),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
