use thiserror::Error;

/// Errors produced by geometry construction, model evaluation, and the
/// Monte-Carlo harness.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("array needs at least 2 sensors, got {0}")]
    TooFewSensors(usize),

    #[error("sensor spacing must be positive, got {0}")]
    InvalidSpacing(f64),

    #[error("sensor positions must start at 0 and be strictly increasing")]
    InvalidPositions,

    #[error("coprime pair requires gcd(m, n) = 1 and 0 < m < n, got ({m}, {n})")]
    NotCoprime { m: usize, n: usize },

    #[error("angle {0} rad is outside the open interval (-pi/2, pi/2)")]
    AngleOutOfRange(f64),

    #[error("steering angles must be pairwise distinct (tolerance 1e-12 rad)")]
    DuplicateAngles,

    #[error("invalid source ensemble: {0}")]
    InvalidEnsemble(&'static str),

    #[error("invalid scenario: {0}")]
    InvalidScenario(&'static str),

    #[error("source index {index} out of range for {num_sources} sources")]
    SourceIndexOutOfRange { index: usize, num_sources: usize },

    #[error("order-statistic index {index} out of range 1..={num_sources}")]
    OrderIndexOutOfRange { index: usize, num_sources: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error(
        "degenerate geometry: full-parameter Fisher information is singular \
         or ill-conditioned (condition number {condition:.3e})"
    )]
    DegenerateGeometry { condition: f64 },

    #[error("MUSIC requires fewer sources than sensors, got K={num_sources}, M={num_sensors}")]
    MusicUnsupported {
        num_sources: usize,
        num_sensors: usize,
    },

    #[error("invalid spectral grid: {0}")]
    InvalidGrid(&'static str),

    #[error("no trial records to aggregate")]
    EmptyRecords,

    #[error("trial records disagree on the number of sources")]
    MismatchedRecords,

    #[error("invalid sweep configuration: {0}")]
    InvalidSweep(&'static str),

    #[error(
        "DOA sampling stalled: no draw satisfied the minimum separation \
         after {attempts} attempts"
    )]
    InfeasibleSampling { attempts: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
