use thiserror::Error;

use crate::spectral::Mode;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error(
        "quadrature did not converge after {panels} panels per axis \
         (last change {last_change:.3e}, tolerance {tolerance:.3e})"
    )]
    QuadratureNonConvergence {
        panels: usize,
        last_change: f64,
        tolerance: f64,
    },

    #[error("sensor {index}: {source}")]
    Sensor {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sensor set is empty")]
    EmptySensorSet,

    #[error("observation horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),

    #[error(
        "slow mode {mode} (eigenvalue {eigenvalue:.6}) is undetectable: \
         observability margin {margin:.3e} below tolerance {tolerance:.1e}"
    )]
    UndetectableSlowMode {
        mode: Mode,
        eigenvalue: f64,
        margin: f64,
        tolerance: f64,
    },

    #[error("gain design infeasible: {0}")]
    GainDesignInfeasible(String),

    #[error("Riccati flow did not reach steady state within {steps} steps (|dP| = {residual:.3e})")]
    RiccatiNonConvergence { steps: usize, residual: f64 },

    #[error(
        "Sylvester resonance: observer rate {observer_rate} (row {row}) collides with \
         eigenvalue {eigenvalue} of mode {mode}"
    )]
    SylvesterResonance {
        row: usize,
        observer_rate: f64,
        mode: Mode,
        eigenvalue: f64,
    },

    #[error("reconstruction stack [C; T] has column rank {rank} < {required}: MC + NT = I is unsatisfiable")]
    ReconstructionRankDeficient { rank: usize, required: usize },

    #[error("time step {dt} too coarse: step-halving changed the final state by {relative_change:.3e} (relative)")]
    StepTooCoarse { dt: f64, relative_change: f64 },

    #[error("decay fit needs at least 3 samples in the window, found {0}")]
    InsufficientSamples(usize),

    #[error("decay fit window has only {0} samples above the positivity floor")]
    NonPositiveSamples(usize),

    #[error("scenario infeasible: {0}")]
    ScenarioInfeasible(String),

    #[error("config error{}: {message}", location(*.line, .field))]
    Config {
        line: Option<usize>,
        field: Option<String>,
        message: String,
    },

    #[error("io error: {0}")]
    Io(String),
}

fn location(line: Option<usize>, field: &Option<String>) -> String {
    match (line, field) {
        (Some(l), Some(f)) => format!(" at line {l}, field `{f}`"),
        (None, Some(f)) => format!(" in field `{f}`"),
        (Some(l), None) => format!(" at line {l}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            line: None,
            field: Some(field.into()),
            message: message.into(),
        }
    }

    /// Configuration problems map to exit code 2, everything else is a numerical failure.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config { .. } | Error::InvalidGeometry(_) | Error::InvalidArgument(_) => true,
            Error::Sensor { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
