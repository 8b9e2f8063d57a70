//! Error type shared by all modeling modules.

use crate::panel::MonthIndex;
use thiserror::Error;

/// Errors raised anywhere in the modeling stack.
///
/// Variants are grouped by the stage that raises them; the pipeline
/// propagates them unchanged so callers can map each to a diagnostic
/// or an exit code.
#[derive(Debug, Clone, Error)]
pub enum Error {
    // ---- panel construction ----
    #[error("unknown canton '{0}'")]
    UnknownCanton(String),
    #[error("national cases are zero in {0}; relative risk is undefined")]
    ZeroNationalCases(MonthIndex),
    #[error("canton '{canton}' is missing months within the common range: {months:?}")]
    MissingMonths {
        canton: String,
        months: Vec<MonthIndex>,
    },
    #[error("duplicate key ({canton}, {month}) in {table} table")]
    DuplicateKey {
        canton: String,
        month: MonthIndex,
        table: &'static str,
    },
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("max lag {lag} too large for series of length {len}")]
    LagTooLarge { lag: usize, len: usize },

    // ---- basis construction ----
    #[error("internal knots must lie strictly inside the boundary ({lo}, {hi}); got {knot}")]
    KnotsOutOfRange { knot: f64, lo: f64, hi: f64 },
    #[error("degenerate boundary: lo {lo} must be < hi {hi}")]
    DegenerateBoundary { lo: f64, hi: f64 },
    #[error("value {value} outside basis range [{lo}, {hi}]")]
    ValueOutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("invalid basis spec: {0}")]
    InvalidBasisSpec(String),

    // ---- distributions ----
    #[error("negative response value {0}; zero-adjusted densities are defined on y >= 0")]
    NegativeY(f64),
    #[error("invalid distribution parameters: {0}")]
    InvalidParams(String),

    // ---- regression fitting ----
    #[error("design matrix is rank deficient; offending columns: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("misaligned inputs: {0}")]
    MisalignedInputs(String),
    #[error("response is zero everywhere; the gamma component cannot be fit")]
    AllZeroResponse,
    #[error("fit did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("design columns do not match the fitted model: {0}")]
    ColumnMismatch(String),

    // ---- random forest ----
    #[error("empty design: {0} rows x {1} columns")]
    EmptyDesign(usize, usize),
    #[error("prediction row width {got} does not match training width {expected}")]
    WidthMismatch { got: usize, expected: usize },
    #[error("no rows are out-of-bag for any tree")]
    NoOobRows,

    // ---- VAR ----
    #[error("insufficient data: {rows} usable rows for {cols} regressors")]
    InsufficientData { rows: usize, cols: usize },
    #[error("regressor matrix is numerically unusable: {0}")]
    SingularRegressors(String),
    #[error("forecast horizon must be >= 1")]
    HorizonZero,

    // ---- metrics ----
    #[error("mean observed relative risk is zero; normalized scores are undefined")]
    ZeroMeanRisk,
    #[error("interval level alpha must lie in (0, 1); got {0}")]
    InvalidAlpha(f64),
    #[error("scores are misaligned: {0}")]
    MisalignedScores(String),

    // ---- pipeline ----
    #[error("requested horizon {h} exceeds the VAR forecast length {available}")]
    HorizonExceedsVar { h: usize, available: usize },
    #[error("too few residuals ({n}) for block bootstrap with block length {block}")]
    TooFewResiduals { n: usize, block: usize },
    #[error("observed test data missing for {0}")]
    MissingObservations(String),
    #[error("declared climate generator is unstable (spectral radius {0:.4} >= 1)")]
    UnstableGenerator(f64),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    // ---- serialization of fit artifacts ----
    #[error("malformed fit record: {0}")]
    MalformedRecord(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by invalid inputs or configuration rather
    /// than by a numerical procedure failing on valid inputs.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::RankDeficient(_)
                | Error::NonConvergence { .. }
                | Error::SingularRegressors(_)
                | Error::AllZeroResponse
                | Error::UnstableGenerator(_)
        )
    }
}
