use thiserror::Error;

/// Errors produced by design construction, scoring, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric or structural argument is out of range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The requested (model, bounds, p) combination has no closed-form score
    /// table; the generic builder must be used instead.
    #[error("no closed form for {0}; use the generic score builder")]
    NoClosedForm(String),

    /// A outcome probability hit 0 or 1 exactly, so the log-derivative of the
    /// score function does not exist at this p.
    #[error("degenerate outcome distribution at p = {p}: P(y = {y}) is zero")]
    SingularScore { p: f64, y: u8 },

    /// Score elimination at (x, y) = (1, 0) would discard defectives in this
    /// model, because defectives can appear in negative tests.
    #[error("elimination is unsound for the {0} model: a defective can appear in a negative test")]
    UnsoundElimination(String),

    /// The defective mean does not exceed the non-defective mean, so no code
    /// length separates the two populations.
    #[error("infeasible design: defective mean {mu_t} does not exceed non-defective mean {mu}")]
    Infeasible { mu: f64, mu_t: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed matrix dump: {0}")]
    MatrixFormat(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
