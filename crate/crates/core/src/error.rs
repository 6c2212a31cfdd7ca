use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("non-physical state at t = {t}: minimum eigenvalue {min_eigenvalue:e}")]
    NonPhysicalState { t: f64, min_eigenvalue: f64 },

    #[error("g2 not converged in the sensor coupling: relative change {relative_change:e} under epsilon halving")]
    NotConverged { relative_change: f64, g2: f64 },

    #[error("no emission: integrated population {n_integral:e}")]
    ZeroEmission { n_integral: f64 },

    #[error("sweep point {index} ({axis} = {value}) failed: {source}")]
    SweepPoint {
        index: usize,
        axis: &'static str,
        value: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("timestamps not sorted at index {index}")]
    UnsortedInput { index: usize },

    #[error("estimator window {window_ns} ns exceeds repetition period {rep_period_ns} ns")]
    WindowOverlap { window_ns: f64, rep_period_ns: f64 },

    #[error("histogram span {span_ns} ns too short, need at least {required_ns} ns")]
    SpanTooShort { span_ns: f64, required_ns: f64 },

    #[error("time grid step {step} too coarse for IRF width {irf_sigma}")]
    GridTooCoarse { step: f64, irf_sigma: f64 },

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("ill-conditioned fit: Jacobian is rank deficient")]
    IllConditioned,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
