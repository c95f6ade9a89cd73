use thiserror::Error;

/// Errors raised by the simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid step index {0}, expected 1..=4")]
    InvalidStep(u8),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("site out of range: {0}")]
    SiteOutOfRange(String),

    #[error("port error: {0}")]
    Port(String),

    #[error("bands touch: {0}")]
    BandTouching(String),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("no in-gap defect state at delta_phi = {0}")]
    NoDefectState(f64),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("parametric threshold reached at omega = {omega:e} rad/s: {detail}")]
    Threshold { omega: f64, detail: String },

    #[error("weak-pumping precondition violated: {0}")]
    NotWeakPumping(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
