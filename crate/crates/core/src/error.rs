use crate::bnn::Activation;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("activation {0:?} has no non-differentiability surfaces")]
    UnsupportedActivation(Activation),
    #[error("unsupported integrator order {0} (expected 1 or 2)")]
    UnsupportedOrder(u32),
    #[error("finite-difference stencil crosses a non-differentiability surface")]
    StencilCrossesKink,
    #[error("drift from the anchor never crosses a non-differentiability surface")]
    NoCrossing,
    #[error("malformed parameter file: {0}")]
    MalformedParams(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
