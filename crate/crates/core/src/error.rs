use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("buffer rule violated: {0}")]
    BufferViolation(String),

    #[error("bond {0} is not monitored")]
    UnmonitoredBond(i64),

    #[error("site {site} is outside the lattice [-{half_width}, {half_width}]")]
    OutsideLattice { site: i64, half_width: usize },

    #[error("malformed trajectory log: {0}")]
    MalformedLog(String),

    #[error("estimator requires density 1/2, got {0}")]
    DensityNotHalf(f64),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("histogram is not normalized (total mass {0})")]
    Unnormalized(f64),

    #[error("nonpositive field value at grid index {0}")]
    NonPositive(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("profile has not decayed at the window edge: {0}")]
    NotDecayed(String),

    #[error("{invalid} of {total} replicas invalid ({reason}), above the 1% limit")]
    TooManyInvalid {
        invalid: u64,
        total: u64,
        reason: &'static str,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
