use thiserror::Error;

/// Errors raised by the estimation, certification and experiment code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("selection size m = {m} exceeds the number of samples n = {n}")]
    InfeasibleM { m: usize, n: usize },

    #[error("could not satisfy the outlier loss gap after {attempts} resampling rounds ({violating} outliers still violate it)")]
    ResampleExhausted { attempts: usize, violating: usize },

    #[error("enumeration of C({n}, {m}) = {count} subsets exceeds the cap of {cap}")]
    CombinatorialBlowup { n: usize, m: usize, count: u128, cap: u128 },

    #[error("empty support with lambda = {lambda}")]
    EmptySupport { lambda: f64 },

    #[error("singular support covariance (condition number {cond:.3e})")]
    SingularSubmatrix { cond: f64 },

    #[error("could not sample a feasible pair with bounded denominators after {attempts} attempts")]
    RejectionExhausted { attempts: usize },

    #[error("every column of the design matrix is zero")]
    AllZeroColumn,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &'static str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
