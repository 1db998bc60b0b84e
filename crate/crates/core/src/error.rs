use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("instance too large: {configurations:.3e} configurations exceed the cap of {cap}")]
    InstanceTooLarge { configurations: f64, cap: u64 },

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("window too small: {0}")]
    WindowTooSmall(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by enumeration caps or other resource bounds.
    pub fn is_resource(&self) -> bool {
        matches!(self, Error::InstanceTooLarge { .. } | Error::ResourceLimit(_))
    }
}
