use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] mambatron::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    /// Process exit code: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        use mambatron::Error as E;
        match self {
            Self::Usage(_) | Self::Precondition(_) => 1,
            Self::Numeric(_) => 3,
            Self::Core(E::Numeric(_) | E::DegenerateTransform(_)) => 3,
            Self::Core(E::Argument(_) | E::Dimension { .. } | E::Contract(_)) => 1,
            Self::Data(_) | Self::Io(_) | Self::Csv(_) => 2,
            Self::Core(E::Checkpoint(_) | E::Io(_)) => 2,
        }
    }
}
