use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("small-cell placement infeasible: {0}")]
    Placement(String),
    #[error("satellite {sat} is not visible from terminal {tst}")]
    Visibility { tst: usize, sat: usize },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("load split infeasible: {0}")]
    LoadSplit(String),
    #[error("swap infeasible: {0}")]
    InfeasibleSwap(String),
    #[error("ill-formed swap: {0}")]
    Classification(String),
    #[error("instance exceeds oracle bounds: {0}")]
    OracleBounds(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
