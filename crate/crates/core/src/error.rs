use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("admissibility violation: min R = {min_r:e} at node {node}")]
    Inadmissible { min_r: f64, node: usize },
    #[error("integration failure at t = {t}: min R = {min_r:e} at node {node}")]
    IntegrationFailure { t: f64, min_r: f64, node: usize },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("checksum mismatch for {0}")]
    Checksum(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
