//! Error type shared by every stage of the pipeline.
//!
//! Each variant maps to one process exit code so the CLI can report the
//! failing stage without string matching.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or unknown configuration entry.
    #[error("config error: {0}")]
    Config(String),
    /// Invalid physical setpoint, critical flow or a degenerate linearization.
    #[error("model error: {0}")]
    Model(String),
    /// Kernel iteration failed to converge.
    #[error("solver error: {what} did not converge after {iterations} iterations (last update {last_update:e})")]
    Solver {
        what: String,
        iterations: usize,
        last_update: f64,
    },
    /// Time stepping blew up or left the physical domain.
    #[error("runtime error: {0}")]
    Runtime(String),
    /// Reading or writing a file failed.
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Model(_) => 2,
            Error::Solver { .. } => 3,
            Error::Runtime(_) => 4,
            Error::Io { .. } => 5,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let errs = [
            Error::Config("x".into()),
            Error::Model("x".into()),
            Error::Solver {
                what: "k".into(),
                iterations: 1,
                last_update: 1.0,
            },
            Error::Runtime("x".into()),
            Error::io("f", std::io::Error::other("x")),
        ];
        let codes: Vec<i32> = errs.iter().map(Error::exit_code).collect();
        assert_eq!(codes, vec![1, 2, 3, 4, 5]);
    }
}
