//! Time-bin entanglement certification: time-tag streams, discretisation
//! into high-dimensional POVMs, simulation, SDP bounds and key rates.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod certify;
pub mod config;
pub mod discretize;
pub mod keyrate;
pub mod report;
pub mod scan;
pub mod simulate;
pub mod tagstream;

pub use timebin_sdp as sdp;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("output: {0}")]
    Output(String),
    #[error(transparent)]
    Tags(#[from] tagstream::TagError),
    #[error(transparent)]
    Discretize(#[from] discretize::DiscretizeError),
    #[error(transparent)]
    Simulate(#[from] simulate::SimError),
    #[error(transparent)]
    Certify(#[from] certify::CertifyError),
    #[error(transparent)]
    KeyRate(#[from] keyrate::KeyRateError),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for data the model cannot explain,
    /// 4 for solver failures.
    pub fn exit_code(&self) -> i32 {
        use certify::CertifyError as C;
        match self {
            Error::Certify(C::Infeasible(_)) | Error::Certify(C::Unnormalized) => 3,
            Error::Certify(C::Discretize(discretize::DiscretizeError::EmptyGroup(_))) => 3,
            Error::Discretize(discretize::DiscretizeError::EmptyGroup(_)) => 3,
            Error::Certify(_) => 4,
            Error::KeyRate(keyrate::KeyRateError::Certify(e)) => {
                Error::Certify(e.clone()).exit_code()
            }
            Error::KeyRate(keyrate::KeyRateError::Normalization(_)) => 3,
            Error::Tags(tagstream::TagError::NoPeak { .. }) => 3,
            Error::Tags(tagstream::TagError::EmptyStream) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
