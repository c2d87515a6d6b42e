use thiserror::Error;

use crate::solver::Status;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertificateError {
    #[error("no certificate for a solve that ended with status {0:?}")]
    NotOptimal(Status),
    #[error("dual multiplier count {got} does not match {expected} constraints")]
    SizeMismatch { expected: usize, got: usize },
    #[error("dual certificate rejected: residual {residual:.3e} exceeds {tol:.3e}")]
    Infeasible { residual: f64, tol: f64 },
}
