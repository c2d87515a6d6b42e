//! A small primal-dual interior-point solver for block semidefinite
//! programs over real symmetric and complex Hermitian matrix variables.
//!
//! Every reported bound can be re-checked with [`certified_bound`], which
//! rebuilds the dual slack from the original data and rejects multipliers
//! that are not dual feasible.

mod certificate;
mod error;
mod problem;
mod solver;
mod standard;

pub use certificate::{certified_bound, dual_residual, dual_slacks, verify_dual};
pub use error::{CertificateError, SdpError};
pub use problem::{DataMatrix, HermitianVar, LinearConstraint, Relation, SdpProblem, Sense, VarId};
pub use solver::{
    evaluate, primal_residual, solve, PrimalBlock, SdpSolution, SolverSettings, Status,
};
