//! Independent re-verification of dual certificates against the original
//! problem data.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::CertificateError;
use crate::problem::{Relation, SdpProblem, Sense};
use crate::solver::{SdpSolution, Status};

/// Dual slack `Z_v` of every variable for multipliers `y`.
///
/// Minimisation: `Z = C - sum_k y_k A_k`; maximisation: `Z = sum_k y_k A_k - C`.
pub fn dual_slacks(p: &SdpProblem, y: &[f64]) -> Vec<DMatrix<Complex64>> {
    let s = match p.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut z: Vec<DMatrix<Complex64>> = p
        .vars
        .iter()
        .map(|v| DMatrix::zeros(v.dim, v.dim))
        .collect();
    for (var, m) in &p.objective {
        m.add_to(&mut z[var.0], s);
    }
    for (c, &yk) in p.constraints.iter().zip(y) {
        if yk == 0.0 {
            continue;
        }
        for (var, m) in &c.terms {
            m.add_to(&mut z[var.0], -s * yk);
        }
    }
    z
}

/// Worst violation of dual feasibility: the most negative eigenvalue of
/// any slack and any multiplier with the wrong sign, as a non-negative number.
pub fn dual_residual(p: &SdpProblem, y: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for z in dual_slacks(p, y) {
        let lmin = if z.nrows() == 1 {
            z[(0, 0)].re
        } else {
            let h = (&z + z.adjoint()) * Complex64::new(0.5, 0.0);
            SymmetricEigen::new(h).eigenvalues.min()
        };
        worst = worst.max(-lmin);
    }
    for (c, &yk) in p.constraints.iter().zip(y) {
        // Sign required of y for a Le row; Ge rows take the opposite sign.
        let le_sign = match p.sense {
            Sense::Minimize => -1.0,
            Sense::Maximize => 1.0,
        };
        let viol = match c.relation {
            Relation::Eq => 0.0,
            Relation::Le => (-le_sign * yk).max(0.0),
            Relation::Ge => (le_sign * yk).max(0.0),
        };
        worst = worst.max(viol);
    }
    worst
}

/// Re-verifies the dual multipliers of `sol` against `p` and returns the
/// bound `b'y` they certify: a lower bound on the optimum of a
/// minimisation, an upper bound for a maximisation.
pub fn certified_bound(
    p: &SdpProblem,
    sol: &SdpSolution,
    tol: f64,
) -> Result<f64, CertificateError> {
    if sol.status != Status::Optimal {
        return Err(CertificateError::NotOptimal(sol.status));
    }
    verify_dual(p, &sol.dual, tol)
}

/// Checks arbitrary multipliers `y` and returns `b'y` when they are dual
/// feasible to within `tol`.
pub fn verify_dual(p: &SdpProblem, y: &[f64], tol: f64) -> Result<f64, CertificateError> {
    if y.len() != p.constraints.len() {
        return Err(CertificateError::SizeMismatch {
            expected: p.constraints.len(),
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(CertificateError::Infeasible {
            residual: f64::INFINITY,
            tol,
        });
    }
    let residual = dual_residual(p, y);
    if residual > tol {
        return Err(CertificateError::Infeasible { residual, tol });
    }
    Ok(p.constraints.iter().zip(y).map(|(c, v)| c.rhs * v).sum())
}
