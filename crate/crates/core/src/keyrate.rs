//! Guessing-probability bound, error-correction cost and the asymptotic
//! key rate.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use timebin_sdp::{DataMatrix, SdpProblem, Sense};

use crate::certify::{
    add_state_constraints, new_state, solve_certified, CertifyError, CertifyOptions, ConstraintSet,
    SolveDiagnostics, StateFrame,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeyRateError {
    #[error("joint distribution sums to {0}, not 1")]
    Normalization(f64),
    #[error(transparent)]
    Certify(#[from] CertifyError),
}

/// `H(X|Y)` in bits for a joint table with Alice's outcome as the row.
pub fn conditional_entropy(table: &[Vec<f64>]) -> Result<f64, KeyRateError> {
    let total: f64 = table.iter().flatten().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(KeyRateError::Normalization(total));
    }
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let mut h = 0.0;
    for j in 0..cols {
        let py: f64 = table.iter().filter_map(|r| r.get(j)).sum();
        for row in table {
            let p = row.get(j).copied().unwrap_or(0.0);
            if p > 0.0 {
                h -= p * (p / py).log2();
            }
        }
    }
    Ok(h.max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PguessResult {
    pub p_guess: f64,
    pub h_min: f64,
    pub diagnostics: SolveDiagnostics,
}

/// Certified upper bound on Eve's probability of guessing Alice's
/// time-of-arrival outcome, over all states meeting `cs`.
pub fn pguess_sdp(cs: &ConstraintSet, opts: &CertifyOptions) -> Result<PguessResult, KeyRateError> {
    let d = cs.dimension;
    let frame = StateFrame::new(cs)?;
    let mut p = SdpProblem::new(Sense::Maximize);
    let blocks: Vec<_> = (0..d)
        .map(|x| new_state(&mut p, frame.dim(), opts.complex, &format!("sigma{x}")))
        .collect();
    add_state_constraints(&mut p, &blocks, cs, &frame);
    for (x, &b) in blocks.iter().enumerate() {
        p.add_objective(
            b,
            frame.map(DataMatrix::Entries(
                (0..d).map(|j| (x * d + j, x * d + j, 1.0.into())).collect(),
            )),
        );
    }
    let (bound, diag, _) = solve_certified(&p, opts, "pguess")?;
    let p_guess = bound.clamp(1.0 / d as f64, 1.0);
    Ok(PguessResult {
        p_guess,
        h_min: -p_guess.log2(),
        diagnostics: diag,
    })
}

/// Restriction of `cs` to a block of bins, renormalised by the certified
/// weight of that block.
pub fn subspace_postselect(
    cs: &ConstraintSet,
    bins: Range<usize>,
) -> Result<ConstraintSet, KeyRateError> {
    Ok(cs.restrict(bins)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub dimension: usize,
    pub p_guess: f64,
    pub h_min: f64,
    pub h_x_given_y: f64,
    /// Secret bits per sifted coincidence, before clipping at zero.
    pub bits_per_round: f64,
    pub sifted_rate: f64,
    pub key_rate: f64,
    pub diagnostics: Vec<SolveDiagnostics>,
}

/// Asymptotic rate `f * rate * max(0, H_min - H(X|Y))`, `f` the fraction
/// of rounds spent on the key basis.
pub fn devetak_winter(h_min: f64, h_x_given_y: f64, sifted_rate: f64, key_fraction: f64) -> f64 {
    key_fraction * sifted_rate * (h_min - h_x_given_y).max(0.0)
}

/// Full key-rate pipeline for one constraint set and its key-basis table.
pub fn key_rate(
    cs: &ConstraintSet,
    tt_table: &[Vec<f64>],
    sifted_rate: f64,
    key_fraction: f64,
    opts: &CertifyOptions,
) -> Result<KeyRateReport, KeyRateError> {
    let hxy = conditional_entropy(tt_table)?;
    let pg = pguess_sdp(cs, opts)?;
    Ok(KeyRateReport {
        dimension: cs.dimension,
        p_guess: pg.p_guess,
        h_min: pg.h_min,
        h_x_given_y: hxy,
        bits_per_round: pg.h_min - hxy,
        sifted_rate,
        key_rate: devetak_winter(pg.h_min, hxy, sifted_rate, key_fraction),
        diagnostics: vec![pg.diagnostics],
    })
}
