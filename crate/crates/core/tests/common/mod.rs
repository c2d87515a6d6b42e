#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use timebin_core::certify::{assemble_constraints, ConstraintSet};
use timebin_core::discretize::{Arm, Cell, Delay, DiscretizationConfig, Local, Sign};
use timebin_core::simulate::{oracle_click_matrices, ModelState};
use timebin_core::tagstream::Setting;

pub const TAU: u64 = 433;

/// Point constraints of a state, as from infinitely many coincidences.
pub fn exact(state: &ModelState, arm: Arm) -> ConstraintSet {
    let cfg = DiscretizationConfig::new(TAU, 3, state.dimension, arm);
    assemble_constraints(&oracle_click_matrices(state, &cfg).unwrap(), 3.0).unwrap()
}

/// Time-of-arrival joint distribution, Alice's bin as the row.
pub fn tt_table(state: &ModelState) -> Vec<Vec<f64>> {
    let d = state.dimension;
    (0..d)
        .map(|i| (0..d).map(|j| state.rho[(i * d + j, i * d + j)]).collect())
        .collect()
}

/// Local outcome vectors of a setting that survive post-selection,
/// written out independently of the simulator.
fn outcomes(setting: Setting, d: usize) -> Vec<(Local, Vec<(usize, f64)>)> {
    match setting {
        Setting::Toa => (0..d).map(|p| (Local::Bin(p), vec![(p, 1.0)])).collect(),
        _ => {
            let (k, delay) = if setting == Setting::TsupShort {
                (1, Delay::Short)
            } else {
                (2, Delay::Long)
            };
            let mut out = Vec::new();
            for p in k..d {
                for sign in [Sign::Plus, Sign::Minus] {
                    out.push((
                        Local::sup(delay, sign, p),
                        vec![(p, 0.5), (p - k, 0.5 * sign.value())],
                    ));
                }
            }
            out
        }
    }
}

/// Per-pair probability of every valid cell of a setting pair.
pub fn cell_probabilities(state: &ModelState, sa: Setting, sb: Setting) -> BTreeMap<Cell, f64> {
    let d = state.dimension;
    let mut out = BTreeMap::new();
    for (la, va) in outcomes(sa, d) {
        for (lb, vb) in outcomes(sb, d) {
            let amp: Vec<(usize, f64)> = va
                .iter()
                .flat_map(|&(i, x)| vb.iter().map(move |&(j, y)| (i * d + j, x * y)))
                .collect();
            let p: f64 = amp
                .iter()
                .flat_map(|&(a, x)| amp.iter().map(move |&(b, y)| x * y * state.rho[(a, b)]))
                .sum();
            out.insert(Cell::new(la, lb), p);
        }
    }
    out
}

pub fn haar_unitary(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(d, d, |_, _| {
        Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    });
    g.qr().q()
}

/// Coefficient matrix `psi[a, b]` of a random pure state with Schmidt rank
/// at most `k`: random Schmidt bases, nonnegative coefficients.
pub fn schmidt_rank_state(rng: &mut ChaCha8Rng, d: usize, k: usize) -> DMatrix<Complex64> {
    let u = haar_unitary(rng, d);
    let v = haar_unitary(rng, d);
    let unit = Uniform::new(0.0, 1.0).unwrap();
    let c: Vec<f64> = (0..k).map(|_| unit.sample(rng)).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    DMatrix::from_fn(d, d, |a, b| {
        (0..k).map(|r| u[(a, r)] * v[(b, r)] * (c[r] / norm)).sum()
    })
}

pub fn density(psi: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let d = psi.nrows();
    let v = DVector::from_fn(d * d, |n, _| psi[(n / d, n % d)]);
    &v * v.adjoint()
}

/// `sum_ij |psi_ii psi_jj|` straight from the coefficients.
pub fn direct_witness(psi: &DMatrix<Complex64>) -> f64 {
    (0..psi.nrows())
        .map(|i| psi[(i, i)].norm())
        .sum::<f64>()
        .powi(2)
}
