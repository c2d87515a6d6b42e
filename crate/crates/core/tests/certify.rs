mod common;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{density, direct_witness, exact, schmidt_rank_state};
use timebin_core::certify::{
    choose_pairs, eof_bound, schmidt_witness, witness_value, CertifyOptions, ConstraintSet,
    PairSet, PairStrategy,
};
use timebin_core::discretize::Arm;
use timebin_core::keyrate::pguess_sdp;
use timebin_core::simulate::ModelState;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn witness_never_exceeds_schmidt_rank(seed in any::<u64>(), k in 1usize..4, di in 0usize..3) {
        let d = [4, 6, 8][di];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = schmidt_rank_state(&mut rng, d, k);
        let direct = direct_witness(&psi);
        let w = witness_value(&density(&psi), d);
        prop_assert!((w - direct).abs() < 1e-12);
        prop_assert!(w <= k as f64 + 1e-9, "W = {} for rank {}", w, k);
    }
}

#[test]
fn witness_is_tight_on_maximally_entangled_blocks() {
    for (d, k) in [(4, 1), (4, 3), (6, 2), (8, 3)] {
        let psi = DMatrix::from_fn(d, d, |a, b| {
            Complex64::from(if a == b && a < k {
                1.0 / (k as f64).sqrt()
            } else {
                0.0
            })
        });
        assert!((witness_value(&density(&psi), d) - k as f64).abs() < 1e-12);
    }
}

#[test]
fn phi_plus_four_is_certified_maximally() {
    let opts = CertifyOptions::default();
    let cs = exact(&ModelState::phi_plus(4), Arm::Nested);
    let w = schmidt_witness(&cs, &opts).unwrap();
    assert!((w.w_min - 4.0).abs() < 1e-3, "{}", w.w_min);
    assert_eq!(w.schmidt_number, 4);
    let e = choose_pairs(&cs, PairStrategy::All, &opts).unwrap();
    assert!((e.eof - 2.0).abs() < 1e-4, "{}", e.eof);
    let pg = pguess_sdp(&cs, &opts).unwrap();
    assert!((pg.p_guess - 0.25).abs() < 1e-6, "{}", pg.p_guess);
}

#[test]
fn maximally_mixed_is_not_certified() {
    let opts = CertifyOptions::default();
    for arm in [Arm::Single, Arm::Nested] {
        let cs = exact(&ModelState::maximally_mixed(4), arm);
        let w = schmidt_witness(&cs, &opts).unwrap();
        assert_eq!(w.schmidt_number, 1);
        assert!((w.w_min - 0.25).abs() < 1e-6, "{}", w.w_min);
        let e = eof_bound(&cs, &PairSet::all(4), &opts).unwrap();
        assert_eq!(e.eof, 0.0);
        let pg = pguess_sdp(&cs, &opts).unwrap();
        assert!((pg.p_guess - 1.0).abs() < 1e-6);
    }
}

/// Checks the returned minimiser against the constraints and returns its
/// witness value.
fn feasible_witness(cs: &ConstraintSet, rho: &DMatrix<Complex64>, tol: f64) -> f64 {
    let d = cs.dimension;
    assert!((rho.trace().re - 1.0).abs() < tol);
    assert!((rho - rho.adjoint()).camax() < tol);
    let lmin = rho.clone().symmetric_eigen().eigenvalues.min();
    assert!(lmin > -tol, "eigenvalue {lmin}");
    for c in &cs.constraints {
        let v = c.cell.vector(d);
        let mut p = 0.0;
        for &(a, x) in &v {
            for &(b, y) in &v {
                p += x * y * rho[(a, b)].re;
            }
        }
        assert!(
            p > c.lower - tol && p < c.upper + tol,
            "{}: {p}",
            c.cell.label()
        );
    }
    witness_value(rho, d)
}

#[test]
fn dephased_state_bound_is_sandwiched() {
    let state = ModelState::new(4, 0.0, 0.92).unwrap();
    let truth = witness_value(&state.rho.map(Complex64::from), 4);
    let expected: f64 = (0..4i32)
        .flat_map(|i| (0..4i32).map(move |j| 0.92f64.powi((i - j).abs()) / 4.0))
        .sum();
    assert!((truth - expected).abs() < 1e-12);
    let cs = exact(&state, Arm::Nested);
    let w = schmidt_witness(&cs, &CertifyOptions::default()).unwrap();
    let primal = feasible_witness(&cs, &w.state, 1e-6);
    assert!(
        w.w_min <= primal + 1e-6 && primal <= w.w_min + 1e-4,
        "{} vs {primal}",
        w.w_min
    );
    assert!(w.w_min <= truth + 1e-6);
    assert!(w.w_min > 3.0);
    assert_eq!(w.schmidt_number, 4);
}

#[test]
fn single_arm_certifies_less_than_nested() {
    let state = ModelState::new(4, 0.0, 0.92).unwrap();
    let opts = CertifyOptions::default();
    let single = schmidt_witness(&exact(&state, Arm::Single), &opts).unwrap();
    let nested = schmidt_witness(&exact(&state, Arm::Nested), &opts).unwrap();
    assert!(single.w_min <= nested.w_min + 1e-6);
}

#[test]
fn complex_and_real_relaxations_agree() {
    let state = ModelState::new(4, 0.05, 0.9).unwrap();
    let cs = exact(&state, Arm::Nested);
    let real = schmidt_witness(&cs, &CertifyOptions::default()).unwrap();
    let complex = schmidt_witness(
        &cs,
        &CertifyOptions {
            complex: true,
            ..CertifyOptions::default()
        },
    )
    .unwrap();
    assert!(
        (real.w_min - complex.w_min).abs() < 1e-5,
        "{} vs {}",
        real.w_min,
        complex.w_min
    );
}

#[test]
fn interval_widening_only_loosens_bounds() {
    let state = ModelState::new(4, 0.05, 0.92).unwrap();
    let cs = exact(&state, Arm::Nested);
    let opts = CertifyOptions::default();
    let tight = schmidt_witness(&cs, &opts).unwrap().w_min;
    let loose = schmidt_witness(&cs.widened(0.01), &opts).unwrap().w_min;
    assert!(loose <= tight + 1e-6, "{loose} > {tight}");
}

#[test]
fn subspace_of_phi_plus_is_phi_plus() {
    let opts = CertifyOptions::default();
    let cs = exact(&ModelState::phi_plus(4), Arm::Nested)
        .restrict(1..3)
        .unwrap();
    assert_eq!(cs.dimension, 2);
    let w = schmidt_witness(&cs, &opts).unwrap();
    assert!((w.w_min - 2.0).abs() < 1e-4, "{}", w.w_min);
    let e = eof_bound(&cs, &PairSet::all(2), &opts).unwrap();
    assert!((e.eof - 1.0).abs() < 1e-4, "{}", e.eof);
}
