mod common;

use common::{exact, tt_table};
use timebin_core::certify::CertifyOptions;
use timebin_core::discretize::Arm;
use timebin_core::keyrate::{conditional_entropy, key_rate, pguess_sdp, subspace_postselect};
use timebin_core::simulate::ModelState;

#[test]
fn isotropic_noise_entropy() {
    let (d, p) = (4usize, 0.2);
    let state = ModelState::new(d, p, 1.0).unwrap();
    let n = (d * d) as f64;
    // Bob's marginal is uniform; given y, x = y with weight (1-p)/d + p/n.
    let same = ((1.0 - p) / d as f64 + p / n) * d as f64;
    let other = p / n * d as f64;
    let h = -same * same.log2() - (d - 1) as f64 * other * other.log2();
    assert!((conditional_entropy(&tt_table(&state)).unwrap() - h).abs() < 1e-12);
}

#[test]
fn phi_plus_yields_log_d_bits() {
    let opts = CertifyOptions::default();
    let state = ModelState::phi_plus(4);
    let r = key_rate(
        &exact(&state, Arm::Nested),
        &tt_table(&state),
        1e6,
        0.5,
        &opts,
    )
    .unwrap();
    assert!(r.h_x_given_y.abs() < 1e-12);
    assert!(
        (r.bits_per_round - 2.0).abs() < 1e-4,
        "{}",
        r.bits_per_round
    );
    assert!((r.key_rate - 1e6).abs() < 100.0);
}

#[test]
fn separable_state_yields_no_key() {
    let opts = CertifyOptions::default();
    let state = ModelState::maximally_mixed(4);
    let r = key_rate(
        &exact(&state, Arm::Nested),
        &tt_table(&state),
        1e6,
        0.5,
        &opts,
    )
    .unwrap();
    assert!((r.p_guess - 1.0).abs() < 1e-6);
    assert_eq!(r.key_rate, 0.0);
}

#[test]
fn guessing_bound_grows_with_noise_and_interval_width() {
    let opts = CertifyOptions::default();
    let clean = pguess_sdp(
        &exact(&ModelState::new(4, 0.0, 0.95).unwrap(), Arm::Nested),
        &opts,
    )
    .unwrap();
    let noisy = pguess_sdp(
        &exact(&ModelState::new(4, 0.0, 0.85).unwrap(), Arm::Nested),
        &opts,
    )
    .unwrap();
    assert!(clean.p_guess < noisy.p_guess);
    let cs = exact(&ModelState::new(4, 0.0, 0.95).unwrap(), Arm::Nested);
    let wide = pguess_sdp(&cs.widened(0.005), &opts).unwrap();
    assert!(wide.p_guess >= clean.p_guess - 1e-7);
    for r in [&clean, &noisy, &wide] {
        assert!((r.h_min + r.p_guess.log2()).abs() < 1e-12);
        assert!(r.p_guess >= 0.25 && r.p_guess <= 1.0);
    }
}

#[test]
fn postselected_block_of_phi_plus_is_phi_plus() {
    let opts = CertifyOptions::default();
    let cs = subspace_postselect(&exact(&ModelState::phi_plus(4), Arm::Nested), 2..4).unwrap();
    let pg = pguess_sdp(&cs, &opts).unwrap();
    assert!((pg.p_guess - 0.5).abs() < 1e-6, "{}", pg.p_guess);
    assert!(subspace_postselect(&cs, 0..3).is_err());
}
