mod common;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use timebin_sdp::{
    certified_bound, solve, verify_dual, CertificateError, DataMatrix, Relation, SdpProblem, Sense,
    SolverSettings, Status,
};

fn settings() -> SolverSettings {
    SolverSettings::default()
}

#[test]
fn trace_one_density_matrix() {
    let mut p = SdpProblem::new(Sense::Minimize);
    let x = p.add_var(2, "rho");
    p.add_objective(x, DataMatrix::identity(2));
    p.add_constraint(vec![(x, DataMatrix::identity(2))], Relation::Eq, 1.0);
    let sol = solve(&p, &settings()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.primal_value - 1.0).abs() < 1e-7);
    assert!((certified_bound(&p, &sol, 1e-7).unwrap() - 1.0).abs() < 1e-7);
}

#[test]
fn smallest_eigenvalue_of_diagonal() {
    let mut p = SdpProblem::new(Sense::Minimize);
    let x = p.add_var(2, "rho");
    p.add_objective(
        x,
        DataMatrix::Entries(vec![(0, 0, 0.3.into()), (1, 1, 0.7.into())]),
    );
    p.add_constraint(vec![(x, DataMatrix::identity(2))], Relation::Eq, 1.0);
    let sol = solve(&p, &settings()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.primal_value - 0.3).abs() < 1e-6);
    assert!((sol.dual_value - 0.3).abs() < 1e-6);
    assert!(sol.primal[0].re(0, 0) > 0.999);
}

#[test]
fn largest_eigenvalue_of_complex_hermitian() {
    // [[1, i], [-i, 1]] has eigenvalues 0 and 2.
    let h = DMatrix::from_row_slice(
        2,
        2,
        &[
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(1.0, 0.0),
        ],
    );
    let mut p = SdpProblem::new(Sense::Maximize);
    let x = p.add_complex_var(2, "rho");
    p.add_objective(x, DataMatrix::from_dense_complex(&h));
    p.add_constraint(vec![(x, DataMatrix::identity(2))], Relation::Eq, 1.0);
    let sol = solve(&p, &settings()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!(
        (sol.primal_value - 2.0).abs() < 1e-6,
        "{}",
        sol.primal_value
    );
    let bound = certified_bound(&p, &sol, 1e-7).unwrap();
    assert!((bound - 2.0).abs() < 1e-6);
    // Top eigenvector (1, -i)/sqrt2 gives rho_01 = i/2.
    let timebin_sdp::PrimalBlock::Complex(rho) = &sol.primal[0] else {
        panic!("complex variable returned a real block")
    };
    assert!((rho[(0, 1)] - Complex64::new(0.0, 0.5)).norm() < 1e-5);
}

#[test]
fn inequality_rows_and_scalars() {
    // max x + y  s.t.  x + 2y <= 4, 3x + y <= 6, x, y >= 0: optimum 14/5.
    let mut p = SdpProblem::new(Sense::Maximize);
    let x = p.add_var(1, "x");
    let y = p.add_var(1, "y");
    p.add_objective(x, DataMatrix::sym_entry(0, 0, 1.0));
    p.add_objective(y, DataMatrix::sym_entry(0, 0, 1.0));
    p.add_constraint(
        vec![
            (x, DataMatrix::sym_entry(0, 0, 1.0)),
            (y, DataMatrix::sym_entry(0, 0, 2.0)),
        ],
        Relation::Le,
        4.0,
    );
    p.add_constraint(
        vec![
            (x, DataMatrix::sym_entry(0, 0, 3.0)),
            (y, DataMatrix::sym_entry(0, 0, 1.0)),
        ],
        Relation::Le,
        6.0,
    );
    let sol = solve(&p, &settings()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.primal_value - 2.8).abs() < 1e-6);
    assert!(sol.dual.iter().all(|&v| v >= 0.0));
    assert!((certified_bound(&p, &sol, 1e-7).unwrap() - 2.8).abs() < 1e-6);
}

#[test]
fn corrupted_dual_is_rejected() {
    let mut p = SdpProblem::new(Sense::Minimize);
    let x = p.add_var(2, "rho");
    p.add_objective(
        x,
        DataMatrix::Entries(vec![(0, 0, 0.3.into()), (1, 1, 0.7.into())]),
    );
    p.add_constraint(vec![(x, DataMatrix::identity(2))], Relation::Eq, 1.0);
    let mut sol = solve(&p, &settings()).unwrap();
    sol.dual[0] += 0.1;
    assert!(matches!(
        certified_bound(&p, &sol, 1e-7),
        Err(CertificateError::Infeasible { .. })
    ));
    assert!(matches!(
        verify_dual(&p, &[0.3, 1.0], 1e-7),
        Err(CertificateError::SizeMismatch {
            expected: 1,
            got: 2
        })
    ));
    sol.status = Status::NumericalFailure;
    assert!(matches!(
        certified_bound(&p, &sol, 1e-7),
        Err(CertificateError::NotOptimal(Status::NumericalFailure))
    ));
}

#[test]
fn inconsistent_equalities_are_infeasible() {
    let mut p = SdpProblem::new(Sense::Minimize);
    let x = p.add_var(2, "rho");
    p.add_objective(x, DataMatrix::identity(2));
    p.add_constraint(vec![(x, DataMatrix::identity(2))], Relation::Eq, 1.0);
    p.add_constraint(
        vec![(x, DataMatrix::identity(2).scaled(2.0))],
        Relation::Eq,
        3.0,
    );
    let sol = solve(&p, &settings()).unwrap();
    assert_eq!(sol.status, Status::PrimalInfeasible);
}

#[test]
fn psd_cone_infeasibility_is_detected() {
    // Tr X = -1 has no PSD solution.
    let mut p = SdpProblem::new(Sense::Minimize);
    let x = p.add_var(3, "X");
    p.add_objective(x, DataMatrix::identity(3));
    p.add_constraint(vec![(x, DataMatrix::identity(3))], Relation::Eq, -1.0);
    let sol = solve(&p, &settings()).unwrap();
    assert_eq!(sol.status, Status::PrimalInfeasible);
}

#[test]
fn unbounded_problem_is_dual_infeasible() {
    // max X_00 s.t. X_11 = 1.
    let mut p = SdpProblem::new(Sense::Maximize);
    let x = p.add_var(2, "X");
    p.add_objective(x, DataMatrix::re_entry(0, 0));
    p.add_constraint(vec![(x, DataMatrix::re_entry(1, 1))], Relation::Eq, 1.0);
    let sol = solve(&p, &settings()).unwrap();
    assert_eq!(sol.status, Status::DualInfeasible);
}

#[test]
fn duplicated_rows_are_tolerated() {
    let mut p = SdpProblem::new(Sense::Minimize);
    let x = p.add_var(2, "rho");
    p.add_objective(x, DataMatrix::re_entry(0, 1).scaled(-1.0));
    for _ in 0..3 {
        p.add_constraint(vec![(x, DataMatrix::identity(2))], Relation::Eq, 1.0);
    }
    let sol = solve(&p, &settings()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.primal_value + 0.5).abs() < 1e-6);
    assert!((certified_bound(&p, &sol, 1e-7).unwrap() + 0.5).abs() < 1e-6);
}

#[test]
fn planted_problems_reach_known_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let case = common::planted(&mut rng);
        let sol = solve(&case.problem, &settings()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.primal_value - case.optimum).abs() < 1e-6 * (1.0 + case.optimum.abs()));
        let bound = certified_bound(&case.problem, &sol, 1e-7).unwrap();
        assert!((bound - case.optimum).abs() < 1e-6 * (1.0 + case.optimum.abs()));
    }
}

#[test]
fn dump_lists_standard_form() {
    let mut p = SdpProblem::new(Sense::Minimize);
    let x = p.add_var(2, "rho");
    let s = p.add_var(1, "t");
    p.add_objective(x, DataMatrix::identity(2));
    p.add_constraint(
        vec![
            (x, DataMatrix::identity(2)),
            (s, DataMatrix::sym_entry(0, 0, 1.0)),
        ],
        Relation::Le,
        1.0,
    );
    let mut out = Vec::new();
    p.dump(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("blocks 1\npsd 2\nlp 2\nconstraints 1\n"));
}
