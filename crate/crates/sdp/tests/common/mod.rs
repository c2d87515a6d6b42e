#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use timebin_sdp::{DataMatrix, Relation, SdpProblem, Sense, VarId};

pub struct Planted {
    pub problem: SdpProblem,
    pub optimum: f64,
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    g.qr().q()
}

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&g + g.transpose()) * 0.5
}

/// Random SDP with a strictly complementary optimal pair planted through
/// the optimality conditions, so its optimum is known in closed form.
pub fn planted(rng: &mut ChaCha8Rng) -> Planted {
    let nblocks = rng.random_range(1..=3);
    let dims: Vec<usize> = (0..nblocks).map(|_| rng.random_range(2..=6)).collect();
    let nlp = rng.random_range(0..=3);
    let m = rng.random_range(1..=8);
    let sense = if rng.random_bool(0.5) {
        Sense::Minimize
    } else {
        Sense::Maximize
    };
    let mut p = SdpProblem::new(sense);
    let vars: Vec<VarId> = dims
        .iter()
        .enumerate()
        .map(|(i, &n)| p.add_var(n, format!("X{i}")))
        .collect();
    let lps: Vec<VarId> = (0..nlp).map(|i| p.add_var(1, format!("x{i}"))).collect();

    let mut xs = Vec::new();
    let mut zs = Vec::new();
    for &n in &dims {
        let q = random_orthogonal(n, rng);
        let r = rng.random_range(1..n);
        let lam = DVector::from_fn(n, |i, _| {
            if i < r {
                rng.random_range(0.5..2.0)
            } else {
                0.0
            }
        });
        let mu = DVector::from_fn(n, |i, _| {
            if i < r {
                0.0
            } else {
                rng.random_range(0.5..2.0)
            }
        });
        xs.push(&q * DMatrix::from_diagonal(&lam) * q.transpose());
        zs.push(&q * DMatrix::from_diagonal(&mu) * q.transpose());
    }
    let xl: Vec<f64> = (0..nlp)
        .map(|i| {
            if i % 2 == 0 {
                rng.random_range(0.5..2.0)
            } else {
                0.0
            }
        })
        .collect();
    let zl: Vec<f64> = (0..nlp)
        .map(|i| {
            if i % 2 == 0 {
                0.0
            } else {
                rng.random_range(0.5..2.0)
            }
        })
        .collect();
    let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();

    // Minimisation data: C = Z + sum y_k A_k. A maximisation of -C has the
    // same feasible set and optimum of opposite sign.
    let mut c: Vec<DMatrix<f64>> = zs.clone();
    let mut cl = zl.clone();
    for &yk in &y {
        let mut terms = Vec::new();
        let mut rhs = 0.0;
        for (bi, &n) in dims.iter().enumerate() {
            let a = random_symmetric(n, rng);
            rhs += a.dot(&xs[bi]);
            c[bi] += &a * yk;
            terms.push((vars[bi], DataMatrix::from_dense(&a)));
        }
        for (j, &v) in lps.iter().enumerate() {
            let a = rng.random_range(-1.0..1.0);
            rhs += a * xl[j];
            cl[j] += a * yk;
            terms.push((v, DataMatrix::sym_entry(0, 0, a)));
        }
        p.add_constraint(terms, Relation::Eq, rhs);
    }
    let s = if sense == Sense::Minimize { 1.0 } else { -1.0 };
    let mut optimum = 0.0;
    for (bi, cb) in c.iter().enumerate() {
        optimum += cb.dot(&xs[bi]);
        p.add_objective(vars[bi], DataMatrix::from_dense(&(cb * s)));
    }
    for (j, &v) in lps.iter().enumerate() {
        optimum += cl[j] * xl[j];
        p.add_objective(v, DataMatrix::sym_entry(0, 0, s * cl[j]));
    }
    Planted {
        problem: p,
        optimum: s * optimum,
    }
}
