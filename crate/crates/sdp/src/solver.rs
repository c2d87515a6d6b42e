//! Infeasible-start primal-dual path-following interior point method with
//! the HKM search direction and a Mehrotra predictor-corrector step.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::certificate::dual_residual;
use crate::error::SdpError;
use crate::problem::{SdpProblem, Sense};
use crate::standard::{add_dyad, Factor, LpOrigin, PsdBlock, StandardForm, VarSlot};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    /// Absolute duality-gap tolerance.
    pub gap_tol: f64,
    /// Relative primal/dual residual tolerance.
    pub feas_tol: f64,
    pub max_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            gap_tol: 1e-6,
            feas_tol: 1e-8,
            max_iters: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    /// A Farkas certificate for the primal constraints was found.
    PrimalInfeasible,
    /// The primal is unbounded (dual constraints infeasible).
    DualInfeasible,
    NumericalFailure,
}

impl Status {
    pub fn is_infeasible(self) -> bool {
        matches!(self, Status::PrimalInfeasible | Status::DualInfeasible)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PrimalBlock {
    Real(DMatrix<f64>),
    Complex(DMatrix<Complex64>),
}

impl PrimalBlock {
    /// Real part of entry `(i, j)`.
    pub fn re(&self, i: usize, j: usize) -> f64 {
        match self {
            PrimalBlock::Real(m) => m[(i, j)],
            PrimalBlock::Complex(m) => m[(i, j)].re,
        }
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        match self {
            PrimalBlock::Real(m) => m.map(|v| Complex64::new(v, 0.0)),
            PrimalBlock::Complex(m) => m.clone(),
        }
    }
}

/// Outcome of [`solve`].
///
/// Dual multipliers follow the sense of the problem: for minimisation
/// `C - sum_k y_k A_k >= 0` and `b'y` is a lower bound; for maximisation
/// `sum_k y_k A_k - C >= 0` and `b'y` is an upper bound.
#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: Status,
    pub sense: Sense,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub primal_infeasibility: f64,
    pub dual_feasibility_residual: f64,
    pub iterations: usize,
    /// One entry per variable, indexed by `VarId::index`.
    pub primal: Vec<PrimalBlock>,
    /// One multiplier per constraint; rows found linearly dependent get 0.
    pub dual: Vec<f64>,
}

/// Iterations without a 10% gain in accuracy before giving up.
const STAGNATION_ITERS: usize = 8;
/// Accepted multiple of the tolerances for a stagnated solve.
const REDUCED_ACCURACY: f64 = 1e3;

#[derive(Clone)]
struct Iterate {
    x: Vec<DMatrix<f64>>,
    z: Vec<DMatrix<f64>>,
    xl: DVector<f64>,
    zl: DVector<f64>,
    y: DVector<f64>,
}

fn quad(f: &Factor, x: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for (&a, &va) in f.idx.iter().zip(&f.val) {
        for (&b, &vb) in f.idx.iter().zip(&f.val) {
            s += va * vb * x[(a, b)];
        }
    }
    s
}

fn mat_vec_sparse(x: &DMatrix<f64>, f: &Factor) -> Vec<f64> {
    let n = x.nrows();
    let mut out = vec![0.0; n];
    for (&a, &va) in f.idx.iter().zip(&f.val) {
        let col = x.column(a);
        for i in 0..n {
            out[i] += va * col[i];
        }
    }
    out
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

struct Ops<'a> {
    sf: &'a StandardForm,
}

impl Ops<'_> {
    fn m(&self) -> usize {
        self.sf.m()
    }

    /// A(G) for per-block matrices `g` and LP values `gl`.
    fn apply(&self, g: &[DMatrix<f64>], gl: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m());
        for (blk, gb) in self.sf.blocks.iter().zip(g) {
            for f in &blk.factors {
                out[f.row] += f.coeff * quad(f, gb);
            }
        }
        for (j, var) in self.sf.lp.iter().enumerate() {
            for &(k, a) in &var.col {
                out[k] += a * gl[j];
            }
        }
        out
    }

    fn apply_t(&self, y: &DVector<f64>) -> (Vec<DMatrix<f64>>, DVector<f64>) {
        let blocks = self
            .sf
            .blocks
            .iter()
            .map(|blk| {
                let mut m = DMatrix::zeros(blk.dim, blk.dim);
                for f in &blk.factors {
                    let w = f.coeff * y[f.row];
                    if w != 0.0 {
                        add_dyad(&mut m, w, &f.idx, &f.val);
                    }
                }
                m
            })
            .collect();
        let lp = DVector::from_iterator(
            self.sf.lp.len(),
            self.sf
                .lp
                .iter()
                .map(|v| v.col.iter().map(|&(k, a)| a * y[k]).sum()),
        );
        (blocks, lp)
    }

    /// Schur complement `M_kl = sum_b Tr(A_kb X_b A_lb W_b) + LP terms`.
    fn schur(
        &self,
        x: &[DMatrix<f64>],
        w: &[DMatrix<f64>],
        lp_ratio: &DVector<f64>,
    ) -> DMatrix<f64> {
        let m = self.m();
        let mut mm = DMatrix::zeros(m, m);
        for ((blk, xb), wb) in self.sf.blocks.iter().zip(x).zip(w) {
            schur_block(blk, xb, wb, &mut mm);
        }
        for (j, var) in self.sf.lp.iter().enumerate() {
            for &(k, a) in &var.col {
                for &(l, b) in &var.col {
                    mm[(k, l)] += a * b * lp_ratio[j];
                }
            }
        }
        mm
    }
}

fn schur_block(blk: &PsdBlock, x: &DMatrix<f64>, w: &DMatrix<f64>, mm: &mut DMatrix<f64>) {
    let fs = &blk.factors;
    let xv: Vec<Vec<f64>> = fs.iter().map(|f| mat_vec_sparse(x, f)).collect();
    let wv: Vec<Vec<f64>> = fs.iter().map(|f| mat_vec_sparse(w, f)).collect();
    for r in 0..fs.len() {
        let fr = &fs[r];
        for s in r..fs.len() {
            let p = fr.dot(&xv[s]);
            if p == 0.0 {
                continue;
            }
            let q = fr.dot(&wv[s]);
            let v = fr.coeff * fs[s].coeff * p * q;
            let (k, l) = (fr.row, fs[s].row);
            mm[(k, l)] += v;
            if r != s {
                mm[(l, k)] += v;
            }
        }
    }
}

/// Largest `alpha` keeping `x + alpha dx` positive semidefinite.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(chol) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = chol.l();
    let Some(t) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(s) = l.solve_lower_triangular(&t.transpose()) else {
        return 0.0;
    };
    let lmin = SymmetricEigen::new(sym(&s)).eigenvalues.min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn max_step_lp(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    let mut a = f64::INFINITY;
    for (xi, di) in x.iter().zip(dx.iter()) {
        if *di < 0.0 {
            a = a.min(-xi / di);
        }
    }
    a
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym(m)).eigenvalues.max()
}

/// Solves `p` to the given tolerances.
///
/// The solver is deterministic: identical inputs give identical iterates.
pub fn solve(p: &SdpProblem, settings: &SolverSettings) -> Result<SdpSolution, SdpError> {
    let mut sf = StandardForm::build(p)?;
    if sf.drop_dependent_rows().is_err() {
        return Ok(finish(p, &sf, None, Status::PrimalInfeasible, 0));
    }
    let ops = Ops { sf: &sf };
    let m = sf.m();
    let b = DVector::from_vec(sf.b.clone());
    let nb = sf.blocks.len();
    let nl = sf.lp.len();
    let total_dim: usize = sf.blocks.iter().map(|b| b.dim).sum::<usize>() + nl;
    let c_lp = DVector::from_iterator(nl, sf.lp.iter().map(|v| v.c));

    // Scale-aware starting point.
    let gram = sf.gram();
    let b_norm = b.norm();
    let c_norm =
        (sf.blocks.iter().map(|b| b.c.norm_squared()).sum::<f64>() + c_lp.norm_squared()).sqrt();
    let mut it = {
        let mut x = Vec::with_capacity(nb);
        let mut z = Vec::with_capacity(nb);
        let a_norm_max = (0..m).map(|k| gram[(k, k)].sqrt()).fold(0.0, f64::max);
        for blk in &sf.blocks {
            let n = blk.dim as f64;
            let mut xi: f64 = 10.0f64.max(n.sqrt());
            for k in 0..m {
                let an = gram[(k, k)].sqrt();
                xi = xi.max(n * (1.0 + b[k].abs()) / (1.0 + an));
            }
            let eta = 10.0f64.max(n.sqrt()).max(blk.c.norm()).max(a_norm_max);
            x.push(DMatrix::identity(blk.dim, blk.dim) * xi);
            z.push(DMatrix::identity(blk.dim, blk.dim) * eta);
        }
        let xl_val = 10.0f64.max((1.0 + b.amax()) * 10.0);
        let zl_val = 10.0f64.max(c_lp.amax()).max(a_norm_max);
        Iterate {
            x,
            z,
            xl: DVector::from_element(nl, xl_val),
            zl: DVector::from_element(nl, zl_val),
            y: DVector::zeros(m),
        }
    };

    let mut stalls = 0;
    // Best iterate by the worst ratio of residual to tolerance.
    let mut best: Option<(f64, usize, Iterate)> = None;
    let stagnated = |best: &Option<(f64, usize, Iterate)>, iter: usize| -> Option<SdpSolution> {
        let (merit, at, it) = best.as_ref()?;
        (iter >= at + STAGNATION_ITERS || iter + 1 >= settings.max_iters).then(|| {
            let status = if *merit <= REDUCED_ACCURACY {
                Status::Optimal
            } else {
                Status::NumericalFailure
            };
            finish(p, &sf, Some(it), status, iter)
        })
    };
    for iter in 0..settings.max_iters {
        let ax = ops.apply(&it.x, &it.xl);
        let rp = &b - ax;
        let (aty, aty_l) = ops.apply_t(&it.y);
        let rd: Vec<DMatrix<f64>> = (0..nb)
            .map(|i| &sf.blocks[i].c - &aty[i] - &it.z[i])
            .collect();
        let rd_l = &c_lp - &aty_l - &it.zl;
        let pobj: f64 = (0..nb)
            .map(|i| inner(&sf.blocks[i].c, &it.x[i]))
            .sum::<f64>()
            + c_lp.dot(&it.xl);
        let dobj = b.dot(&it.y);
        let xz: f64 = (0..nb).map(|i| inner(&it.x[i], &it.z[i])).sum::<f64>() + it.xl.dot(&it.zl);
        let mu = xz / total_dim as f64;
        let pinf = rp.norm() / (1.0 + b_norm);
        let dinf = (rd.iter().map(|r| r.norm_squared()).sum::<f64>() + rd_l.norm_squared()).sqrt()
            / (1.0 + c_norm);
        let gap = (pobj - dobj).abs();

        if pinf <= settings.feas_tol
            && dinf <= settings.feas_tol
            && gap <= settings.gap_tol
            && xz <= settings.gap_tol
        {
            return Ok(finish(p, &sf, Some(&it), Status::Optimal, iter));
        }
        let merit = (pinf / settings.feas_tol)
            .max(dinf / settings.feas_tol)
            .max(gap / settings.gap_tol)
            .max(xz / settings.gap_tol);
        if best.as_ref().is_none_or(|b| merit < 0.9 * b.0) {
            best = Some((merit, iter, it.clone()));
        }
        if let Some(sol) = stagnated(&best, iter) {
            return Ok(sol);
        }

        // Farkas-type infeasibility detection on diverging iterates.
        if dobj > 1e6 * (1.0 + c_norm) {
            let yt = &it.y / dobj;
            let (at, at_l) = ops.apply_t(&yt);
            let viol = at
                .iter()
                .map(lambda_max)
                .fold(f64::NEG_INFINITY, f64::max)
                .max(at_l.max());
            if viol <= 1e-7 {
                return Ok(finish(p, &sf, Some(&it), Status::PrimalInfeasible, iter));
            }
        }
        if pobj < -1e6 * (1.0 + b_norm) {
            let scale = -1.0 / pobj;
            let xt: Vec<_> = it.x.iter().map(|x| x * scale).collect();
            let res = ops.apply(&xt, &(&it.xl * scale)).norm();
            if res <= 1e-7 {
                return Ok(finish(p, &sf, Some(&it), Status::DualInfeasible, iter));
            }
        }

        let mut w = Vec::with_capacity(nb);
        for zb in &it.z {
            match Cholesky::new(zb.clone()) {
                Some(ch) => w.push(ch.inverse()),
                None => return Ok(finish(p, &sf, Some(&it), Status::NumericalFailure, iter)),
            }
        }
        let lp_ratio = it.xl.component_div(&it.zl);
        let schur = ops.schur(&it.x, &w, &lp_ratio);
        let Some(schur_chol) = factor_schur(schur) else {
            return Ok(finish(p, &sf, Some(&it), Status::NumericalFailure, iter));
        };

        let xrw: Vec<DMatrix<f64>> = (0..nb).map(|i| &it.x[i] * &rd[i] * &w[i]).collect();
        let xrw_l = it.xl.component_mul(&rd_l).component_div(&it.zl);
        let base_rhs = &b + ops.apply(&xrw, &xrw_l);

        // Predictor (affine scaling).
        let dy = schur_chol.solve(&base_rhs);
        let (atdy, atdy_l) = ops.apply_t(&dy);
        let dz: Vec<DMatrix<f64>> = (0..nb).map(|i| &rd[i] - &atdy[i]).collect();
        let dz_l = &rd_l - &atdy_l;
        let dx: Vec<DMatrix<f64>> = (0..nb)
            .map(|i| sym(&(-&it.x[i] - &it.x[i] * &dz[i] * &w[i])))
            .collect();
        let dx_l = -&it.xl - it.xl.component_mul(&dz_l).component_div(&it.zl);
        let (ap, ad) = step_lengths(&it, &dx, &dx_l, &dz, &dz_l, 1.0);
        let xz_aff: f64 = (0..nb)
            .map(|i| inner(&(&it.x[i] + &dx[i] * ap), &(&it.z[i] + &dz[i] * ad)))
            .sum::<f64>()
            + (&it.xl + &dx_l * ap).dot(&(&it.zl + &dz_l * ad));
        let mu_aff = xz_aff / total_dim as f64;
        let expo = 1.0f64.max(3.0 * ap.min(ad).powi(2));
        let sigma = (mu_aff / mu).max(0.0).powf(expo).min(1.0);

        // Corrector.
        let g: Vec<DMatrix<f64>> = (0..nb).map(|i| &dx[i] * &dz[i] * &w[i]).collect();
        let g_l = dx_l.component_mul(&dz_l).component_div(&it.zl);
        let winv_l = it.zl.map(|v| 1.0 / v);
        let rhs = &base_rhs - ops.apply(&w, &winv_l) * (sigma * mu) + ops.apply(&g, &g_l);
        let dy = schur_chol.solve(&rhs);
        let (atdy, atdy_l) = ops.apply_t(&dy);
        let dz: Vec<DMatrix<f64>> = (0..nb).map(|i| &rd[i] - &atdy[i]).collect();
        let dz_l = &rd_l - &atdy_l;
        let dx: Vec<DMatrix<f64>> = (0..nb)
            .map(|i| sym(&(&w[i] * (sigma * mu) - &it.x[i] - &g[i] - &it.x[i] * &dz[i] * &w[i])))
            .collect();
        let dx_l = (winv_l * (sigma * mu))
            - &it.xl
            - g_l
            - it.xl.component_mul(&dz_l).component_div(&it.zl);
        let gamma = 0.9 + 0.09 * ap.min(ad);
        let (ap, ad) = step_lengths(&it, &dx, &dx_l, &dz, &dz_l, gamma);

        for i in 0..nb {
            it.x[i] += &dx[i] * ap;
            it.z[i] += &dz[i] * ad;
        }
        it.xl += &dx_l * ap;
        it.zl += &dz_l * ad;
        it.y += &dy * ad;

        if ap < 1e-10 && ad < 1e-10 {
            stalls += 1;
            if stalls >= 3 {
                return Ok(finish(
                    p,
                    &sf,
                    Some(&it),
                    Status::NumericalFailure,
                    iter + 1,
                ));
            }
        } else {
            stalls = 0;
        }
    }
    Ok(finish(
        p,
        &sf,
        Some(&it),
        Status::NumericalFailure,
        settings.max_iters,
    ))
}

fn factor_schur(mut m: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    if n == 0 {
        return Cholesky::new(m);
    }
    let dmax = (0..n)
        .map(|i| m[(i, i)].abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut reg = 0.0;
    for _ in 0..6 {
        if let Some(ch) = Cholesky::new(m.clone()) {
            return Some(ch);
        }
        let next = if reg == 0.0 {
            1e-14 * dmax
        } else {
            reg * 100.0
        };
        for i in 0..n {
            m[(i, i)] += next - reg;
        }
        reg = next;
    }
    None
}

fn step_lengths(
    it: &Iterate,
    dx: &[DMatrix<f64>],
    dx_l: &DVector<f64>,
    dz: &[DMatrix<f64>],
    dz_l: &DVector<f64>,
    gamma: f64,
) -> (f64, f64) {
    let mut ap = max_step_lp(&it.xl, dx_l);
    let mut ad = max_step_lp(&it.zl, dz_l);
    for i in 0..it.x.len() {
        ap = ap.min(max_step(&it.x[i], &dx[i]));
        ad = ad.min(max_step(&it.z[i], &dz[i]));
    }
    ((gamma * ap).min(1.0), (gamma * ad).min(1.0))
}

/// Maps the standard-form iterate back onto the problem's variables.
fn finish(
    p: &SdpProblem,
    sf: &StandardForm,
    it: Option<&Iterate>,
    status: Status,
    iterations: usize,
) -> SdpSolution {
    let mut primal = Vec::with_capacity(p.vars.len());
    for (k, var) in p.vars.iter().enumerate() {
        let block = match (it, sf.slots[k]) {
            (None, _) => {
                if var.complex {
                    PrimalBlock::Complex(DMatrix::zeros(var.dim, var.dim))
                } else {
                    PrimalBlock::Real(DMatrix::zeros(var.dim, var.dim))
                }
            }
            (Some(it), VarSlot::Lp(j)) => PrimalBlock::Real(DMatrix::from_element(1, 1, it.xl[j])),
            (Some(it), VarSlot::Block(bi)) => {
                let y = &it.x[bi];
                if sf.blocks[bi].embedded {
                    // Projection onto the embedding structure; exact for
                    // embedded data since it commutes with the symmetry.
                    let n = var.dim;
                    PrimalBlock::Complex(DMatrix::from_fn(n, n, |i, j| {
                        Complex64::new(
                            0.5 * (y[(i, j)] + y[(n + i, n + j)]),
                            0.5 * (y[(n + i, j)] - y[(i, n + j)]),
                        )
                    }))
                } else {
                    PrimalBlock::Real(sym(y))
                }
            }
        };
        primal.push(block);
    }
    debug_assert!(sf
        .lp
        .iter()
        .all(|v| matches!(v.origin, LpOrigin::Var(_) | LpOrigin::Slack)));

    let mut dual = vec![0.0; p.constraints.len()];
    if let Some(it) = it {
        for (row, &orig) in sf.rows.iter().enumerate() {
            dual[orig] = sf.obj_sign * it.y[row];
        }
    }
    let primal_value = objective_value(p, &primal);
    let dual_value: f64 = p
        .constraints
        .iter()
        .zip(&dual)
        .map(|(c, y)| c.rhs * y)
        .sum();
    let primal_infeasibility = primal_residual(p, &primal);
    let dual_feasibility_residual = dual_residual(p, &dual);
    SdpSolution {
        status,
        sense: p.sense,
        primal_value,
        dual_value,
        gap: (primal_value - dual_value).abs(),
        primal_infeasibility,
        dual_feasibility_residual,
        iterations,
        primal,
        dual,
    }
}

fn inner_data(m: &crate::problem::DataMatrix, x: &PrimalBlock) -> f64 {
    use crate::problem::DataMatrix;
    match m {
        DataMatrix::Entries(e) => e
            .iter()
            .map(|&(i, j, h)| match x {
                PrimalBlock::Real(xm) => {
                    if i == j {
                        h.re * xm[(i, i)]
                    } else {
                        2.0 * h.re * xm[(i, j)]
                    }
                }
                PrimalBlock::Complex(xm) => {
                    if i == j {
                        h.re * xm[(i, i)].re
                    } else {
                        // H_ij X_ji + conj(H_ij) X_ij
                        2.0 * (h * xm[(j, i)]).re
                    }
                }
            })
            .sum(),
        DataMatrix::Dyad { coeff, vec } => {
            let mut s = Complex64::new(0.0, 0.0);
            let xm = x.to_complex();
            for &(i, a) in vec {
                for &(j, b) in vec {
                    s += a.conj() * xm[(i, j)] * b;
                }
            }
            coeff * s.re
        }
    }
}

pub(crate) fn objective_value(p: &SdpProblem, primal: &[PrimalBlock]) -> f64 {
    p.objective
        .iter()
        .map(|(v, m)| inner_data(m, &primal[v.0]))
        .sum()
}

/// Largest absolute constraint violation of a primal point (inequality
/// rows count only when violated).
pub fn primal_residual(p: &SdpProblem, primal: &[PrimalBlock]) -> f64 {
    use crate::problem::Relation;
    let mut worst: f64 = 0.0;
    for c in &p.constraints {
        let lhs: f64 = c
            .terms
            .iter()
            .map(|(v, m)| inner_data(m, &primal[v.0]))
            .sum();
        let r = lhs - c.rhs;
        let viol = match c.relation {
            Relation::Eq => r.abs(),
            Relation::Le => r.max(0.0),
            Relation::Ge => (-r).max(0.0),
        };
        worst = worst.max(viol);
    }
    worst
}

/// `<M, X>` for a data matrix and a primal block.
pub fn evaluate(m: &crate::problem::DataMatrix, x: &PrimalBlock) -> f64 {
    inner_data(m, x)
}
