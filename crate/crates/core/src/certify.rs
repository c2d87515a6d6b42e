//! Density-matrix constraints from click statistics and the certified
//! Schmidt-number witness and entanglement-of-formation bounds.

use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use timebin_sdp::{
    certified_bound, solve, CertificateError, DataMatrix, Relation, SdpError, SdpProblem,
    SdpSolution, Sense, SolverSettings, Status, VarId,
};

use crate::discretize::{Arm, Cell, ClickMatrixSet, DiscretizeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("constraints are infeasible ({0}): data and discretization disagree")]
    Infeasible(String),
    #[error("solver failed on {label}: {status:?}")]
    Solver { label: String, status: Status },
    #[error("invalid problem: {0}")]
    Problem(#[from] SdpError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error("click matrices are not normalized")]
    Unnormalized,
    #[error("bin range {start}..{end} invalid for d = {d}")]
    Range { start: usize, end: usize, d: usize },
    #[error("EoF bound diverges: B = {0} >= sqrt 2")]
    Divergent(f64),
}

/// `Tr(P_cell rho)` lies in `[lower, upper]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constraint {
    pub cell: Cell,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSet {
    pub dimension: usize,
    pub arm: Arm,
    pub constraints: Vec<Constraint>,
    /// Bins of the parent space when restricted to a subspace.
    pub subspace: Option<Range<usize>>,
}

impl ConstraintSet {
    pub fn new(dimension: usize, arm: Arm) -> Self {
        ConstraintSet {
            dimension,
            arm,
            constraints: Vec::new(),
            subspace: None,
        }
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn get(&self, cell: &Cell) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.cell == *cell)
    }

    /// Widens every interval by `delta` on both sides (clipped to `[0, 1]`).
    pub fn widened(&self, delta: f64) -> ConstraintSet {
        let mut out = self.clone();
        for c in &mut out.constraints {
            c.lower = (c.lower - delta).max(0.0);
            c.upper = (c.upper + delta).min(1.0);
        }
        out
    }

    /// Restricts to the bins `range` and renormalises by the certified
    /// weight of that subspace.
    ///
    /// The weight interval comes from the time-of-arrival constraints;
    /// lower ends are divided by its upper end and upper ends by its lower
    /// end.
    pub fn restrict(&self, range: Range<usize>) -> Result<ConstraintSet, CertifyError> {
        let d = self.dimension;
        if range.end > d || range.len() < 2 {
            return Err(CertifyError::Range {
                start: range.start,
                end: range.end,
                d,
            });
        }
        if range.len() == d {
            return Ok(self.clone());
        }
        let inside = |i: usize| range.contains(&i);
        let (mut w_lo, mut w_hi) = (0.0, 0.0);
        let mut found = 0;
        for c in &self.constraints {
            if c.cell.is_tt() && inside(c.cell.alice.bin()) && inside(c.cell.bob.bin()) {
                w_lo += c.lower;
                w_hi += c.upper;
                found += 1;
            }
        }
        w_hi = (w_hi + (range.len() * range.len() - found) as f64).min(1.0);
        if w_lo <= 0.0 {
            return Err(CertifyError::Infeasible(format!(
                "subspace {range:?} has no certified weight"
            )));
        }
        let shift = |i: usize| i - range.start;
        let mut out = ConstraintSet::new(range.len(), self.arm);
        for c in &self.constraints {
            let fits = c.cell.alice.support().into_iter().all(inside)
                && c.cell.bob.support().into_iter().all(inside);
            if !fits {
                continue;
            }
            out.constraints.push(Constraint {
                cell: Cell::new(c.cell.alice.remap(shift), c.cell.bob.remap(shift)),
                lower: (c.lower / w_hi).min(1.0),
                upper: (c.upper / w_lo).min(1.0),
            });
        }
        let base = self.subspace.as_ref().map_or(0, |r| r.start);
        out.subspace = Some(base + range.start..base + range.end);
        Ok(out)
    }
}

/// Turns normalised frequencies into intervals `p +- z sqrt(p(1-p)/N)`,
/// `N` the raw coincidences of the cell's basis-click group.
///
/// Exact click matrices give point constraints. For `p` at 0 or 1 the
/// variance is floored at `1/N` so an unseen outcome is not pinned to
/// probability zero.
pub fn assemble_constraints(cm: &ClickMatrixSet, z: f64) -> Result<ConstraintSet, CertifyError> {
    if !cm.is_normalized() {
        return Err(CertifyError::Unnormalized);
    }
    let mut cs = ConstraintSet::new(cm.dimension, cm.arm);
    for (cell, n) in cm.normalized() {
        let group = cm.group(n.family).ok_or(CertifyError::Unnormalized)?;
        let p = n.value.clamp(0.0, 1.0);
        let half = match group.raw_total {
            None => 0.0,
            Some(0) => return Err(DiscretizeError::EmptyGroup(n.family).into()),
            Some(total) => {
                let nn = total as f64;
                z * (p * (1.0 - p)).max(1.0 / nn).sqrt() / nn.sqrt()
            }
        };
        cs.constraints.push(Constraint {
            cell: *cell,
            lower: (p - half).max(0.0),
            upper: (p + half).min(1.0),
        });
    }
    Ok(cs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertifyOptions {
    pub solver: SolverSettings,
    /// Dual residual accepted when re-verifying certificates.
    pub certificate_tol: f64,
    /// Optimise over complex Hermitian states instead of real symmetric.
    pub complex: bool,
    pub margin: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            solver: SolverSettings {
                gap_tol: 1e-8,
                feas_tol: 1e-9,
                max_iters: 200,
            },
            certificate_tol: 1e-7,
            complex: false,
            margin: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub label: String,
    pub status: String,
    pub iterations: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl SolveDiagnostics {
    fn new(label: &str, sol: &SdpSolution) -> Self {
        SolveDiagnostics {
            label: label.to_string(),
            status: format!("{:?}", sol.status),
            iterations: sol.iterations,
            primal: sol.primal_value,
            dual: sol.dual_value,
            gap: sol.gap,
        }
    }
}

/// Coordinates of the state variable.
///
/// Intervals pinned at zero expose vectors every feasible state
/// annihilates; the state is then parametrised on their orthogonal
/// complement, which keeps exact data strictly feasible.
#[derive(Clone, Debug)]
pub(crate) struct StateFrame {
    n: usize,
    basis: Option<DMatrix<f64>>,
}

const ZERO_PROBABILITY: f64 = 1e-14;

impl StateFrame {
    pub(crate) fn new(cs: &ConstraintSet) -> Result<Self, CertifyError> {
        let d = cs.dimension;
        let n = d * d;
        let mut gram = DMatrix::<f64>::zeros(n, n);
        let mut any = false;
        for c in cs
            .constraints
            .iter()
            .filter(|c| c.upper <= ZERO_PROBABILITY)
        {
            let v = c.cell.vector(d);
            for &(i, a) in &v {
                for &(j, b) in &v {
                    gram[(i, j)] += a * b;
                }
            }
            any = true;
        }
        if !any {
            return Ok(StateFrame { n, basis: None });
        }
        let eig = SymmetricEigen::new(gram);
        let scale = eig.eigenvalues.amax().max(1.0);
        let keep: Vec<usize> = (0..n)
            .filter(|&k| eig.eigenvalues[k] <= 1e-10 * scale)
            .collect();
        if keep.is_empty() {
            return Err(CertifyError::Infeasible("every state is excluded".into()));
        }
        let basis = DMatrix::from_fn(n, keep.len(), |i, k| eig.eigenvectors[(i, keep[k])]);
        Ok(StateFrame {
            n,
            basis: Some(basis),
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.basis.as_ref().map_or(self.n, |b| b.ncols())
    }

    /// `V^T m V` for the frame basis `V`.
    pub(crate) fn map(&self, m: DataMatrix) -> DataMatrix {
        let Some(v) = &self.basis else {
            return m;
        };
        match m {
            DataMatrix::Dyad { coeff, vec } => {
                let mut w = vec![Complex64::new(0.0, 0.0); v.ncols()];
                for (i, a) in vec {
                    for (k, wk) in w.iter_mut().enumerate() {
                        *wk += a * v[(i, k)];
                    }
                }
                DataMatrix::Dyad {
                    coeff,
                    vec: w
                        .into_iter()
                        .enumerate()
                        .filter(|(_, x)| x.norm() > 1e-15)
                        .collect(),
                }
            }
            m => {
                let dense = m.to_dense(self.n);
                let (re, im) = (dense.map(|x| x.re), dense.map(|x| x.im));
                let re = v.transpose() * re * v;
                if im.amax() == 0.0 {
                    DataMatrix::from_dense(&re)
                } else {
                    let im = v.transpose() * im * v;
                    DataMatrix::from_dense_complex(&DMatrix::from_fn(
                        re.nrows(),
                        re.ncols(),
                        |i, j| Complex64::new(re[(i, j)], im[(i, j)]),
                    ))
                }
            }
        }
    }

    /// `V x V^T`, a state of the full space.
    pub(crate) fn lift(&self, x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        match &self.basis {
            None => x.clone(),
            Some(v) => {
                let v = v.map(|a| Complex64::new(a, 0.0));
                &v * x * v.transpose()
            }
        }
    }

    fn is_zero(m: &DataMatrix) -> bool {
        match m {
            DataMatrix::Dyad { vec, .. } => vec.is_empty(),
            DataMatrix::Entries(e) => e.iter().all(|x| x.2.norm() < 1e-15),
        }
    }
}

/// Adds the trace-one condition and every interval of `cs` on the sum of
/// the state `blocks`.
pub(crate) fn add_state_constraints(
    p: &mut SdpProblem,
    blocks: &[VarId],
    cs: &ConstraintSet,
    frame: &StateFrame,
) {
    let d = cs.dimension;
    p.add_constraint(
        blocks
            .iter()
            .map(|&v| (v, DataMatrix::identity(frame.dim())))
            .collect(),
        Relation::Eq,
        1.0,
    );
    for c in &cs.constraints {
        let dyad = frame.map(DataMatrix::real_dyad(1.0, &c.cell.vector(d)));
        if StateFrame::is_zero(&dyad) {
            continue;
        }
        let terms = || {
            blocks
                .iter()
                .map(|&v| (v, dyad.clone()))
                .collect::<Vec<_>>()
        };
        if c.upper - c.lower <= 0.0 {
            p.add_constraint(terms(), Relation::Eq, c.lower);
            continue;
        }
        if c.lower > 0.0 {
            p.add_constraint(terms(), Relation::Ge, c.lower);
        }
        if c.upper < 1.0 {
            p.add_constraint(terms(), Relation::Le, c.upper);
        }
    }
}

pub(crate) fn new_state(p: &mut SdpProblem, n: usize, complex: bool, label: &str) -> VarId {
    if complex {
        p.add_complex_var(n, label)
    } else {
        p.add_var(n, label)
    }
}

/// Epigraph of `|rho[a, b]|`: a 2x2 block `[[u, z], [z*, v]]` with `z`
/// tied to the entry, so `u + v >= 2|z|`. Returns the block.
fn add_modulus_gadget(
    p: &mut SdpProblem,
    rho: VarId,
    frame: &StateFrame,
    (a, b): (usize, usize),
    complex: bool,
    label: String,
) -> VarId {
    let g = new_state(p, 2, complex, &label);
    p.add_constraint(
        vec![
            (g, DataMatrix::re_entry(0, 1)),
            (rho, frame.map(DataMatrix::re_entry(a, b).scaled(-1.0))),
        ],
        Relation::Eq,
        0.0,
    );
    if complex {
        p.add_constraint(
            vec![
                (g, DataMatrix::im_entry(0, 1)),
                (rho, frame.map(DataMatrix::im_entry(a, b).scaled(-1.0))),
            ],
            Relation::Eq,
            0.0,
        );
    }
    g
}

pub(crate) fn solve_certified(
    p: &SdpProblem,
    opts: &CertifyOptions,
    label: &str,
) -> Result<(f64, SolveDiagnostics, SdpSolution), CertifyError> {
    let sol = solve(p, &opts.solver)?;
    let diag = SolveDiagnostics::new(label, &sol);
    match sol.status {
        Status::Optimal => {}
        Status::PrimalInfeasible => return Err(CertifyError::Infeasible(label.to_string())),
        status => {
            return Err(CertifyError::Solver {
                label: label.to_string(),
                status,
            })
        }
    }
    let bound = certified_bound(p, &sol, opts.certificate_tol)?;
    Ok((bound, diag, sol))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WitnessResult {
    pub w_min: f64,
    pub schmidt_number: usize,
    /// Minimising state in the full two-qudit basis.
    pub state: DMatrix<Complex64>,
    pub diagnostics: SolveDiagnostics,
}

/// Minimal witness value `sum_ij |<ii|rho|jj>|` over all states meeting
/// `cs`; a value above `k` certifies Schmidt number at least `k + 1`.
pub fn schmidt_witness(
    cs: &ConstraintSet,
    opts: &CertifyOptions,
) -> Result<WitnessResult, CertifyError> {
    let d = cs.dimension;
    let frame = StateFrame::new(cs)?;
    let mut p = SdpProblem::new(Sense::Minimize);
    let rho = new_state(&mut p, frame.dim(), opts.complex, "rho");
    add_state_constraints(&mut p, &[rho], cs, &frame);
    p.add_objective(
        rho,
        frame.map(DataMatrix::Entries(
            (0..d).map(|i| (i * d + i, i * d + i, 1.0.into())).collect(),
        )),
    );
    for i in 0..d {
        for j in i + 1..d {
            let g = add_modulus_gadget(
                &mut p,
                rho,
                &frame,
                (i * d + i, j * d + j),
                opts.complex,
                format!("t{i}{j}"),
            );
            p.add_objective(g, DataMatrix::identity(2));
        }
    }
    let (w, diag, sol) = solve_certified(&p, opts, "witness")?;
    Ok(WitnessResult {
        w_min: w,
        schmidt_number: schmidt_number(w, d, opts.margin),
        state: frame.lift(&sol.primal[rho.index()].to_complex()),
        diagnostics: diag,
    })
}

/// `sum_ij |<ii|rho|jj>|` of a two-qudit density matrix.
pub fn witness_value(rho: &DMatrix<Complex64>, d: usize) -> f64 {
    (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| rho[(i * d + i, j * d + j)].norm())
        .sum()
}

/// `ceil(w - margin)` clamped to `[1, d]`.
pub fn schmidt_number(w: f64, d: usize, margin: f64) -> usize {
    let k = (w - margin).ceil();
    if k.is_nan() || k < 1.0 {
        1
    } else {
        (k as usize).min(d)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn new(mut pairs: Vec<(usize, usize)>) -> Self {
        for p in &mut pairs {
            if p.0 > p.1 {
                *p = (p.1, p.0);
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        PairSet { pairs }
    }

    /// All `j < k` with `k - j` in `gaps`.
    pub fn with_gaps(d: usize, gaps: &[usize]) -> Self {
        PairSet::new(
            (0..d)
                .flat_map(|j| gaps.iter().map(move |g| (j, j + g)))
                .filter(|&(_, k)| k < d)
                .collect(),
        )
    }

    pub fn all(d: usize) -> Self {
        PairSet::with_gaps(d, &(1..d).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EofResult {
    pub b_min: f64,
    pub eof: f64,
    pub pairs: PairSet,
    pub state: DMatrix<Complex64>,
    pub diagnostics: SolveDiagnostics,
}

/// `-log2(1 - B^2/2)` for `B > 0`, else 0.
pub fn eof_from_b(b: f64) -> Result<f64, CertifyError> {
    if b >= std::f64::consts::SQRT_2 {
        return Err(CertifyError::Divergent(b));
    }
    Ok(if b > 0.0 {
        -(1.0 - b * b / 2.0).log2()
    } else {
        0.0
    })
}

/// Minimal `B = 2/sqrt|C| sum_C (|<jj|rho|kk>| - sqrt(<jk|rho|jk><kj|rho|kj>))`
/// over all states meeting `cs`, and the EoF bound it implies.
pub fn eof_bound(
    cs: &ConstraintSet,
    pairs: &PairSet,
    opts: &CertifyOptions,
) -> Result<EofResult, CertifyError> {
    let d = cs.dimension;
    if pairs.is_empty() || pairs.pairs.iter().any(|&(j, k)| j >= k || k >= d) {
        return Err(CertifyError::Range {
            start: 0,
            end: d,
            d,
        });
    }
    let c = 2.0 / (pairs.len() as f64).sqrt();
    let frame = StateFrame::new(cs)?;
    let mut p = SdpProblem::new(Sense::Minimize);
    let rho = new_state(&mut p, frame.dim(), opts.complex, "rho");
    add_state_constraints(&mut p, &[rho], cs, &frame);
    for &(j, k) in &pairs.pairs {
        let g = add_modulus_gadget(
            &mut p,
            rho,
            &frame,
            (j * d + j, k * d + k),
            opts.complex,
            format!("t{j}{k}"),
        );
        p.add_objective(g, DataMatrix::identity(2).scaled(c / 2.0));
        // s <= sqrt(x y) through [[x, s], [s, y]] >= 0.
        let h = p.add_var(2, format!("s{j}{k}"));
        for (slot, idx) in [(0, j * d + k), (1, k * d + j)] {
            p.add_constraint(
                vec![
                    (h, DataMatrix::re_entry(slot, slot)),
                    (rho, frame.map(DataMatrix::re_entry(idx, idx).scaled(-1.0))),
                ],
                Relation::Eq,
                0.0,
            );
        }
        p.add_objective(h, DataMatrix::re_entry(0, 1).scaled(-c));
    }
    let (b, diag, sol) = solve_certified(&p, opts, "eof")?;
    Ok(EofResult {
        b_min: b,
        eof: eof_from_b(b)?,
        pairs: pairs.clone(),
        state: frame.lift(&sol.primal[rho.index()].to_complex()),
        diagnostics: diag,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStrategy {
    /// Coherences the test bases constrain: neighbours, plus next
    /// neighbours for the nested arm.
    AllMeasured,
    /// Start from the better of `AllMeasured` and `All`, then drop pairs
    /// one at a time while the bound improves.
    Greedy,
    All,
}

pub fn measured_pairs(d: usize, arm: Arm) -> PairSet {
    match arm {
        Arm::Single => PairSet::with_gaps(d, &[1]),
        Arm::Nested => PairSet::with_gaps(d, &[1, 2]),
    }
}

/// Pair set and its EoF result for the given strategy.
pub fn choose_pairs(
    cs: &ConstraintSet,
    strategy: PairStrategy,
    opts: &CertifyOptions,
) -> Result<EofResult, CertifyError> {
    let d = cs.dimension;
    match strategy {
        PairStrategy::All => eof_bound(cs, &PairSet::all(d), opts),
        PairStrategy::AllMeasured => eof_bound(cs, &measured_pairs(d, cs.arm), opts),
        PairStrategy::Greedy => {
            let (measured, all) = rayon::join(
                || eof_bound(cs, &measured_pairs(d, cs.arm), opts),
                || eof_bound(cs, &PairSet::all(d), opts),
            );
            let (measured, all) = (measured?, all?);
            let mut best = if all.b_min > measured.b_min {
                all
            } else {
                measured
            };
            while best.pairs.len() > 1 {
                let trials: Vec<Result<EofResult, CertifyError>> = (0..best.pairs.len())
                    .into_par_iter()
                    .map(|drop| {
                        let mut pairs = best.pairs.pairs.clone();
                        pairs.remove(drop);
                        eof_bound(cs, &PairSet::new(pairs), opts)
                    })
                    .collect();
                let mut improved = None;
                for t in trials {
                    let t = t?;
                    let bar = improved
                        .as_ref()
                        .map_or(best.b_min, |r: &EofResult| r.b_min);
                    if t.b_min > bar + 1e-9 {
                        improved = Some(t);
                    }
                }
                match improved {
                    Some(r) => best = r,
                    None => break,
                }
            }
            Ok(best)
        }
    }
}

/// Ebits per second from the EoF per coincidence and the TOA rate.
pub fn entanglement_rate(eof: f64, toa_coincidence_rate: f64) -> f64 {
    eof * toa_coincidence_rate
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub dimension: usize,
    pub arm: Arm,
    /// Parent bins when certified on a subspace.
    pub subspace: Option<(usize, usize)>,
    pub w_min: f64,
    pub schmidt_number: usize,
    pub b_min: f64,
    pub eof: f64,
    pub pairs: Vec<(usize, usize)>,
    pub toa_rate: f64,
    pub entanglement_rate: f64,
    pub diagnostics: Vec<SolveDiagnostics>,
}

/// Witness and EoF bound for one constraint set.
pub fn certify(
    cs: &ConstraintSet,
    strategy: PairStrategy,
    toa_rate: f64,
    opts: &CertifyOptions,
) -> Result<CertificationReport, CertifyError> {
    let (w, e) = rayon::join(
        || schmidt_witness(cs, opts),
        || choose_pairs(cs, strategy, opts),
    );
    let (w, e) = (w?, e?);
    Ok(CertificationReport {
        dimension: cs.dimension,
        arm: cs.arm,
        subspace: cs.subspace.as_ref().map(|r| (r.start, r.end)),
        w_min: w.w_min,
        schmidt_number: w.schmidt_number,
        b_min: e.b_min,
        eof: e.eof,
        pairs: e.pairs.pairs.clone(),
        toa_rate,
        entanglement_rate: entanglement_rate(e.eof, toa_rate),
        diagnostics: vec![w.diagnostics, e.diagnostics],
    })
}
