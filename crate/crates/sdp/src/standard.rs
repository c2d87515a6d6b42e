//! Lowering of an [`SdpProblem`] to the real standard form
//!
//! ```text
//! min  sum_b <C_b, X_b> + c'x
//! s.t. sum_b <A_kb, X_b> + a_k'x = b_k,   X_b >= 0, x >= 0
//! ```
//!
//! Complex Hermitian variables of dimension `n` become real blocks of
//! dimension `2n` through `X -> [[Re X, -Im X], [Im X, Re X]]`, with every
//! data matrix mapped the same way and halved so inner products are kept.
//! Constraint matrices are stored as weighted sparse dyads `c v v'`, which
//! keeps the Schur complement assembly proportional to the data sparsity.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::SdpError;
use crate::problem::{DataMatrix, Relation, SdpProblem, Sense};

#[derive(Clone, Debug)]
pub(crate) struct Factor {
    pub row: usize,
    pub coeff: f64,
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl Factor {
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.idx
            .iter()
            .zip(&self.val)
            .map(|(&i, &v)| v * dense[i])
            .sum()
    }

    pub fn dot_sparse(&self, other: &Factor) -> f64 {
        let mut s = 0.0;
        for (&i, &a) in self.idx.iter().zip(&self.val) {
            for (&j, &b) in other.idx.iter().zip(&other.val) {
                if i == j {
                    s += a * b;
                }
            }
        }
        s
    }
}

#[derive(Clone, Debug)]
pub(crate) struct PsdBlock {
    pub dim: usize,
    pub embedded: bool,
    pub c: DMatrix<f64>,
    pub factors: Vec<Factor>,
}

impl PsdBlock {
    pub fn dense_constraint(&self, row: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for f in self.factors.iter().filter(|f| f.row == row) {
            add_dyad(&mut m, f.coeff, &f.idx, &f.val);
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum LpOrigin {
    Var(usize),
    Slack,
}

#[derive(Clone, Debug)]
pub(crate) struct LpVar {
    pub c: f64,
    pub col: Vec<(usize, f64)>,
    pub origin: LpOrigin,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum VarSlot {
    Block(usize),
    Lp(usize),
}

#[derive(Clone, Debug)]
pub(crate) struct StandardForm {
    pub blocks: Vec<PsdBlock>,
    pub lp: Vec<LpVar>,
    pub b: Vec<f64>,
    /// Original constraint index of every retained row.
    pub rows: Vec<usize>,
    pub slots: Vec<VarSlot>,
    /// +1 for minimisation, -1 when a maximisation was negated.
    pub obj_sign: f64,
}

pub(crate) fn add_dyad(m: &mut DMatrix<f64>, coeff: f64, idx: &[usize], val: &[f64]) {
    for (&i, &a) in idx.iter().zip(val) {
        for (&j, &b) in idx.iter().zip(val) {
            m[(i, j)] += coeff * a * b;
        }
    }
}

/// Real symmetric entries (upper triangle) and real dyads of a data matrix
/// after embedding.
struct Lowered {
    entries: BTreeMap<(usize, usize), f64>,
    dyads: Vec<(f64, Vec<usize>, Vec<f64>)>,
}

fn lower(m: &DataMatrix, n: usize, complex: bool) -> Lowered {
    let mut entries = BTreeMap::new();
    let mut dyads = Vec::new();
    let mut put = |i: usize, j: usize, v: f64| {
        if v != 0.0 {
            *entries.entry((i.min(j), i.max(j))).or_insert(0.0) += v;
        }
    };
    match m {
        DataMatrix::Entries(e) => {
            for &(i, j, h) in e {
                if !complex {
                    put(i, j, h.re);
                } else if i == j {
                    put(i, i, 0.5 * h.re);
                    put(n + i, n + i, 0.5 * h.re);
                } else {
                    put(i, j, 0.5 * h.re);
                    put(n + i, n + j, 0.5 * h.re);
                    put(i, n + j, -0.5 * h.im);
                    put(j, n + i, 0.5 * h.im);
                }
            }
        }
        DataMatrix::Dyad { coeff, vec } => {
            if !complex {
                let (idx, val): (Vec<_>, Vec<_>) = vec.iter().map(|&(i, z)| (i, z.re)).unzip();
                dyads.push((*coeff, idx, val));
            } else {
                let mut i1 = Vec::new();
                let mut v1 = Vec::new();
                let mut i2 = Vec::new();
                let mut v2 = Vec::new();
                for &(i, z) in vec {
                    i1.extend([i, n + i]);
                    v1.extend([z.re, z.im]);
                    i2.extend([i, n + i]);
                    v2.extend([-z.im, z.re]);
                }
                dyads.push((0.5 * coeff, i1, v1));
                dyads.push((0.5 * coeff, i2, v2));
            }
        }
    }
    Lowered { entries, dyads }
}

impl StandardForm {
    pub fn build(p: &SdpProblem) -> Result<Self, SdpError> {
        p.validate()?;
        let obj_sign = match p.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut blocks = Vec::new();
        let mut lp = Vec::new();
        let mut slots = Vec::new();
        for (k, v) in p.vars.iter().enumerate() {
            if v.dim == 1 && !v.complex {
                slots.push(VarSlot::Lp(lp.len()));
                lp.push(LpVar {
                    c: 0.0,
                    col: Vec::new(),
                    origin: LpOrigin::Var(k),
                });
            } else {
                let dim = if v.complex { 2 * v.dim } else { v.dim };
                slots.push(VarSlot::Block(blocks.len()));
                blocks.push(PsdBlock {
                    dim,
                    embedded: v.complex,
                    c: DMatrix::zeros(dim, dim),
                    factors: Vec::new(),
                });
            }
        }

        for (var, m) in &p.objective {
            let v = &p.vars[var.0];
            let low = lower(m, v.dim, v.complex);
            match slots[var.0] {
                VarSlot::Lp(j) => lp[j].c += obj_sign * scalar_value(&low),
                VarSlot::Block(bi) => {
                    let c = &mut blocks[bi].c;
                    for (&(i, j), &val) in &low.entries {
                        c[(i, j)] += obj_sign * val;
                        if i != j {
                            c[(j, i)] += obj_sign * val;
                        }
                    }
                    for (coeff, idx, val) in &low.dyads {
                        add_dyad(c, obj_sign * coeff, idx, val);
                    }
                }
            }
        }

        let mut b = Vec::with_capacity(p.constraints.len());
        for (row, con) in p.constraints.iter().enumerate() {
            b.push(con.rhs);
            for (var, m) in &con.terms {
                let v = &p.vars[var.0];
                let low = lower(m, v.dim, v.complex);
                match slots[var.0] {
                    VarSlot::Lp(j) => {
                        let a = scalar_value(&low);
                        if a != 0.0 {
                            lp[j].col.push((row, a));
                        }
                    }
                    VarSlot::Block(bi) => {
                        let fs = &mut blocks[bi].factors;
                        for (&(i, j), &val) in &low.entries {
                            if i == j {
                                fs.push(Factor {
                                    row,
                                    coeff: val,
                                    idx: vec![i],
                                    val: vec![1.0],
                                });
                            } else {
                                // v (e_i e_j' + e_j e_i') as a difference of two dyads
                                fs.push(Factor {
                                    row,
                                    coeff: 0.5 * val,
                                    idx: vec![i, j],
                                    val: vec![1.0, 1.0],
                                });
                                fs.push(Factor {
                                    row,
                                    coeff: -0.5 * val,
                                    idx: vec![i, j],
                                    val: vec![1.0, -1.0],
                                });
                            }
                        }
                        for (coeff, idx, val) in low.dyads {
                            if coeff != 0.0 {
                                fs.push(Factor {
                                    row,
                                    coeff,
                                    idx,
                                    val,
                                });
                            }
                        }
                    }
                }
            }
            match con.relation {
                Relation::Eq => {}
                Relation::Le | Relation::Ge => {
                    let s = if con.relation == Relation::Le {
                        1.0
                    } else {
                        -1.0
                    };
                    lp.push(LpVar {
                        c: 0.0,
                        col: vec![(row, s)],
                        origin: LpOrigin::Slack,
                    });
                }
            }
        }
        let rows = (0..p.constraints.len()).collect();
        Ok(StandardForm {
            blocks,
            lp,
            b,
            rows,
            slots,
            obj_sign,
        })
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// Gram matrix `G_kl = <A_k, A_l>` of the constraint rows.
    pub fn gram(&self) -> DMatrix<f64> {
        let m = self.m();
        let mut g = DMatrix::zeros(m, m);
        for blk in &self.blocks {
            let fs = &blk.factors;
            for r in 0..fs.len() {
                for s in r..fs.len() {
                    let d = fs[r].dot_sparse(&fs[s]);
                    if d == 0.0 {
                        continue;
                    }
                    let v = fs[r].coeff * fs[s].coeff * d * d;
                    let (k, l) = (fs[r].row, fs[s].row);
                    g[(k, l)] += v;
                    if r != s {
                        g[(l, k)] += v;
                    }
                }
            }
        }
        for var in &self.lp {
            for &(k, a) in &var.col {
                for &(l, b) in &var.col {
                    g[(k, l)] += a * b;
                }
            }
        }
        g
    }

    /// Drops linearly dependent rows after checking they are consistent
    /// with the retained ones. Returns `Err(())` for an inconsistent system.
    pub fn drop_dependent_rows(&mut self) -> Result<(), ()> {
        let m = self.m();
        if m == 0 {
            return Ok(());
        }
        let g = self.gram();
        let scale: Vec<f64> = (0..m).map(|k| g[(k, k)].max(0.0).sqrt()).collect();
        let mut zero_rows = Vec::new();
        let mut cand = Vec::new();
        for (k, &s) in scale.iter().enumerate() {
            if s <= 1e-14 {
                zero_rows.push(k);
            } else {
                cand.push(k);
            }
        }
        for &k in &zero_rows {
            if self.b[k].abs() > 1e-9 {
                return Err(());
            }
        }
        // Pivoted Cholesky on the normalised Gram matrix.
        let n = cand.len();
        let gn = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (cand[i], cand[j]);
            g[(a, b)] / (scale[a] * scale[b])
        });
        let mut diag: Vec<f64> = (0..n).map(|i| gn[(i, i)]).collect();
        let mut l: Vec<Vec<f64>> = Vec::new();
        let mut chosen: Vec<usize> = Vec::new();
        let mut used = vec![false; n];
        loop {
            let mut best = None;
            let mut best_val = 1e-10;
            for i in 0..n {
                if !used[i] && diag[i] > best_val {
                    best_val = diag[i];
                    best = Some(i);
                }
            }
            let Some(p) = best else { break };
            used[p] = true;
            let piv = diag[p].sqrt();
            let mut col = vec![0.0; n];
            for i in 0..n {
                if used[i] && i != p {
                    continue;
                }
                let mut s = gn[(i, p)];
                for prev in &l {
                    s -= prev[i] * prev[p];
                }
                col[i] = s / piv;
            }
            for i in 0..n {
                if !used[i] {
                    diag[i] -= col[i] * col[i];
                }
            }
            l.push(col);
            chosen.push(p);
        }
        if chosen.len() == n && zero_rows.is_empty() {
            return Ok(());
        }
        let mut keep: Vec<usize> = chosen.iter().map(|&i| cand[i]).collect();
        keep.sort_unstable();
        let dependent: Vec<usize> = cand
            .iter()
            .copied()
            .filter(|k| keep.binary_search(k).is_err())
            .collect();
        if !dependent.is_empty() {
            let gii = DMatrix::from_fn(keep.len(), keep.len(), |i, j| g[(keep[i], keep[j])]);
            let chol = nalgebra::Cholesky::new(gii).ok_or(())?;
            let bi = DVector::from_iterator(keep.len(), keep.iter().map(|&k| self.b[k]));
            for &k in &dependent {
                let gik = DVector::from_iterator(keep.len(), keep.iter().map(|&i| g[(i, k)]));
                let alpha = chol.solve(&gik);
                let pred = alpha.dot(&bi);
                if (pred - self.b[k]).abs() > 1e-7 * (1.0 + self.b[k].abs()) {
                    return Err(());
                }
            }
        }
        self.retain_rows(&keep);
        Ok(())
    }

    fn retain_rows(&mut self, keep: &[usize]) {
        let mut map = vec![usize::MAX; self.m()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        for blk in &mut self.blocks {
            blk.factors.retain(|f| map[f.row] != usize::MAX);
            for f in &mut blk.factors {
                f.row = map[f.row];
            }
        }
        for var in &mut self.lp {
            var.col.retain(|e| map[e.0] != usize::MAX);
            for e in &mut var.col {
                e.0 = map[e.0];
            }
        }
        self.b = keep.iter().map(|&k| self.b[k]).collect();
        self.rows = keep.iter().map(|&k| self.rows[k]).collect();
    }
}

fn scalar_value(low: &Lowered) -> f64 {
    let e: f64 = low.entries.values().sum();
    let d: f64 = low
        .dyads
        .iter()
        .map(|(c, _, v)| c * v.iter().map(|x| x * x).sum::<f64>())
        .sum();
    e + d
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn embed(x: &DMatrix<Complex64>) -> DMatrix<f64> {
        let n = x.nrows();
        DMatrix::from_fn(2 * n, 2 * n, |i, j| {
            let z = x[(i % n, j % n)];
            match (i < n, j < n) {
                (true, true) | (false, false) => z.re,
                (true, false) => -z.im,
                (false, true) => z.im,
            }
        })
    }

    #[test]
    fn embedding_preserves_inner_products() {
        let x = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.7, 0.0),
                Complex64::new(0.2, -0.1),
                Complex64::new(0.2, 0.1),
                Complex64::new(0.3, 0.0),
            ],
        );
        let mut p = SdpProblem::new(Sense::Minimize);
        let v = p.add_complex_var(2, "x");
        let data = [
            DataMatrix::re_entry(0, 1),
            DataMatrix::im_entry(0, 1),
            DataMatrix::Dyad {
                coeff: 1.5,
                vec: vec![
                    (0, Complex64::new(1.0, 0.0)),
                    (1, Complex64::new(0.5, -0.5)),
                ],
            },
        ];
        for d in &data {
            p.add_constraint(vec![(v, d.clone())], Relation::Eq, 0.0);
        }
        let sf = StandardForm::build(&p).unwrap();
        let ex = embed(&x);
        for (k, d) in data.iter().enumerate() {
            let want = (d.to_dense(2) * &x).trace().re;
            let got = sf.blocks[0].dense_constraint(k).dot(&ex);
            assert!((want - got).abs() < 1e-14, "row {k}: {want} vs {got}");
        }
    }

    #[test]
    fn dependent_rows_are_dropped_when_consistent() {
        let mut p = SdpProblem::new(Sense::Minimize);
        let v = p.add_var(2, "x");
        p.add_constraint(vec![(v, DataMatrix::re_entry(0, 0))], Relation::Eq, 0.25);
        p.add_constraint(vec![(v, DataMatrix::re_entry(1, 1))], Relation::Eq, 0.75);
        p.add_constraint(vec![(v, DataMatrix::identity(2))], Relation::Eq, 1.0);
        let mut sf = StandardForm::build(&p).unwrap();
        sf.drop_dependent_rows().unwrap();
        assert_eq!(sf.m(), 2);

        p.add_constraint(vec![(v, DataMatrix::identity(2))], Relation::Eq, 1.5);
        let mut sf = StandardForm::build(&p).unwrap();
        assert!(sf.drop_dependent_rows().is_err());
    }
}
