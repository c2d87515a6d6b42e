//! Problem description: Hermitian matrix variables, linear objective and
//! linear (in)equality constraints.
//!
//! All inner products are `<H, X> = Tr(H X)`, which is real whenever both
//! operands are Hermitian.

use std::io::{self, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::SdpError;
use crate::standard::StandardForm;

/// Handle to a matrix variable inside one [`SdpProblem`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A positive-semidefinite matrix variable.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianVar {
    pub dim: usize,
    pub label: String,
    /// Complex Hermitian if set, real symmetric otherwise.
    pub complex: bool,
}

/// Sparse Hermitian data matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum DataMatrix {
    /// Entries `(row, col, value)`. The mirrored entry `(col, row)` is
    /// implied as the conjugate, so each off-diagonal position is listed
    /// once. Repeated positions are summed.
    Entries(Vec<(usize, usize, Complex64)>),
    /// `coeff * |v><v|` for a sparse vector `v`.
    Dyad {
        coeff: f64,
        vec: Vec<(usize, Complex64)>,
    },
}

impl DataMatrix {
    pub fn zero() -> Self {
        DataMatrix::Entries(Vec::new())
    }

    /// Real symmetric matrix with `value` at `(i, j)` and `(j, i)`.
    pub fn sym_entry(i: usize, j: usize, value: f64) -> Self {
        DataMatrix::Entries(vec![(i, j, Complex64::new(value, 0.0))])
    }

    /// Matrix `H` with `<H, X> = Re X[i, j]`.
    pub fn re_entry(i: usize, j: usize) -> Self {
        if i == j {
            Self::sym_entry(i, i, 1.0)
        } else {
            Self::sym_entry(i, j, 0.5)
        }
    }

    /// Matrix `H` with `<H, X> = Im X[i, j]` (zero for diagonal positions).
    pub fn im_entry(i: usize, j: usize) -> Self {
        if i == j {
            return Self::zero();
        }
        // H[i, j] = i/2, H[j, i] = -i/2 gives Tr(H X) = Im X[i, j].
        DataMatrix::Entries(vec![(i, j, Complex64::new(0.0, 0.5))])
    }

    pub fn identity(n: usize) -> Self {
        DataMatrix::Entries((0..n).map(|i| (i, i, Complex64::new(1.0, 0.0))).collect())
    }

    pub fn real_dyad(coeff: f64, vec: &[(usize, f64)]) -> Self {
        DataMatrix::Dyad {
            coeff,
            vec: vec
                .iter()
                .map(|&(i, v)| (i, Complex64::new(v, 0.0)))
                .collect(),
        }
    }

    /// Upper triangle of a dense real symmetric matrix.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..=j {
                let v = m[(i, j)];
                if v != 0.0 {
                    entries.push((i, j, Complex64::new(v, 0.0)));
                }
            }
        }
        DataMatrix::Entries(entries)
    }

    /// Upper triangle of a dense complex Hermitian matrix.
    pub fn from_dense_complex(m: &DMatrix<Complex64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..=j {
                let v = m[(i, j)];
                if v != Complex64::new(0.0, 0.0) {
                    entries.push((i, j, v));
                }
            }
        }
        DataMatrix::Entries(entries)
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            DataMatrix::Entries(e) => {
                DataMatrix::Entries(e.iter().map(|&(i, j, v)| (i, j, v * s)).collect())
            }
            DataMatrix::Dyad { coeff, vec } => DataMatrix::Dyad {
                coeff: coeff * s,
                vec: vec.clone(),
            },
        }
    }

    pub(crate) fn max_index(&self) -> Option<usize> {
        match self {
            DataMatrix::Entries(e) => e.iter().map(|&(i, j, _)| i.max(j)).max(),
            DataMatrix::Dyad { vec, .. } => vec.iter().map(|&(i, _)| i).max(),
        }
    }

    pub(crate) fn has_imaginary_part(&self) -> bool {
        match self {
            DataMatrix::Entries(e) => e.iter().any(|(_, _, v)| v.im != 0.0),
            DataMatrix::Dyad { vec, .. } => vec.iter().any(|(_, v)| v.im != 0.0),
        }
    }

    /// Dense complex Hermitian form of dimension `n`.
    pub fn to_dense(&self, n: usize) -> DMatrix<Complex64> {
        let mut out = DMatrix::<Complex64>::zeros(n, n);
        self.add_to(&mut out, 1.0);
        out
    }

    /// `out += scale * self`.
    pub fn add_to(&self, out: &mut DMatrix<Complex64>, scale: f64) {
        match self {
            DataMatrix::Entries(e) => {
                for &(i, j, v) in e {
                    if i == j {
                        out[(i, i)] += Complex64::new(v.re * scale, 0.0);
                    } else {
                        out[(i, j)] += v * scale;
                        out[(j, i)] += v.conj() * scale;
                    }
                }
            }
            DataMatrix::Dyad { coeff, vec } => {
                for &(i, a) in vec {
                    for &(j, b) in vec {
                        out[(i, j)] += a * b.conj() * (coeff * scale);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Eq,
    Le,
    Ge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// `sum_v <A_v, X_v>  (relation)  rhs`.
#[derive(Clone, Debug)]
pub struct LinearConstraint {
    pub terms: Vec<(VarId, DataMatrix)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// A block-structured semidefinite program.
///
/// Variables of dimension one that are real are handled as plain
/// non-negative scalars by the solver.
#[derive(Clone, Debug)]
pub struct SdpProblem {
    pub(crate) vars: Vec<HermitianVar>,
    pub(crate) objective: Vec<(VarId, DataMatrix)>,
    pub(crate) constraints: Vec<LinearConstraint>,
    pub(crate) sense: Sense,
}

impl SdpProblem {
    pub fn new(sense: Sense) -> Self {
        SdpProblem {
            vars: Vec::new(),
            objective: Vec::new(),
            constraints: Vec::new(),
            sense,
        }
    }

    pub fn add_var(&mut self, dim: usize, label: impl Into<String>) -> VarId {
        self.push_var(dim, label.into(), false)
    }

    pub fn add_complex_var(&mut self, dim: usize, label: impl Into<String>) -> VarId {
        self.push_var(dim, label.into(), true)
    }

    fn push_var(&mut self, dim: usize, label: String, complex: bool) -> VarId {
        self.vars.push(HermitianVar {
            dim,
            label,
            complex,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn add_objective(&mut self, var: VarId, m: DataMatrix) {
        self.objective.push((var, m));
    }

    pub fn add_constraint(
        &mut self,
        terms: Vec<(VarId, DataMatrix)>,
        relation: Relation,
        rhs: f64,
    ) -> usize {
        self.constraints.push(LinearConstraint {
            terms,
            relation,
            rhs,
        });
        self.constraints.len() - 1
    }

    /// Multiplies every objective coefficient by `s`.
    pub fn scale_objective(&mut self, s: f64) {
        for (_, m) in &mut self.objective {
            *m = m.scaled(s);
        }
    }

    pub fn vars(&self) -> &[HermitianVar] {
        &self.vars
    }

    pub fn var(&self, id: VarId) -> &HermitianVar {
        &self.vars[id.0]
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &[(VarId, DataMatrix)] {
        &self.objective
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    /// Checks dimensions, finiteness and Hermiticity of all data.
    pub fn validate(&self) -> Result<(), SdpError> {
        for (k, v) in self.vars.iter().enumerate() {
            if v.dim == 0 {
                return Err(SdpError::InvalidProblem(format!(
                    "variable {k} has dimension 0"
                )));
            }
        }
        let check = |var: VarId, m: &DataMatrix, what: &str| -> Result<(), SdpError> {
            let v = self.vars.get(var.0).ok_or_else(|| {
                SdpError::InvalidProblem(format!("{what}: unknown variable {}", var.0))
            })?;
            if let Some(mx) = m.max_index() {
                if mx >= v.dim {
                    return Err(SdpError::InvalidProblem(format!(
                        "{what}: index {mx} out of range for '{}' (dim {})",
                        v.label, v.dim
                    )));
                }
            }
            if !v.complex && m.has_imaginary_part() {
                return Err(SdpError::InvalidProblem(format!(
                    "{what}: complex data on real variable '{}'",
                    v.label
                )));
            }
            let finite = match m {
                DataMatrix::Entries(e) => e.iter().all(|(i, j, z)| {
                    z.re.is_finite() && z.im.is_finite() && (i != j || z.im == 0.0)
                }),
                DataMatrix::Dyad { coeff, vec } => {
                    coeff.is_finite()
                        && vec
                            .iter()
                            .all(|(_, z)| z.re.is_finite() && z.im.is_finite())
                }
            };
            if !finite {
                return Err(SdpError::InvalidProblem(format!(
                    "{what}: non-finite or non-Hermitian entry"
                )));
            }
            Ok(())
        };
        for (var, m) in &self.objective {
            check(*var, m, "objective")?;
        }
        for (k, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(SdpError::InvalidProblem(format!(
                    "constraint {k}: non-finite rhs"
                )));
            }
            for (var, m) in &c.terms {
                check(*var, m, &format!("constraint {k}"))?;
            }
        }
        Ok(())
    }

    /// Writes the real standard form `min <C, X> s.t. <A_k, X> = b_k`
    /// as plain text: block dimensions, then every data matrix row-major.
    /// Complex variables appear through their real embedding and
    /// inequality rows carry their slack in the trailing `lp` block.
    pub fn dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        let sf = StandardForm::build(self).map_err(|e| io::Error::other(e.to_string()))?;
        writeln!(w, "blocks {}", sf.blocks.len())?;
        let dims: Vec<String> = sf.blocks.iter().map(|b| b.dim.to_string()).collect();
        writeln!(w, "psd {}", dims.join(" "))?;
        writeln!(w, "lp {}", sf.lp.len())?;
        writeln!(w, "constraints {}", sf.rows.len())?;
        writeln!(w, "objective")?;
        for b in &sf.blocks {
            write_dense(&mut w, &b.c)?;
        }
        let lp_c: Vec<String> = sf.lp.iter().map(|v| fmt(v.c)).collect();
        writeln!(w, "{}", lp_c.join(" "))?;
        for (k, _) in sf.rows.iter().enumerate() {
            writeln!(w, "constraint {k} rhs {}", fmt(sf.b[k]))?;
            for b in &sf.blocks {
                write_dense(&mut w, &b.dense_constraint(k))?;
            }
            let lp: Vec<String> = sf
                .lp
                .iter()
                .map(|v| fmt(v.col.iter().filter(|e| e.0 == k).map(|e| e.1).sum()))
                .collect();
            writeln!(w, "{}", lp.join(" "))?;
        }
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

fn write_dense<W: Write>(w: &mut W, m: &DMatrix<f64>) -> io::Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}
