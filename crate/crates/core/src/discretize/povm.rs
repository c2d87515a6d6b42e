//! Local measurement vectors, click-matrix cells and the product POVMs
//! they form.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Arm, DiscretizationConfig, DiscretizeError};

/// Interferometer delay: the short arm superposes bins `i` and `i-1`, the
/// long arm bins `i` and `i-2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Delay {
    Short,
    Long,
}

impl Delay {
    pub fn shift(self) -> usize {
        match self {
            Delay::Short => 1,
            Delay::Long => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    /// Detector parity: even channels are `+`.
    pub fn from_channel(ch: u8) -> Self {
        if ch.is_multiple_of(2) {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

/// One party's outcome: a time bin `|i>` or a superposition
/// `(|i> +- |i-k>)/sqrt2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Local {
    Bin(usize),
    Sup {
        delay: Delay,
        sign: Sign,
        bin: usize,
    },
}

impl Local {
    pub fn sup(delay: Delay, sign: Sign, bin: usize) -> Self {
        Local::Sup { delay, sign, bin }
    }

    /// Weight restoring a projector probability from a click frequency.
    pub fn weight(self) -> f64 {
        match self {
            Local::Bin(_) => 1.0,
            Local::Sup { .. } => 2.0,
        }
    }

    pub fn is_bin(self) -> bool {
        matches!(self, Local::Bin(_))
    }

    pub fn bin(self) -> usize {
        match self {
            Local::Bin(i) | Local::Sup { bin: i, .. } => i,
        }
    }

    /// Bins the vector is supported on.
    pub fn support(self) -> Vec<usize> {
        match self {
            Local::Bin(i) => vec![i],
            Local::Sup { delay, bin, .. } => vec![bin, bin - delay.shift()],
        }
    }

    /// Whether this outcome is a valid vector of a `d`-bin frame.
    pub fn is_valid(self, d: usize) -> bool {
        match self {
            Local::Bin(i) => i < d,
            Local::Sup { delay, bin, .. } => bin < d && bin >= delay.shift(),
        }
    }

    /// Sparse unit vector `(index, amplitude)`.
    pub fn vector(self) -> Vec<(usize, f64)> {
        match self {
            Local::Bin(i) => vec![(i, 1.0)],
            Local::Sup { delay, sign, bin } => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                vec![(bin, a), (bin - delay.shift(), sign.value() * a)]
            }
        }
    }

    /// The same outcome with bins relabelled by `f`.
    pub(crate) fn remap(self, f: impl Fn(usize) -> usize) -> Self {
        match self {
            Local::Bin(i) => Local::Bin(f(i)),
            Local::Sup { delay, sign, bin } => {
                let shift = delay.shift();
                let lo = f(bin - shift);
                Local::Sup {
                    delay,
                    sign,
                    bin: lo + shift,
                }
            }
        }
    }
}

impl fmt::Display for Local {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Local::Bin(i) => write!(f, "{i}"),
            Local::Sup { delay, sign, bin } => {
                let s = sign.symbol();
                match delay {
                    Delay::Short => write!(f, "{bin}{s}"),
                    Delay::Long => write!(f, "{bin}{s}{s}"),
                }
            }
        }
    }
}

/// Joint outcome of one coincidence; indexes the click matrices.
///
/// `TT(i,j)` is `Cell { Bin(i), Bin(j) }`, an `SS` entry has two
/// superposition outcomes and `TS`/`ST` one of each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub alice: Local,
    pub bob: Local,
}

impl Cell {
    pub fn new(alice: Local, bob: Local) -> Self {
        Cell { alice, bob }
    }

    pub fn tt(i: usize, j: usize) -> Self {
        Cell::new(Local::Bin(i), Local::Bin(j))
    }

    pub fn is_tt(&self) -> bool {
        self.alice.is_bin() && self.bob.is_bin()
    }

    /// 1 for TT, 2 for TS/ST, 4 for SS.
    pub fn weight(&self) -> f64 {
        self.alice.weight() * self.bob.weight()
    }

    pub fn is_valid(&self, d: usize) -> bool {
        self.alice.is_valid(d) && self.bob.is_valid(d)
    }

    /// Sparse unit vector on the `d*d` two-party space, `|i,j>` at `i*d + j`.
    pub fn vector(&self, d: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(4);
        for (i, a) in self.alice.vector() {
            for (j, b) in self.bob.vector() {
                out.push((i * d + j, a * b));
            }
        }
        out
    }

    pub fn projector(&self, d: usize) -> DMatrix<f64> {
        let mut v = DVector::<f64>::zeros(d * d);
        for (k, a) in self.vector(d) {
            v[k] += a;
        }
        &v * v.transpose()
    }

    /// Click-matrix label such as `SS_long[+,-](2,3)`.
    pub fn label(&self) -> String {
        let (kind, delay) = match (self.alice, self.bob) {
            (Local::Bin(_), Local::Bin(_)) => ("TT", None),
            (Local::Bin(_), Local::Sup { delay, .. }) => ("TS", Some(delay)),
            (Local::Sup { delay, .. }, Local::Bin(_)) => ("ST", Some(delay)),
            (Local::Sup { delay, .. }, Local::Sup { .. }) => ("SS", Some(delay)),
        };
        match delay {
            None => format!("TT({},{})", self.alice.bin(), self.bob.bin()),
            Some(_) => format!("{kind}({},{})", self.alice, self.bob),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Which POVM a family realises: the time-of-arrival basis or one of the
/// two test bases of an interferometer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FamilyId {
    pub basis: u8,
    /// `None` for the time-of-arrival basis.
    pub delay: Option<Delay>,
}

impl FamilyId {
    pub const TOA: FamilyId = FamilyId {
        basis: 0,
        delay: None,
    };

    pub fn test(basis: u8, delay: Delay) -> Self {
        FamilyId {
            basis,
            delay: Some(delay),
        }
    }
}

impl fmt::Display for FamilyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.delay {
            None => write!(f, "M0"),
            Some(Delay::Short) => write!(f, "M{}", self.basis),
            Some(Delay::Long) => write!(f, "M{}~", self.basis),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PovmFamily {
    pub id: FamilyId,
    pub arm: Arm,
    pub dimension: usize,
    /// Rank-one elements, one per cell, in basis order.
    pub elements: Vec<Cell>,
}

impl PovmFamily {
    pub fn projectors(&self) -> Vec<DMatrix<f64>> {
        self.elements
            .iter()
            .map(|c| c.projector(self.dimension))
            .collect()
    }

    /// Largest entry of `sum - I` and of `P^2 - P` over all elements.
    pub fn residuals(&self) -> (f64, f64) {
        let n = self.dimension * self.dimension;
        let mut sum = DMatrix::<f64>::zeros(n, n);
        let mut idem: f64 = 0.0;
        for p in self.projectors() {
            idem = idem.max((&p * &p - &p).amax());
            sum += p;
        }
        ((sum - DMatrix::identity(n, n)).amax(), idem)
    }

    pub fn contains(&self, cell: &Cell) -> bool {
        self.elements.contains(cell)
    }
}

/// Local orthonormal basis of one party.
pub fn local_basis(d: usize, id: FamilyId) -> Vec<Local> {
    let pm = |delay, bin| {
        [
            Local::sup(delay, Sign::Plus, bin),
            Local::sup(delay, Sign::Minus, bin),
        ]
    };
    match (id.basis, id.delay) {
        (0, _) | (_, None) => (0..d).map(Local::Bin).collect(),
        (1, Some(Delay::Short)) => (0..d / 2)
            .flat_map(|k| pm(Delay::Short, 2 * k + 1))
            .collect(),
        (_, Some(Delay::Short)) => {
            let mut v = vec![Local::Bin(0), Local::Bin(d - 1)];
            v.extend((1..d / 2).flat_map(|k| pm(Delay::Short, 2 * k)));
            v
        }
        (1, Some(Delay::Long)) => (1..=d / 4)
            .flat_map(|k| {
                let [a, b] = pm(Delay::Long, 4 * k - 2);
                let [c, e] = pm(Delay::Long, 4 * k - 1);
                [a, b, c, e]
            })
            .collect(),
        (_, Some(Delay::Long)) => {
            let mut v = vec![
                Local::Bin(0),
                Local::Bin(1),
                Local::Bin(d - 2),
                Local::Bin(d - 1),
            ];
            v.extend((1..d / 4).flat_map(|k| {
                let [a, b] = pm(Delay::Long, 4 * k);
                let [c, e] = pm(Delay::Long, 4 * k + 1);
                [a, b, c, e]
            }));
            v
        }
    }
}

fn product_family(cfg: &DiscretizationConfig, id: FamilyId) -> PovmFamily {
    let d = cfg.dimension;
    let local = local_basis(d, id);
    let elements = local
        .iter()
        .flat_map(|&a| local.iter().map(move |&b| Cell::new(a, b)))
        .collect();
    PovmFamily {
        id,
        arm: cfg.arm,
        dimension: d,
        elements,
    }
}

/// POVM induced by basis `basis_index` of the configured arm: the long
/// interferometer for the nested arm, the short one for the single arm.
pub fn build_povm_family(
    cfg: &DiscretizationConfig,
    basis_index: u8,
) -> Result<PovmFamily, DiscretizeError> {
    cfg.validate()?;
    let id = match (basis_index, cfg.arm) {
        (0, _) => FamilyId::TOA,
        (1 | 2, Arm::Single) => FamilyId::test(basis_index, Delay::Short),
        (1 | 2, Arm::Nested) => FamilyId::test(basis_index, Delay::Long),
        _ => {
            return Err(DiscretizeError::Config(format!(
                "basis index {basis_index} not in 0..=2"
            )))
        }
    };
    Ok(product_family(cfg, id))
}

/// Every distinct POVM available to the arm. The nested arm also keeps
/// the short-interferometer families, since its setup contains them.
/// Families that coincide with the time-of-arrival POVM (all of whose
/// elements are bins) are left out.
pub fn measurement_families(
    cfg: &DiscretizationConfig,
) -> Result<Vec<PovmFamily>, DiscretizeError> {
    cfg.validate()?;
    let mut ids = vec![
        FamilyId::TOA,
        FamilyId::test(1, Delay::Short),
        FamilyId::test(2, Delay::Short),
    ];
    if cfg.arm == Arm::Nested {
        ids.push(FamilyId::test(1, Delay::Long));
        ids.push(FamilyId::test(2, Delay::Long));
    }
    Ok(ids
        .into_iter()
        .map(|id| product_family(cfg, id))
        .filter(|f| f.id == FamilyId::TOA || !f.elements.iter().all(Cell::is_tt))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: usize, arm: Arm) -> DiscretizationConfig {
        DiscretizationConfig::new(433, 3, d, arm)
    }

    #[test]
    fn nested_d4_long_basis_one_uses_bins_two_and_three() {
        let b = local_basis(4, FamilyId::test(1, Delay::Long));
        let bins: Vec<usize> = b.iter().map(|l| l.bin()).collect();
        assert_eq!(bins, vec![2, 2, 3, 3]);
    }

    #[test]
    fn nested_d8_basis_two_has_64_elements() {
        let f = build_povm_family(&cfg(8, Arm::Nested), 2).unwrap();
        assert_eq!(f.elements.len(), 64);
        let (sum, idem) = f.residuals();
        assert!(sum < 1e-12 && idem < 1e-12);
    }

    #[test]
    fn degenerate_families_are_dropped() {
        let ids: Vec<FamilyId> = measurement_families(&cfg(4, Arm::Nested))
            .unwrap()
            .iter()
            .map(|f| f.id)
            .collect();
        assert_eq!(ids.len(), 4);
        assert!(!ids.contains(&FamilyId::test(2, Delay::Long)));
        let single2 = measurement_families(&cfg(2, Arm::Single)).unwrap();
        assert_eq!(single2.len(), 2);
    }

    #[test]
    fn divisibility_is_enforced() {
        assert!(build_povm_family(&cfg(6, Arm::Nested), 1).is_err());
        assert!(build_povm_family(&cfg(5, Arm::Single), 1).is_err());
        assert!(build_povm_family(&cfg(4, Arm::Single), 3).is_err());
    }

    #[test]
    fn labels() {
        let c = Cell::new(
            Local::sup(Delay::Long, Sign::Plus, 2),
            Local::sup(Delay::Long, Sign::Minus, 3),
        );
        assert_eq!(c.label(), "SS(2++,3--)");
        assert_eq!(Cell::tt(1, 0).label(), "TT(1,0)");
        assert_eq!(c.weight(), 4.0);
    }
}
