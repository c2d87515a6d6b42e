use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::povm::{Cell, Delay, FamilyId, Local, PovmFamily, Sign};
use super::{Arm, DiscretizeError};
use crate::report::round_sig;
use crate::tagstream::Setting;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardStats {
    pub retained: u64,
    /// Frames without any event; known only when the frame count is.
    pub empty: Option<u64>,
    pub multi_click: u64,
    pub one_sided: u64,
    pub invalid_superposition: u64,
}

impl DiscardStats {
    fn merge(&mut self, o: &DiscardStats) {
        self.retained += o.retained;
        self.empty = match (self.empty, o.empty) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        self.multi_click += o.multi_click;
        self.one_sided += o.one_sided;
        self.invalid_superposition += o.invalid_superposition;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTotal {
    pub family: FamilyId,
    /// Sum of weighted counts the group's cells are divided by.
    pub weighted_total: f64,
    /// Raw coincidences in the group; `None` for exact probabilities.
    pub raw_total: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalized {
    /// Estimate of the projector probability `Tr(P rho)`.
    pub value: f64,
    pub family: FamilyId,
}

/// Coincidence counts per cell, merged over runs, with the normalised
/// frequencies once [`normalize`] has run.
#[derive(Clone, Debug, PartialEq)]
pub struct ClickMatrixSet {
    pub dimension: usize,
    pub arm: Arm,
    counts: BTreeMap<Cell, u64>,
    normalized: BTreeMap<Cell, Normalized>,
    /// Counted cells outside every basis-click group.
    pub unnormalized: BTreeSet<Cell>,
    pub groups: Vec<GroupTotal>,
    pub discards: DiscardStats,
    /// Number of accumulated runs per setting pair.
    pub runs: BTreeMap<(Setting, Setting), u64>,
}

impl ClickMatrixSet {
    pub fn new(dimension: usize, arm: Arm) -> Self {
        ClickMatrixSet {
            dimension,
            arm,
            counts: BTreeMap::new(),
            normalized: BTreeMap::new(),
            unnormalized: BTreeSet::new(),
            groups: Vec::new(),
            discards: DiscardStats::default(),
            runs: BTreeMap::new(),
        }
    }

    /// Exact projector probabilities for every element of `families`,
    /// as if from infinitely many coincidences.
    pub fn exact(
        dimension: usize,
        arm: Arm,
        families: &[PovmFamily],
        prob: impl Fn(&Cell) -> f64,
    ) -> Self {
        let mut cm = ClickMatrixSet::new(dimension, arm);
        for f in families {
            for c in &f.elements {
                let family = if c.is_tt() { FamilyId::TOA } else { f.id };
                cm.normalized.entry(*c).or_insert(Normalized {
                    value: prob(c),
                    family,
                });
            }
            cm.groups.push(GroupTotal {
                family: f.id,
                weighted_total: 1.0,
                raw_total: None,
            });
        }
        cm
    }

    pub fn add(&mut self, cell: Cell, n: u64) {
        *self.counts.entry(cell).or_insert(0) += n;
    }

    pub fn count(&self, cell: &Cell) -> u64 {
        self.counts.get(cell).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<Cell, u64> {
        &self.counts
    }

    pub fn normalized(&self) -> &BTreeMap<Cell, Normalized> {
        &self.normalized
    }

    pub fn is_normalized(&self) -> bool {
        !self.groups.is_empty()
    }

    pub fn group(&self, family: FamilyId) -> Option<&GroupTotal> {
        self.groups.iter().find(|g| g.family == family)
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Adds the counts of another accumulation; normalisation is dropped.
    pub fn merge(&mut self, other: &ClickMatrixSet) {
        assert_eq!(
            (self.dimension, self.arm),
            (other.dimension, other.arm),
            "merging click matrices of different discretizations"
        );
        for (c, n) in &other.counts {
            self.add(*c, *n);
        }
        self.discards.merge(&other.discards);
        for (k, v) in &other.runs {
            *self.runs.entry(*k).or_insert(0) += v;
        }
        self.normalized.clear();
        self.unnormalized.clear();
        self.groups.clear();
    }

    /// Weighted frequencies of one group, each divided by the group total.
    /// These sum to one; time-of-arrival cells are reported in
    /// [`normalized`](Self::normalized) against the time-of-arrival group.
    pub fn group_frequencies(&self, family: &PovmFamily) -> Option<BTreeMap<Cell, f64>> {
        let total = self.group(family.id)?.weighted_total;
        Some(
            family
                .elements
                .iter()
                .map(|c| (*c, c.weight() * self.count(c) as f64 / total))
                .collect(),
        )
    }

    /// TT frequencies as a `d x d` row-major table (Alice index first).
    pub fn tt_table(&self) -> Vec<Vec<f64>> {
        let d = self.dimension;
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        self.normalized
                            .get(&Cell::tt(i, j))
                            .map_or(0.0, |n| n.value)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn to_report(&self) -> ClickReport {
        let cells = self
            .counts
            .keys()
            .chain(self.normalized.keys())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|c| CellRecord {
                label: c.label(),
                alice: c.alice.to_string(),
                bob: c.bob.to_string(),
                count: self.count(c),
                normalized: self.normalized.get(c).map(|n| round_sig(n.value, 9)),
                group: self.normalized.get(c).map(|n| n.family.to_string()),
            })
            .collect();
        ClickReport {
            dimension: self.dimension,
            arm: self.arm,
            discards: self.discards.clone(),
            runs: self
                .runs
                .iter()
                .map(|(&(a, b), &n)| RunRecord {
                    setting_alice: a,
                    setting_bob: b,
                    runs: n,
                })
                .collect(),
            groups: self
                .groups
                .iter()
                .map(|g| GroupRecord {
                    family: g.family.to_string(),
                    weighted_total: round_sig(g.weighted_total, 9),
                    raw_total: g.raw_total,
                })
                .collect(),
            cells,
        }
    }

    /// Rebuilds the counts of a report; normalisation is redone by the
    /// caller with [`normalize`].
    pub fn from_report(r: &ClickReport) -> Result<Self, String> {
        let mut cm = ClickMatrixSet::new(r.dimension, r.arm);
        for c in &r.cells {
            let cell = Cell::new(parse_local(&c.alice)?, parse_local(&c.bob)?);
            if c.count > 0 {
                cm.add(cell, c.count);
            }
        }
        cm.discards = r.discards.clone();
        for run in &r.runs {
            cm.runs
                .insert((run.setting_alice, run.setting_bob), run.runs);
        }
        Ok(cm)
    }
}

/// Parses `3`, `3+`, `3-` (short arm) or `3++`, `3--` (long arm).
pub(crate) fn parse_local(s: &str) -> Result<Local, String> {
    let digits: String = s.chars().take_while(|c| c.is_ascii_digit()).collect();
    let bin: usize = digits.parse().map_err(|_| format!("bad outcome '{s}'"))?;
    let rest = &s[digits.len()..];
    let local = match rest {
        "" => Local::Bin(bin),
        "+" => Local::sup(Delay::Short, Sign::Plus, bin),
        "-" => Local::sup(Delay::Short, Sign::Minus, bin),
        "++" => Local::sup(Delay::Long, Sign::Plus, bin),
        "--" => Local::sup(Delay::Long, Sign::Minus, bin),
        _ => return Err(format!("bad outcome '{s}'")),
    };
    if let Local::Sup { delay, .. } = local {
        if bin < delay.shift() {
            return Err(format!("outcome '{s}' has no partner bin"));
        }
    }
    Ok(local)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub label: String,
    pub alice: String,
    pub bob: String,
    pub count: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub normalized: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub group: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub setting_alice: Setting,
    pub setting_bob: Setting,
    pub runs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub family: String,
    pub weighted_total: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub raw_total: Option<u64>,
}

/// Structured-text form of a [`ClickMatrixSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClickReport {
    pub dimension: usize,
    pub arm: Arm,
    pub discards: DiscardStats,
    #[serde(default)]
    pub runs: Vec<RunRecord>,
    #[serde(default)]
    pub groups: Vec<GroupRecord>,
    #[serde(default)]
    pub cells: Vec<CellRecord>,
}

/// Divides every cell of a basis-click group by the group's weighted
/// total; time-of-arrival cells always use the time-of-arrival group.
pub fn normalize(
    cm: &ClickMatrixSet,
    families: &[PovmFamily],
) -> Result<ClickMatrixSet, DiscretizeError> {
    let mut out = cm.clone();
    out.normalized.clear();
    out.unnormalized.clear();
    out.groups.clear();
    let mut totals: BTreeMap<FamilyId, f64> = BTreeMap::new();
    for f in families {
        let weighted: f64 = f
            .elements
            .iter()
            .map(|c| c.weight() * cm.count(c) as f64)
            .sum();
        let raw: u64 = f.elements.iter().map(|c| cm.count(c)).sum();
        if weighted <= 0.0 {
            return Err(DiscretizeError::EmptyGroup(f.id));
        }
        totals.insert(f.id, weighted);
        out.groups.push(GroupTotal {
            family: f.id,
            weighted_total: weighted,
            raw_total: Some(raw),
        });
    }
    let toa_total = totals.get(&FamilyId::TOA).copied();
    for f in families {
        for c in &f.elements {
            let (family, total) = if c.is_tt() {
                match toa_total {
                    Some(t) => (FamilyId::TOA, t),
                    None => (f.id, totals[&f.id]),
                }
            } else {
                (f.id, totals[&f.id])
            };
            out.normalized.entry(*c).or_insert(Normalized {
                value: c.weight() * cm.count(c) as f64 / total,
                family,
            });
        }
    }
    for c in cm.counts.keys() {
        if !out.normalized.contains_key(c) {
            out.unnormalized.insert(*c);
        }
    }
    Ok(out)
}
