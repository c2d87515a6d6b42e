//! Interleaved time frames, post-selection and click-matrix accumulation.
//!
//! Slot `s` (length `tau`) belongs to block `s / L` with `L = d * m`;
//! within a block the `m` interleaved frames take every `m`-th slot, so
//! consecutive bins of a frame are one short interferometer delay apart.

mod clicks;
mod povm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tagstream::{Setting, TagStream};

pub use clicks::{
    normalize, CellRecord, ClickMatrixSet, ClickReport, DiscardStats, GroupRecord, GroupTotal,
    RunRecord,
};
pub use povm::{
    build_povm_family, local_basis, measurement_families, Cell, Delay, FamilyId, Local, PovmFamily,
    Sign,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizeError {
    #[error("invalid discretization: {0}")]
    Config(String),
    #[error("pair with settings {found:?} accumulated into a {declared:?} run")]
    SettingMismatch {
        declared: (Setting, Setting),
        found: (Setting, Setting),
    },
    #[error("basis-click group {0} has no counts")]
    EmptyGroup(FamilyId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Single,
    Nested,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Single => "single",
            Arm::Nested => "nested",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Arm::Single),
            "nested" => Ok(Arm::Nested),
            _ => Err(format!("unknown arm '{s}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscretizationConfig {
    pub tau_ps: u64,
    /// Short interferometer delay in units of `tau`.
    pub delay_multiple: u64,
    pub dimension: usize,
    pub arm: Arm,
    pub origin_ps: u64,
}

impl DiscretizationConfig {
    pub fn new(tau_ps: u64, delay_multiple: u64, dimension: usize, arm: Arm) -> Self {
        DiscretizationConfig {
            tau_ps,
            delay_multiple,
            dimension,
            arm,
            origin_ps: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DiscretizeError> {
        let err = |m: String| Err(DiscretizeError::Config(m));
        if self.tau_ps == 0 {
            return err("tau_ps must be positive".into());
        }
        if self.delay_multiple == 0 {
            return err("delay_multiple must be at least 1".into());
        }
        let d = self.dimension;
        if d < 2 {
            return err(format!("dimension {d} < 2"));
        }
        match self.arm {
            Arm::Single if !d.is_multiple_of(2) => {
                return err(format!("single arm needs even d, got {d}"))
            }
            Arm::Nested if !d.is_multiple_of(4) => return err(format!("d mod 4 != 0 (d = {d})")),
            _ => {}
        }
        let ok = (d as u64)
            .checked_mul(self.delay_multiple)
            .and_then(|l| l.checked_mul(self.tau_ps))
            .is_some();
        if !ok {
            return err("tau * m * d overflows the timestamp range".into());
        }
        Ok(())
    }

    /// Slots per block, `d * m`.
    pub fn block_len(&self) -> u64 {
        self.dimension as u64 * self.delay_multiple
    }

    pub fn frame_len_ps(&self) -> u64 {
        self.dimension as u64 * self.tau_ps
    }
}

/// `(frame_id, bin)` of a slot.
pub fn slot_to_frame(slot: u64, cfg: &DiscretizationConfig) -> (u64, usize) {
    let m = cfg.delay_multiple;
    let l = cfg.block_len();
    let (b, r) = (slot / l, slot % l);
    (b * m + r % m, (r / m) as usize)
}

/// Slot of bin `bin` of frame `frame`. Bins past `d - 1` continue into the
/// following block, where a delayed photon of the frame arrives.
pub fn frame_to_slot(frame: u64, bin: usize, cfg: &DiscretizationConfig) -> u64 {
    let m = cfg.delay_multiple;
    let (b, j) = (frame / m, frame % m);
    b * cfg.block_len() + bin as u64 * m + j
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    pub fn of_channel(ch: u8) -> Self {
        if ch < 2 {
            Party::Alice
        } else {
            Party::Bob
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameEvent {
    pub frame_id: u64,
    pub party: Party,
    pub bin: usize,
    pub sign: Sign,
    pub setting: Setting,
}

impl FrameEvent {
    /// Outcome in the local measurement basis of the event's setting.
    pub fn local(&self) -> Local {
        match self.setting {
            Setting::Toa => Local::Bin(self.bin),
            Setting::TsupShort => Local::sup(Delay::Short, self.sign, self.bin),
            Setting::TsupLong => Local::sup(Delay::Long, self.sign, self.bin),
        }
    }
}

/// Maps every tag to its frame and bin.
///
/// Under a time-of-arrival setting the odd detector sits behind the
/// delayed path, so one short delay is subtracted before slotting.
/// Tags before the origin are dropped.
pub fn bin_events(
    stream: &TagStream,
    cfg: &DiscretizationConfig,
) -> Result<Vec<FrameEvent>, DiscretizeError> {
    cfg.validate()?;
    if cfg.tau_ps < stream.meta().resolution_ps {
        return Err(DiscretizeError::Config(format!(
            "tau {} ps below timestamp resolution {} ps",
            cfg.tau_ps,
            stream.meta().resolution_ps
        )));
    }
    let meta = stream.meta();
    let path_delay = cfg.delay_multiple * cfg.tau_ps;
    let mut out = Vec::with_capacity(stream.len());
    for t in stream.tags() {
        let party = Party::of_channel(t.channel);
        let setting = match party {
            Party::Alice => meta.setting_alice,
            Party::Bob => meta.setting_bob,
        };
        let sign = Sign::from_channel(t.channel);
        let delay = if setting == Setting::Toa && sign == Sign::Minus {
            path_delay
        } else {
            0
        };
        let Some(rel) = t.time_ps.checked_sub(cfg.origin_ps + delay) else {
            continue;
        };
        let (frame_id, bin) = slot_to_frame(rel / cfg.tau_ps, cfg);
        out.push(FrameEvent {
            frame_id,
            party,
            bin,
            sign,
            setting,
        });
    }
    Ok(out)
}

/// A frame with exactly one event per party.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoincidencePair {
    pub frame_id: u64,
    pub alice: FrameEvent,
    pub bob: FrameEvent,
}

impl CoincidencePair {
    pub fn settings(&self) -> (Setting, Setting) {
        (self.alice.setting, self.bob.setting)
    }

    pub fn cell(&self) -> Cell {
        Cell::new(self.alice.local(), self.bob.local())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Postselection {
    pub pairs: Vec<CoincidencePair>,
    pub discards: DiscardStats,
}

/// Keeps frames holding one Alice and one Bob event.
///
/// `total_frames`, when known, lets frames without any event be counted.
pub fn postselect(
    alice: &[FrameEvent],
    bob: &[FrameEvent],
    total_frames: Option<u64>,
) -> Postselection {
    let mut events: Vec<&FrameEvent> = alice.iter().chain(bob).collect();
    events.sort_by_key(|e| e.frame_id);
    let mut out = Postselection::default();
    let mut seen_frames = 0u64;
    for group in events.chunk_by(|a, b| a.frame_id == b.frame_id) {
        seen_frames += 1;
        let na = group.iter().filter(|e| e.party == Party::Alice).count();
        let nb = group.len() - na;
        if na > 1 || nb > 1 {
            out.discards.multi_click += 1;
        } else if na == 0 || nb == 0 {
            out.discards.one_sided += 1;
        } else {
            let (a, b) = if group[0].party == Party::Alice {
                (*group[0], *group[1])
            } else {
                (*group[1], *group[0])
            };
            out.pairs.push(CoincidencePair {
                frame_id: a.frame_id,
                alice: a,
                bob: b,
            });
        }
    }
    out.discards.empty = total_frames.map(|t| t.saturating_sub(seen_frames));
    out.discards.retained = out.pairs.len() as u64;
    out
}

/// Adds the pairs of one run to a fresh click-matrix set.
///
/// Superposition outcomes whose partner bin lies before the frame are
/// counted as `invalid_superposition` discards.
pub fn accumulate(
    post: &Postselection,
    settings: (Setting, Setting),
    cfg: &DiscretizationConfig,
) -> Result<ClickMatrixSet, DiscretizeError> {
    cfg.validate()?;
    let mut cm = ClickMatrixSet::new(cfg.dimension, cfg.arm);
    cm.discards = post.discards.clone();
    cm.discards.retained = 0;
    for p in &post.pairs {
        if p.settings() != settings {
            return Err(DiscretizeError::SettingMismatch {
                declared: settings,
                found: p.settings(),
            });
        }
        let cell = p.cell();
        if cell.is_valid(cfg.dimension) {
            cm.add(cell, 1);
            cm.discards.retained += 1;
        } else {
            cm.discards.invalid_superposition += 1;
        }
    }
    *cm.runs.entry(settings).or_insert(0) += 1;
    Ok(cm)
}

/// Bins, post-selects and accumulates one Alice/Bob run.
pub fn process_run(
    alice: &TagStream,
    bob: &TagStream,
    cfg: &DiscretizationConfig,
) -> Result<ClickMatrixSet, DiscretizeError> {
    let ea = bin_events(alice, cfg)?;
    let eb = bin_events(bob, cfg)?;
    let duration = alice.meta().duration_ps.max(bob.meta().duration_ps);
    let frames = frames_in(duration.saturating_sub(cfg.origin_ps), cfg);
    let post = postselect(&ea, &eb, Some(frames));
    accumulate(
        &post,
        (alice.meta().setting_alice, bob.meta().setting_bob),
        cfg,
    )
}

/// Number of complete frames in `duration_ps`.
pub fn frames_in(duration_ps: u64, cfg: &DiscretizationConfig) -> u64 {
    duration_ps / (cfg.block_len() * cfg.tau_ps) * cfg.delay_multiple
}

/// Picks the origin among `m * d` one-slot offsets that retains the most
/// coincidences, ties going to the smallest offset.
pub fn calibrate_origin(
    alice: &TagStream,
    bob: &TagStream,
    cfg: &DiscretizationConfig,
) -> Result<u64, DiscretizeError> {
    cfg.validate()?;
    let mut best = (0usize, cfg.origin_ps);
    for k in 0..cfg.block_len() {
        let mut trial = *cfg;
        trial.origin_ps = cfg.origin_ps + k * cfg.tau_ps;
        let post = postselect(&bin_events(alice, &trial)?, &bin_events(bob, &trial)?, None);
        if post.pairs.len() > best.0 {
            best = (post.pairs.len(), trial.origin_ps);
        }
    }
    Ok(best.1)
}
