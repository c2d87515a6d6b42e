//! Parametric source and detector model: exact click probabilities and
//! Monte Carlo time-tag streams.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::{
    frame_to_slot, frames_in, measurement_families, Cell, ClickMatrixSet, DiscretizationConfig,
    Sign,
};
use crate::tagstream::{RunMetadata, Setting, TagStream, TimeTag};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error("dimension mismatch: state has d = {state}, element needs d = {element}")]
    Dimension { state: usize, element: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub dimension: usize,
    pub isotropic_noise: f64,
    pub dephasing_visibility: f64,
    /// Generated pairs per second.
    pub pair_rate: f64,
    pub coherence_time_ps: f64,
}

impl SourceModel {
    pub fn state(&self) -> Result<ModelState, SimError> {
        ModelState::new(
            self.dimension,
            self.isotropic_noise,
            self.dephasing_visibility,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    pub efficiency_alice: f64,
    pub efficiency_bob: f64,
    pub jitter_sigma_ps: f64,
    /// Dark counts per second and channel.
    pub dark_rate: f64,
    pub deadtime_ps: u64,
    pub resolution_ps: u64,
}

impl DetectorModel {
    pub fn ideal() -> Self {
        DetectorModel {
            efficiency_alice: 1.0,
            efficiency_bob: 1.0,
            jitter_sigma_ps: 0.0,
            dark_rate: 0.0,
            deadtime_ps: 0,
            resolution_ps: 1,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let eff = |e: f64| (0.0..=1.0).contains(&e);
        if !eff(self.efficiency_alice) || !eff(self.efficiency_bob) {
            return Err(SimError::Config("efficiency outside [0, 1]".into()));
        }
        if !(self.jitter_sigma_ps >= 0.0 && self.dark_rate >= 0.0) {
            return Err(SimError::Config("negative jitter or dark rate".into()));
        }
        if self.resolution_ps == 0 {
            return Err(SimError::Config("resolution_ps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Two-qudit density matrix, `|i,j>` at index `i*d + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub dimension: usize,
    pub rho: DMatrix<f64>,
}

impl ModelState {
    /// `p_iso I/d^2 + (1-p_iso) rho_V` where `rho_V` keeps the correlated
    /// subspace with coherences `V^|i-j| / d`.
    pub fn new(d: usize, p_iso: f64, visibility: f64) -> Result<Self, SimError> {
        if d < 2 {
            return Err(SimError::Config(format!("dimension {d} < 2")));
        }
        if !(0.0..=1.0).contains(&p_iso) || !(0.0..=1.0).contains(&visibility) {
            return Err(SimError::Config("noise parameters outside [0, 1]".into()));
        }
        let n = d * d;
        let mut rho = DMatrix::identity(n, n) * (p_iso / n as f64);
        for i in 0..d {
            for j in 0..d {
                rho[(i * d + i, j * d + j)] +=
                    (1.0 - p_iso) * visibility.powi(i.abs_diff(j) as i32) / d as f64;
            }
        }
        Self::from_matrix(d, rho)
    }

    pub fn phi_plus(d: usize) -> Self {
        Self::new(d, 0.0, 1.0).expect("valid")
    }

    pub fn maximally_mixed(d: usize) -> Self {
        Self::new(d, 1.0, 1.0).expect("valid")
    }

    /// Checks symmetry, unit trace and positivity.
    pub fn from_matrix(d: usize, rho: DMatrix<f64>) -> Result<Self, SimError> {
        if rho.nrows() != d * d || rho.ncols() != d * d {
            return Err(SimError::Dimension {
                state: rho.nrows(),
                element: d * d,
            });
        }
        if (&rho - rho.transpose()).amax() > 1e-12 || (rho.trace() - 1.0).abs() > 1e-10 {
            return Err(SimError::Config(
                "state is not a unit-trace symmetric matrix".into(),
            ));
        }
        let lmin = SymmetricEigen::new(rho.clone()).eigenvalues.min();
        if lmin < -1e-10 {
            return Err(SimError::Config(format!(
                "state not PSD (eigenvalue {lmin:.3e})"
            )));
        }
        Ok(ModelState { dimension: d, rho })
    }

    /// `<v| rho |v>` for a sparse real vector.
    pub fn expectation(&self, v: &[(usize, f64)]) -> f64 {
        let mut s = 0.0;
        for &(a, x) in v {
            for &(b, y) in v {
                s += x * y * self.rho[(a, b)];
            }
        }
        s
    }

    /// `Tr(P rho)` for the projector of `cell`.
    pub fn projector_probability(&self, cell: &Cell) -> f64 {
        self.expectation(&cell.vector(self.dimension))
    }
}

/// Click probability of `cell` in its setting pair: the projector
/// probability times 1, 1/2 or 1/4 for TT, TS/ST and SS.
pub fn exact_probability(state: &ModelState, cell: &Cell, d: usize) -> Result<f64, SimError> {
    if d != state.dimension || !cell.is_valid(d) {
        return Err(SimError::Dimension {
            state: state.dimension,
            element: d,
        });
    }
    Ok(state.projector_probability(cell) / cell.weight())
}

/// Exact normalised click matrices for every POVM of the configured arm.
pub fn oracle_click_matrices(
    state: &ModelState,
    cfg: &DiscretizationConfig,
) -> Result<ClickMatrixSet, SimError> {
    if state.dimension != cfg.dimension {
        return Err(SimError::Dimension {
            state: state.dimension,
            element: cfg.dimension,
        });
    }
    let fams = measurement_families(cfg).map_err(|e| SimError::Config(e.to_string()))?;
    Ok(ClickMatrixSet::exact(cfg.dimension, cfg.arm, &fams, |c| {
        state.projector_probability(c)
    }))
}

/// One detector outcome of a party.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOutcome {
    /// Amplitudes with the beam-splitter factors included, so the outcome
    /// operators `|v><v|` of one setting sum to the identity.
    pub amplitudes: Vec<(usize, f64)>,
    /// Bin the click is recorded in; may exceed `d - 1`.
    pub bin: usize,
    /// Odd detector (`-` port or delayed time-of-arrival path).
    pub odd: bool,
    /// Whether the click arrives one short delay late.
    pub delayed: bool,
}

pub fn local_outcomes(setting: Setting, d: usize) -> Vec<LocalOutcome> {
    let mut out = Vec::new();
    match setting {
        Setting::Toa => {
            let a = std::f64::consts::FRAC_1_SQRT_2;
            for p in 0..d {
                for delayed in [false, true] {
                    out.push(LocalOutcome {
                        amplitudes: vec![(p, a)],
                        bin: p,
                        odd: delayed,
                        delayed,
                    });
                }
            }
        }
        Setting::TsupShort | Setting::TsupLong => {
            let k = setting.shift();
            for p in 0..d + k {
                for sign in [Sign::Plus, Sign::Minus] {
                    let mut amps = Vec::with_capacity(2);
                    if p < d {
                        amps.push((p, 0.5));
                    }
                    if p >= k && p - k < d {
                        amps.push((p - k, 0.5 * sign.value()));
                    }
                    out.push(LocalOutcome {
                        amplitudes: amps,
                        bin: p,
                        odd: sign == Sign::Minus,
                        delayed: false,
                    });
                }
            }
        }
    }
    out
}

/// Alice's outcomes, Bob's outcomes and the joint probabilities.
pub type JointTable = (
    Vec<LocalOutcome>,
    Vec<LocalOutcome>,
    Vec<(f64, usize, usize)>,
);

/// Joint outcome distribution of a setting pair as
/// `(probability, alice index, bob index)` into [`local_outcomes`].
pub fn joint_table(state: &ModelState, sa: Setting, sb: Setting) -> JointTable {
    let d = state.dimension;
    let la = local_outcomes(sa, d);
    let lb = local_outcomes(sb, d);
    let mut table = Vec::with_capacity(la.len() * lb.len());
    for (ia, a) in la.iter().enumerate() {
        for (ib, b) in lb.iter().enumerate() {
            let v: Vec<(usize, f64)> = a
                .amplitudes
                .iter()
                .flat_map(|&(i, x)| b.amplitudes.iter().map(move |&(j, y)| (i * d + j, x * y)))
                .collect();
            table.push((state.expectation(&v).max(0.0), ia, ib));
        }
    }
    (la, lb, table)
}

const CHUNK_FRAMES: u64 = 1 << 14;

/// Simulates one run with a fixed setting pair.
///
/// Pairs per frame are Poisson with mean `pair_rate * d * tau`; a pair's
/// joint outcome follows [`joint_table`]. Both photons share the emission
/// instant inside their slot and get independent Gaussian jitter.
pub fn sample_run(
    source: &SourceModel,
    det: &DetectorModel,
    cfg: &DiscretizationConfig,
    settings: (Setting, Setting),
    duration_ps: u64,
    seed: u64,
) -> Result<(TagStream, TagStream), SimError> {
    cfg.validate()
        .map_err(|e| SimError::Config(e.to_string()))?;
    det.validate()?;
    if source.dimension != cfg.dimension {
        return Err(SimError::Config(format!(
            "source dimension {} differs from discretization dimension {}",
            source.dimension, cfg.dimension
        )));
    }
    let span = (cfg.dimension as u64 * cfg.delay_multiple * cfg.tau_ps) as f64;
    if source.coherence_time_ps <= span {
        return Err(SimError::Config(format!(
            "coherence time {} ps does not exceed d * delay = {span} ps",
            source.coherence_time_ps
        )));
    }
    if source.pair_rate.is_nan() || source.pair_rate < 0.0 || duration_ps == 0 {
        return Err(SimError::Config(
            "pair rate and duration must be positive".into(),
        ));
    }
    let state = source.state()?;
    let (la, lb, table) = joint_table(&state, settings.0, settings.1);
    let weights: Vec<f64> = table.iter().map(|t| t.0).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| SimError::Config(e.to_string()))?;
    let lambda = source.pair_rate * cfg.frame_len_ps() as f64 * 1e-12;
    let frames = frames_in(duration_ps.saturating_sub(cfg.origin_ps), cfg);
    let chunks = frames.div_ceil(CHUNK_FRAMES);
    let jitter =
        Normal::new(0.0, det.jitter_sigma_ps).map_err(|e| SimError::Config(e.to_string()))?;
    let poisson = if lambda > 0.0 {
        Some(Poisson::new(lambda).map_err(|e| SimError::Config(e.to_string()))?)
    } else {
        None
    };
    let tau = cfg.tau_ps as f64;
    let m = cfg.delay_multiple;
    let res = det.resolution_ps;
    let place = |rng: &mut ChaCha8Rng, slot: u64, u: f64| -> Option<u64> {
        let t = cfg.origin_ps as f64 + (slot as f64 + u) * tau + jitter.sample(rng);
        let q = (t.max(-1.0) / res as f64).floor() as i64 * res as i64;
        (q >= 0 && q as u64 <= duration_ps).then_some(q as u64)
    };

    let parts: Vec<(Vec<TimeTag>, Vec<TimeTag>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c + 1);
            let mut a_tags = Vec::new();
            let mut b_tags = Vec::new();
            let Some(poisson) = &poisson else {
                return (a_tags, b_tags);
            };
            for f in c * CHUNK_FRAMES..((c + 1) * CHUNK_FRAMES).min(frames) {
                let n = poisson.sample(&mut rng) as u64;
                for _ in 0..n {
                    let (_, ia, ib) = table[pick.sample(&mut rng)];
                    let u: f64 = rng.random();
                    for (outcome, eff, base, tags) in [
                        (&la[ia], det.efficiency_alice, 0u8, &mut a_tags),
                        (&lb[ib], det.efficiency_bob, 2u8, &mut b_tags),
                    ] {
                        if !rng.random_bool(eff) {
                            continue;
                        }
                        let slot = frame_to_slot(f, outcome.bin, cfg)
                            + if outcome.delayed { m } else { 0 };
                        if let Some(t) = place(&mut rng, slot, u) {
                            tags.push(TimeTag::new(t, base + outcome.odd as u8));
                        }
                    }
                }
            }
            (a_tags, b_tags)
        })
        .collect();

    let mut alice: Vec<TimeTag> = Vec::new();
    let mut bob: Vec<TimeTag> = Vec::new();
    for (a, b) in parts {
        alice.extend(a);
        bob.extend(b);
    }
    let mut dark_rng = ChaCha8Rng::seed_from_u64(seed);
    dark_rng.set_stream(0);
    let dark_mean = det.dark_rate * duration_ps as f64 * 1e-12;
    if dark_mean > 0.0 {
        let dp = Poisson::new(dark_mean).map_err(|e| SimError::Config(e.to_string()))?;
        for ch in 0..4u8 {
            let n = dp.sample(&mut dark_rng) as u64;
            let tags = if ch < 2 { &mut alice } else { &mut bob };
            for _ in 0..n {
                let t = dark_rng.random_range(0..=duration_ps) / res * res;
                tags.push(TimeTag::new(t, ch));
            }
        }
    }
    let meta = RunMetadata {
        setting_alice: settings.0,
        setting_bob: settings.1,
        resolution_ps: res,
        duration_ps,
        clock_offset_ps: 0,
    };
    let finish = |mut tags: Vec<TimeTag>| {
        tags.sort_by_key(|t| (t.time_ps, t.channel));
        TagStream::from_sorted(apply_deadtime(tags, det.deadtime_ps), meta)
    };
    Ok((finish(alice), finish(bob)))
}

/// Removes tags closer than `deadtime` to the previous kept tag of the
/// same channel.
pub fn apply_deadtime(tags: Vec<TimeTag>, deadtime: u64) -> Vec<TimeTag> {
    if deadtime == 0 {
        return tags;
    }
    let mut last: [Option<u64>; 4] = [None; 4];
    tags.into_iter()
        .filter(|t| {
            let ch = t.channel as usize;
            match last[ch] {
                Some(prev) if t.time_ps - prev < deadtime => false,
                _ => {
                    last[ch] = Some(t.time_ps);
                    true
                }
            }
        })
        .collect()
}

/// Probability that a frame survives post-selection: one pair with both
/// photons detected and no further detection, with Poisson pair number
/// `lambda` and symmetric efficiency `eta`, ignoring dark counts.
pub fn retention_probability(lambda: f64, eta: f64) -> f64 {
    let click = 2.0 * eta - eta * eta;
    (-lambda * click).exp() * (lambda * eta * eta + (lambda * eta * (1.0 - eta)).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{Arm, Delay, Local};

    #[test]
    fn model_state_is_a_density_matrix() {
        for d in [2, 4, 8] {
            let s = ModelState::new(d, 0.1, 0.92).unwrap();
            assert!((s.rho.trace() - 1.0).abs() < 1e-12);
        }
        assert!(ModelState::new(4, 1.5, 0.9).is_err());
    }

    #[test]
    fn phi_plus_probabilities() {
        let s = ModelState::phi_plus(4);
        assert!((exact_probability(&s, &Cell::tt(2, 2), 4).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(exact_probability(&s, &Cell::tt(1, 2), 4).unwrap(), 0.0);
        let pp = Cell::new(
            Local::sup(Delay::Long, Sign::Plus, 2),
            Local::sup(Delay::Long, Sign::Plus, 2),
        );
        let pm = Cell::new(
            Local::sup(Delay::Long, Sign::Plus, 2),
            Local::sup(Delay::Long, Sign::Minus, 2),
        );
        assert!((exact_probability(&s, &pp, 4).unwrap() - 1.0 / 16.0).abs() < 1e-15);
        assert!(exact_probability(&s, &pm, 4).unwrap().abs() < 1e-15);
        assert!(exact_probability(&s, &Cell::tt(0, 0), 8).is_err());
    }

    #[test]
    fn maximally_mixed_tt_is_uniform() {
        let s = ModelState::maximally_mixed(4);
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (exact_probability(&s, &Cell::tt(i, j), 4).unwrap() - 1.0 / 16.0).abs() < 1e-15
                );
            }
        }
    }

    #[test]
    fn joint_tables_are_distributions() {
        let s = ModelState::new(4, 0.2, 0.9).unwrap();
        for sa in Setting::ALL {
            for sb in Setting::ALL {
                let (_, _, t) = joint_table(&s, sa, sb);
                let total: f64 = t.iter().map(|x| x.0).sum();
                assert!((total - 1.0).abs() < 1e-12, "{sa} {sb}: {total}");
            }
        }
    }

    #[test]
    fn no_light_no_tags() {
        let src = SourceModel {
            dimension: 4,
            isotropic_noise: 0.0,
            dephasing_visibility: 1.0,
            pair_rate: 1e7,
            coherence_time_ps: 1e9,
        };
        let mut det = DetectorModel::ideal();
        det.efficiency_alice = 0.0;
        det.efficiency_bob = 0.0;
        let cfg = DiscretizationConfig::new(433, 3, 4, Arm::Nested);
        let (a, b) = sample_run(
            &src,
            &det,
            &cfg,
            (Setting::Toa, Setting::Toa),
            10_000_000,
            1,
        )
        .unwrap();
        assert!(a.is_empty() && b.is_empty());
    }

    #[test]
    fn deadtime_filters_per_channel() {
        let tags = vec![
            TimeTag::new(0, 0),
            TimeTag::new(5, 1),
            TimeTag::new(8, 0),
            TimeTag::new(12, 0),
        ];
        let kept = apply_deadtime(tags, 10);
        assert_eq!(
            kept,
            vec![TimeTag::new(0, 0), TimeTag::new(5, 1), TimeTag::new(12, 0)]
        );
    }
}
