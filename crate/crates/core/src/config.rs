//! TOML configuration shared by the command-line front end.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use timebin_sdp::SolverSettings;

use crate::certify::{CertifyOptions, PairStrategy};
use crate::discretize::{Arm, DiscretizationConfig};
use crate::simulate::{DetectorModel, SourceModel};
use crate::Error;

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub source: SourceSection,
    pub detector: DetectorModel,
    pub discretization: DiscretizationSection,
    pub certify: CertifySection,
    pub keyrate: KeyRateSection,
    pub run: RunSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    /// Defaults to the discretization dimension.
    pub dimension: Option<usize>,
    pub isotropic_noise: f64,
    pub dephasing_visibility: f64,
    pub pair_rate: f64,
    pub coherence_time_ps: f64,
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection {
            dimension: None,
            isotropic_noise: 0.0,
            dephasing_visibility: 0.92,
            pair_rate: 5.0e7,
            coherence_time_ps: 1.0e6,
        }
    }
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel {
            efficiency_alice: 0.30,
            efficiency_bob: 0.30,
            jitter_sigma_ps: 20.0,
            dark_rate: 1000.0,
            deadtime_ps: 0,
            resolution_ps: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmChoice {
    Single,
    Nested,
    Both,
}

impl ArmChoice {
    pub fn arms(self) -> Vec<Arm> {
        match self {
            ArmChoice::Single => vec![Arm::Single],
            ArmChoice::Nested => vec![Arm::Nested],
            ArmChoice::Both => vec![Arm::Single, Arm::Nested],
        }
    }
}

impl FromStr for ArmChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(ArmChoice::Single),
            "nested" => Ok(ArmChoice::Nested),
            "both" => Ok(ArmChoice::Both),
            _ => Err(format!("unknown arm {s:?} (single, nested or both)")),
        }
    }
}

impl fmt::Display for ArmChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArmChoice::Single => "single",
            ArmChoice::Nested => "nested",
            ArmChoice::Both => "both",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationSection {
    pub tau_ps: u64,
    pub delay_multiple: u64,
    pub dimension: usize,
    pub arm: ArmChoice,
    pub origin_ps: u64,
    /// Dimensions visited by a scan.
    pub dimensions: Vec<usize>,
}

impl Default for DiscretizationSection {
    fn default() -> Self {
        DiscretizationSection {
            tau_ps: 433,
            delay_multiple: 3,
            dimension: 4,
            arm: ArmChoice::Both,
            origin_ps: 0,
            dimensions: vec![2, 4, 8],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    pub z_width: f64,
    pub pairs: PairStrategy,
    pub complex: bool,
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iters: usize,
    pub certificate_tol: f64,
}

impl Default for CertifySection {
    fn default() -> Self {
        let o = CertifyOptions::default();
        CertifySection {
            z_width: 3.0,
            pairs: PairStrategy::AllMeasured,
            complex: o.complex,
            gap_tol: o.solver.gap_tol,
            feas_tol: o.solver.feas_tol,
            max_iters: o.solver.max_iters,
            certificate_tol: o.certificate_tol,
        }
    }
}

impl CertifySection {
    pub fn options(&self) -> CertifyOptions {
        CertifyOptions {
            solver: SolverSettings {
                gap_tol: self.gap_tol,
                feas_tol: self.feas_tol,
                max_iters: self.max_iters,
            },
            certificate_tol: self.certificate_tol,
            complex: self.complex,
            ..CertifyOptions::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyRateSection {
    pub key_fraction: f64,
    /// Optional `[start, end)` bin block to postselect on.
    pub subspace: Option<[usize; 2]>,
}

impl Default for KeyRateSection {
    fn default() -> Self {
        KeyRateSection {
            key_fraction: 0.25,
            subspace: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Frames per setting pair, counted at the simulated dimension.
    pub frames_per_setting: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 1,
            frames_per_setting: 1_000_000,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), Error> {
        let c = &self.certify;
        if c.z_width.is_nan() || c.z_width < 0.0 {
            return Err(Error::Config(format!(
                "z_width must be non-negative, got {}",
                c.z_width
            )));
        }
        let f = self.keyrate.key_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!(
                "key_fraction must lie in (0, 1], got {f}"
            )));
        }
        if self.discretization.dimensions.is_empty() {
            return Err(Error::Config("dimensions must not be empty".into()));
        }
        Ok(())
    }

    pub fn discretization(&self, dimension: usize, arm: Arm) -> DiscretizationConfig {
        let s = &self.discretization;
        DiscretizationConfig {
            origin_ps: s.origin_ps,
            ..DiscretizationConfig::new(s.tau_ps, s.delay_multiple, dimension, arm)
        }
    }

    pub fn source(&self, dimension: usize) -> SourceModel {
        let s = &self.source;
        SourceModel {
            dimension: s.dimension.unwrap_or(dimension),
            isotropic_noise: s.isotropic_noise,
            dephasing_visibility: s.dephasing_visibility,
            pair_rate: s.pair_rate,
            coherence_time_ps: s.coherence_time_ps,
        }
    }

    /// Run duration holding `frames_per_setting` frames of `dimension` bins.
    pub fn duration_ps(&self, dimension: usize) -> u64 {
        let d = &self.discretization;
        d.origin_ps + self.run.frames_per_setting * dimension as u64 * d.tau_ps
    }
}
