//! Single-point analysis and dimension scans over one dataset.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{assemble_constraints, certify, CertificationReport, ConstraintSet};
use crate::config::Config;
use crate::discretize::{
    measurement_families, normalize, process_run, Arm, ClickMatrixSet, ClickReport,
    DiscretizationConfig,
};
use crate::keyrate::{key_rate, subspace_postselect, KeyRateReport};
use crate::report::{read_toml, round_sig, write_toml};
use crate::simulate::sample_run;
use crate::tagstream::{load_stream, save_stream, Format, Setting, TagStream};
use crate::Error;

/// One fixed-setting acquisition.
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub alice: TagStream,
    pub bob: TagStream,
}

impl Run {
    pub fn settings(&self) -> (Setting, Setting) {
        (self.alice.meta().setting_alice, self.bob.meta().setting_bob)
    }

    pub fn duration_ps(&self) -> u64 {
        self.alice
            .meta()
            .duration_ps
            .max(self.bob.meta().duration_ps)
    }
}

/// Seed of the `k`-th run derived from the base seed.
pub fn run_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k)
}

/// Simulates every setting pair at `dimension` bins per frame.
pub fn simulate_dataset(config: &Config, dimension: usize) -> Result<Vec<Run>, Error> {
    let arm = if dimension.is_multiple_of(4) {
        Arm::Nested
    } else {
        Arm::Single
    };
    let dcfg = config.discretization(dimension, arm);
    let source = config.source(dimension);
    let duration = config.duration_ps(dimension);
    let mut runs = Vec::with_capacity(9);
    for (k, sa) in Setting::ALL.into_iter().enumerate() {
        for (l, sb) in Setting::ALL.into_iter().enumerate() {
            let seed = run_seed(config.run.seed, (3 * k + l) as u64);
            let (alice, bob) =
                sample_run(&source, &config.detector, &dcfg, (sa, sb), duration, seed)?;
            runs.push(Run { alice, bob });
        }
    }
    Ok(runs)
}

/// File listing the runs of a dataset directory.
pub const RUN_INDEX: &str = "runs.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFiles {
    pub alice: PathBuf,
    pub bob: PathBuf,
}

/// Contents of [`RUN_INDEX`]; paths are relative to the directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunIndex {
    /// Bins per frame the data were simulated with, if simulated.
    pub dimension: Option<usize>,
    pub runs: Vec<RunFiles>,
}

/// Writes every run of a dataset plus its index into `dir`.
pub fn save_runs(
    dir: &Path,
    runs: &[Run],
    format: Format,
    dimension: Option<usize>,
) -> Result<RunIndex, Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = RunIndex {
        dimension,
        runs: Vec::with_capacity(runs.len()),
    };
    for run in runs {
        let (sa, sb) = run.settings();
        let name = |who: &str| {
            PathBuf::from(format!(
                "{}_{}_{who}.{}",
                sa.name(),
                sb.name(),
                format.extension()
            ))
        };
        let files = RunFiles {
            alice: name("alice"),
            bob: name("bob"),
        };
        save_stream(&run.alice, &dir.join(&files.alice), format)?;
        save_stream(&run.bob, &dir.join(&files.bob), format)?;
        index.runs.push(files);
    }
    write_toml(&dir.join(RUN_INDEX), &index)?;
    Ok(index)
}

/// Reads the dataset indexed in `dir`.
pub fn load_runs(dir: &Path) -> Result<(RunIndex, Vec<Run>), Error> {
    let index: RunIndex = read_toml(&dir.join(RUN_INDEX))?;
    let load = |p: &Path| -> Result<TagStream, Error> {
        let path = dir.join(p);
        let format = Format::from_path(&path)
            .ok_or_else(|| Error::Config(format!("{}: unknown stream format", path.display())))?;
        Ok(load_stream(&path, format)?)
    };
    let runs = index
        .runs
        .iter()
        .map(|f| {
            Ok(Run {
                alice: load(&f.alice)?,
                bob: load(&f.bob)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok((index, runs))
}

/// Least common multiple of the dimensions, rounded up to a multiple of
/// four when a nested point is requested.
pub fn simulation_dimension(dimensions: &[usize], arms: &[Arm]) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let mut l = dimensions
        .iter()
        .fold(1, |l, &d| l / gcd(l, d.max(1)) * d.max(1));
    if arms.contains(&Arm::Nested) && !l.is_multiple_of(4) {
        l = l / gcd(l, 4) * 4;
    }
    l.max(2)
}

/// Normalised click matrices of a dataset and its time-of-arrival
/// coincidence rate per second.
#[derive(Clone, Debug, PartialEq)]
pub struct Discretized {
    pub clicks: ClickMatrixSet,
    pub toa_rate: f64,
}

/// Structured-text form of [`Discretized`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedReport {
    pub toa_rate: f64,
    pub clicks: ClickReport,
}

impl Discretized {
    pub fn to_report(&self) -> DiscretizedReport {
        DiscretizedReport {
            toa_rate: self.toa_rate,
            clicks: self.clicks.to_report(),
        }
    }

    /// Rebuilds the counts of a report and renormalises them.
    pub fn from_report(r: &DiscretizedReport, config: &Config) -> Result<Self, Error> {
        let cfg = config.discretization(r.clicks.dimension, r.clicks.arm);
        let counts = ClickMatrixSet::from_report(&r.clicks).map_err(Error::Config)?;
        Ok(Discretized {
            clicks: normalize(&counts, &measurement_families(&cfg)?)?,
            toa_rate: r.toa_rate,
        })
    }
}

pub fn discretize_runs(runs: &[Run], cfg: &DiscretizationConfig) -> Result<Discretized, Error> {
    let families = measurement_families(cfg)?;
    let parts: Vec<_> = runs
        .par_iter()
        .map(|r| process_run(&r.alice, &r.bob, cfg).map(|cm| (r.settings(), r.duration_ps(), cm)))
        .collect::<Result<_, _>>()?;
    let mut total = ClickMatrixSet::new(cfg.dimension, cfg.arm);
    let (mut toa_pairs, mut toa_ps) = (0u64, 0u64);
    for (settings, duration, cm) in &parts {
        if *settings == (Setting::Toa, Setting::Toa) {
            toa_pairs += cm.discards.retained;
            toa_ps += duration;
        }
        total.merge(cm);
    }
    let toa_rate = if toa_ps > 0 {
        toa_pairs as f64 / (toa_ps as f64 * 1e-12)
    } else {
        0.0
    };
    Ok(Discretized {
        clicks: normalize(&total, &families)?,
        toa_rate,
    })
}

/// Certification and key-rate analysis of one discretisation.
#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub discretized: Discretized,
    pub constraints: ConstraintSet,
    pub certification: CertificationReport,
    pub key: KeyRateReport,
}

pub fn analyze_clicks(d: Discretized, config: &Config) -> Result<PointResult, Error> {
    let opts = config.certify.options();
    let cs = assemble_constraints(&d.clicks, config.certify.z_width)?;
    let cert = certify(&cs, config.certify.pairs, d.toa_rate, &opts)?;
    let mut table = d.clicks.tt_table();
    let mut key_cs = cs.clone();
    if let Some([start, end]) = config.keyrate.subspace {
        key_cs = subspace_postselect(&cs, start..end)?;
        table = sub_table(&table, start, end);
    }
    let key = key_rate(
        &key_cs,
        &table,
        d.toa_rate,
        config.keyrate.key_fraction,
        &opts,
    )?;
    Ok(PointResult {
        discretized: d,
        constraints: cs,
        certification: cert,
        key,
    })
}

fn sub_table(table: &[Vec<f64>], start: usize, end: usize) -> Vec<Vec<f64>> {
    let sub: Vec<Vec<f64>> = table[start..end]
        .iter()
        .map(|r| r[start..end].to_vec())
        .collect();
    let s: f64 = sub.iter().flatten().sum();
    if s > 0.0 {
        sub.into_iter()
            .map(|r| r.into_iter().map(|x| x / s).collect())
            .collect()
    } else {
        sub
    }
}

pub fn analyze_point(
    runs: &[Run],
    cfg: &DiscretizationConfig,
    config: &Config,
) -> Result<PointResult, Error> {
    cfg.validate()?;
    analyze_clicks(discretize_runs(runs, cfg)?, config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub dimensions: Vec<usize>,
    pub arms: Vec<Arm>,
    pub config: Config,
}

impl ScanSpec {
    pub fn from_config(config: &Config) -> Self {
        ScanSpec {
            dimensions: config.discretization.dimensions.clone(),
            arms: config.discretization.arm.arms(),
            config: config.clone(),
        }
    }

    pub fn points(&self) -> Vec<(usize, Arm)> {
        self.dimensions
            .iter()
            .flat_map(|&d| self.arms.iter().map(move |&a| (d, a)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Skipped,
    Failed,
}

/// One `(d, arm)` point of a scan. Numbers are absent unless `status` is
/// `Ok`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub dimension: usize,
    pub arm: Arm,
    pub status: RowStatus,
    pub reason: String,
    pub schmidt_number: Option<usize>,
    pub w_min: Option<f64>,
    pub b_min: Option<f64>,
    pub eof: Option<f64>,
    pub entanglement_rate: Option<f64>,
    pub h_x_given_y: Option<f64>,
    pub h_min: Option<f64>,
    pub p_guess: Option<f64>,
    pub key_rate: Option<f64>,
    pub toa_rate: Option<f64>,
    pub coincidences: Option<u64>,
}

pub const SCAN_COLUMNS: [&str; 15] = [
    "dimension",
    "arm",
    "status",
    "reason",
    "schmidt_number",
    "w_min",
    "b_min",
    "eof",
    "entanglement_rate",
    "h_x_given_y",
    "h_min",
    "p_guess",
    "key_rate",
    "toa_rate",
    "coincidences",
];

impl ScanRow {
    fn empty(dimension: usize, arm: Arm, status: RowStatus, reason: String) -> Self {
        ScanRow {
            dimension,
            arm,
            status,
            reason,
            schmidt_number: None,
            w_min: None,
            b_min: None,
            eof: None,
            entanglement_rate: None,
            h_x_given_y: None,
            h_min: None,
            p_guess: None,
            key_rate: None,
            toa_rate: None,
            coincidences: None,
        }
    }

    fn from_result(r: &PointResult) -> Self {
        let c = &r.certification;
        let k = &r.key;
        ScanRow {
            dimension: c.dimension,
            arm: c.arm,
            status: RowStatus::Ok,
            reason: String::new(),
            schmidt_number: Some(c.schmidt_number),
            w_min: Some(c.w_min),
            b_min: Some(c.b_min),
            eof: Some(c.eof),
            entanglement_rate: Some(c.entanglement_rate),
            h_x_given_y: Some(k.h_x_given_y),
            h_min: Some(k.h_min),
            p_guess: Some(k.p_guess),
            key_rate: Some(k.key_rate),
            toa_rate: Some(r.discretized.toa_rate),
            coincidences: Some(r.discretized.clicks.total_counts()),
        }
    }

    fn record(&self) -> Vec<String> {
        let num = |x: Option<f64>| {
            x.map(|v| format!("{}", round_sig(v, 9)))
                .unwrap_or_default()
        };
        vec![
            self.dimension.to_string(),
            self.arm.to_string(),
            format!("{:?}", self.status).to_lowercase(),
            self.reason.clone(),
            self.schmidt_number
                .map(|k| k.to_string())
                .unwrap_or_default(),
            num(self.w_min),
            num(self.b_min),
            num(self.eof),
            num(self.entanglement_rate),
            num(self.h_x_given_y),
            num(self.h_min),
            num(self.p_guess),
            num(self.key_rate),
            num(self.toa_rate),
            self.coincidences.map(|k| k.to_string()).unwrap_or_default(),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub simulated_dimension: Option<usize>,
    pub rows: Vec<ScanRow>,
}

impl ScanReport {
    pub fn row(&self, dimension: usize, arm: Arm) -> Option<&ScanRow> {
        self.rows
            .iter()
            .find(|r| r.dimension == dimension && r.arm == arm)
    }

    pub fn to_csv(&self) -> Result<String, Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let out = |e: csv::Error| Error::Output(e.to_string());
        w.write_record(SCAN_COLUMNS).map_err(out)?;
        for r in &self.rows {
            w.write_record(r.record()).map_err(out)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Output(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Output(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), Error> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// Analyses every `(d, arm)` point of `spec` on the same runs.
///
/// Points violating the divisibility rules are skipped and failures are
/// recorded in their row; the scan itself does not fail.
pub fn run_scan(spec: &ScanSpec, runs: &[Run]) -> ScanReport {
    let rows = spec
        .points()
        .into_par_iter()
        .map(|(d, arm)| {
            let cfg = spec.config.discretization(d, arm);
            if let Err(e) = cfg.validate() {
                return ScanRow::empty(d, arm, RowStatus::Skipped, e.to_string());
            }
            match analyze_point(runs, &cfg, &spec.config) {
                Ok(r) => ScanRow::from_result(&r),
                Err(e) => ScanRow::empty(d, arm, RowStatus::Failed, e.to_string()),
            }
        })
        .collect();
    ScanReport {
        simulated_dimension: None,
        rows,
    }
}

/// Simulates once at the scan's common dimension and scans the result.
pub fn simulate_and_scan(spec: &ScanSpec) -> Result<ScanReport, Error> {
    let d_sim = simulation_dimension(&spec.dimensions, &spec.arms);
    let runs = simulate_dataset(&spec.config, d_sim)?;
    let mut report = run_scan(spec, &runs);
    report.simulated_dimension = Some(d_sim);
    Ok(report)
}
