//! Detector time-tag streams: data model, file formats and clock alignment.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"TBE1";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 8 + 8 + 8 + 8;
const RECORD_LEN: usize = 9;

#[derive(Debug, Error)]
pub enum TagError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("{out_of_order} of {total} records out of order (clock fault?)")]
    Order { out_of_order: usize, total: usize },
    #[error("no correlation peak: best bin is {significance:.2} sigma above the mean")]
    NoPeak { significance: f64 },
    #[error("clock alignment needs two non-empty streams")]
    EmptyStream,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TagError + '_ {
    move |source| TagError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Interferometer setting of one party for a whole run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "TOA")]
    Toa,
    #[serde(rename = "TSUP_SHORT")]
    TsupShort,
    #[serde(rename = "TSUP_LONG")]
    TsupLong,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Toa, Setting::TsupShort, Setting::TsupLong];

    pub fn code(self) -> u8 {
        match self {
            Setting::Toa => 0,
            Setting::TsupShort => 1,
            Setting::TsupLong => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Setting::ALL.get(c as usize).copied()
    }

    /// Bin separation superposed by the interferometer, 0 for TOA.
    pub fn shift(self) -> usize {
        self.code() as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Setting::Toa => "TOA",
            Setting::TsupShort => "TSUP_SHORT",
            Setting::TsupLong => "TSUP_LONG",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Setting::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown setting '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeTag {
    pub time_ps: u64,
    /// 0 and 1 are Alice's detectors, 2 and 3 Bob's.
    pub channel: u8,
}

impl TimeTag {
    pub fn new(time_ps: u64, channel: u8) -> Self {
        TimeTag { time_ps, channel }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub setting_alice: Setting,
    pub setting_bob: Setting,
    pub resolution_ps: u64,
    pub duration_ps: u64,
    /// Correction already applied to Bob's tags.
    pub clock_offset_ps: i64,
}

impl RunMetadata {
    pub fn new(setting_alice: Setting, setting_bob: Setting, duration_ps: u64) -> Self {
        RunMetadata {
            setting_alice,
            setting_bob,
            resolution_ps: 1,
            duration_ps,
            clock_offset_ps: 0,
        }
    }

    fn validate(&self) -> Result<(), TagError> {
        if self.duration_ps == 0 {
            return Err(TagError::Format("duration_ps must be positive".into()));
        }
        if self.resolution_ps == 0 {
            return Err(TagError::Format("resolution_ps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Binary,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "binary" | "bin" | "tbe" => Ok(Format::Binary),
            "csv" => Ok(Format::Csv),
            _ => Err(format!("unknown stream format '{s}'")),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Binary => "tbe",
            Format::Csv => "csv",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

/// Time-sorted tags of one run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagStream {
    tags: Vec<TimeTag>,
    meta: RunMetadata,
}

impl TagStream {
    /// Validates and stably sorts `tags`.
    ///
    /// More than 1% of records out of order is rejected as a clock fault.
    pub fn new(mut tags: Vec<TimeTag>, meta: RunMetadata) -> Result<Self, TagError> {
        meta.validate()?;
        for (k, t) in tags.iter().enumerate() {
            if t.channel > 3 {
                return Err(TagError::Format(format!(
                    "record {k}: channel {} > 3",
                    t.channel
                )));
            }
            if t.time_ps > meta.duration_ps {
                return Err(TagError::Format(format!(
                    "record {k}: time {} beyond duration {}",
                    t.time_ps, meta.duration_ps
                )));
            }
        }
        let out_of_order = tags
            .windows(2)
            .filter(|w| w[1].time_ps < w[0].time_ps)
            .count();
        if out_of_order * 100 > tags.len() {
            return Err(TagError::Order {
                out_of_order,
                total: tags.len(),
            });
        }
        if out_of_order > 0 {
            tags.sort_by_key(|t| t.time_ps);
        }
        Ok(TagStream { tags, meta })
    }

    /// Builds a stream from tags already known to be valid and sorted.
    pub(crate) fn from_sorted(tags: Vec<TimeTag>, meta: RunMetadata) -> Self {
        debug_assert!(tags.windows(2).all(|w| w[0].time_ps <= w[1].time_ps));
        TagStream { tags, meta }
    }

    pub fn empty(meta: RunMetadata) -> Self {
        TagStream {
            tags: Vec::new(),
            meta,
        }
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn meta(&self) -> &RunMetadata {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Subtracts `offset_ps` from every tag, dropping tags pushed outside
    /// `[0, duration]`, and records the correction in the metadata.
    pub fn corrected(&self, offset_ps: i64) -> TagStream {
        let dur = self.meta.duration_ps as i128;
        let tags = self
            .tags
            .iter()
            .filter_map(|t| {
                let v = t.time_ps as i128 - offset_ps as i128;
                (0..=dur)
                    .contains(&v)
                    .then_some(TimeTag::new(v as u64, t.channel))
            })
            .collect();
        let mut meta = self.meta;
        meta.clock_offset_ps += offset_ps;
        TagStream { tags, meta }
    }
}

/// Reads a stream in the given format. CSV metadata comes from the
/// sidecar returned by [`sidecar_path`].
pub fn load_stream(path: &Path, format: Format) -> Result<TagStream, TagError> {
    match format {
        Format::Binary => {
            let mut buf = Vec::new();
            BufReader::new(File::open(path).map_err(io_err(path))?)
                .read_to_end(&mut buf)
                .map_err(io_err(path))?;
            decode_binary(&buf)
        }
        Format::Csv => load_csv(path),
    }
}

pub fn save_stream(stream: &TagStream, path: &Path, format: Format) -> Result<(), TagError> {
    match format {
        Format::Binary => {
            let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
            w.write_all(&encode_binary(stream)).map_err(io_err(path))?;
            w.flush().map_err(io_err(path))
        }
        Format::Csv => save_csv(stream, path),
    }
}

/// `run.csv` keeps its metadata in `run.csv.toml`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".toml");
    PathBuf::from(s)
}

pub fn encode_binary(stream: &TagStream) -> Vec<u8> {
    let m = &stream.meta;
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.tags.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(m.setting_alice.code());
    out.push(m.setting_bob.code());
    out.extend_from_slice(&m.resolution_ps.to_le_bytes());
    out.extend_from_slice(&m.duration_ps.to_le_bytes());
    out.extend_from_slice(&m.clock_offset_ps.to_le_bytes());
    out.extend_from_slice(&(stream.tags.len() as u64).to_le_bytes());
    for t in &stream.tags {
        out.extend_from_slice(&t.time_ps.to_le_bytes());
        out.push(t.channel);
    }
    out
}

pub fn decode_binary(buf: &[u8]) -> Result<TagStream, TagError> {
    if buf.len() < HEADER_LEN {
        return Err(TagError::Format(format!(
            "file too short for header ({} bytes)",
            buf.len()
        )));
    }
    if &buf[0..4] != MAGIC {
        return Err(TagError::Format("bad magic".into()));
    }
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != VERSION {
        return Err(TagError::Format(format!("unsupported version {version}")));
    }
    let setting = |c: u8| {
        Setting::from_code(c).ok_or_else(|| TagError::Format(format!("bad setting code {c}")))
    };
    let meta = RunMetadata {
        setting_alice: setting(buf[6])?,
        setting_bob: setting(buf[7])?,
        resolution_ps: u64_at(8),
        duration_ps: u64_at(16),
        clock_offset_ps: u64_at(24) as i64,
    };
    let count = u64_at(32) as usize;
    let body = &buf[HEADER_LEN..];
    if body.len() != count.saturating_mul(RECORD_LEN) {
        return Err(TagError::Format(format!(
            "record section has {} bytes, header declares {count} records",
            body.len()
        )));
    }
    let tags = body
        .chunks_exact(RECORD_LEN)
        .map(|r| TimeTag::new(u64::from_le_bytes(r[0..8].try_into().unwrap()), r[8]))
        .collect();
    TagStream::new(tags, meta)
}

fn load_csv(path: &Path) -> Result<TagStream, TagError> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(io_err(&side))?;
    let meta: RunMetadata =
        toml::from_str(&text).map_err(|e| TagError::Format(format!("{}: {e}", side.display())))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| TagError::Format(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| TagError::Format(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["time_ps", "channel"] {
        return Err(TagError::Format(format!(
            "unexpected csv header {headers:?}"
        )));
    }
    let mut tags = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| TagError::Format(format!("line {}: {e}", k + 2)))?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let time_ps = field(0)
            .parse()
            .map_err(|e| TagError::Format(format!("line {}: time_ps: {e}", k + 2)))?;
        let channel = field(1)
            .parse()
            .map_err(|e| TagError::Format(format!("line {}: channel: {e}", k + 2)))?;
        tags.push(TimeTag::new(time_ps, channel));
    }
    TagStream::new(tags, meta)
}

fn save_csv(stream: &TagStream, path: &Path) -> Result<(), TagError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| TagError::Format(format!("{}: {e}", path.display())))?;
    let fail = |e: csv::Error| TagError::Format(e.to_string());
    w.write_record(["time_ps", "channel"]).map_err(fail)?;
    for t in &stream.tags {
        w.write_record([t.time_ps.to_string(), t.channel.to_string()])
            .map_err(fail)?;
    }
    w.flush().map_err(io_err(path))?;
    let side = sidecar_path(path);
    let text = toml::to_string(&stream.meta).map_err(|e| TagError::Format(e.to_string()))?;
    std::fs::write(&side, text).map_err(io_err(&side))
}

/// Histogram of `bob - alice` differences in `[lo, hi)`, `bin` wide.
fn difference_histogram(a: &[u64], b: &[u64], lo: i64, hi: i64, bin: i64) -> Vec<u64> {
    let nbins = ((hi - lo) / bin).max(1) as usize;
    let mut hist = vec![0u64; nbins];
    let mut start = 0usize;
    for &ta in a {
        let ta = ta as i64;
        while start < b.len() && (b[start] as i64) - ta < lo {
            start += 1;
        }
        for &tb in &b[start..] {
            let diff = tb as i64 - ta;
            if diff >= hi {
                break;
            }
            let k = ((diff - lo) / bin) as usize;
            if k < nbins {
                hist[k] += 1;
            }
        }
    }
    hist
}

/// Default half-width of the clock-offset search.
pub const DEFAULT_SEARCH_WINDOW_PS: u64 = 1_000_000;

/// Estimates the offset `δ` with Bob's clock reading `δ` ahead of Alice's,
/// searching `|δ| <= search_window_ps`.
///
/// A coarse pass at twenty fine bins locates the peak; the estimate is
/// then the background-subtracted mean difference in a window recentred
/// on itself until it settles.
pub fn align_clocks(
    alice: &TagStream,
    bob: &TagStream,
    search_window_ps: u64,
    bin_ps: u64,
) -> Result<i64, TagError> {
    if alice.is_empty() || bob.is_empty() {
        return Err(TagError::EmptyStream);
    }
    let a: Vec<u64> = alice.tags.iter().map(|t| t.time_ps).collect();
    let b: Vec<u64> = bob.tags.iter().map(|t| t.time_ps).collect();
    let bin = bin_ps.max(1) as i64;
    let window = search_window_ps as i64;
    let coarse = (20 * bin).min(window.max(bin));
    let nb = ((2 * window) / coarse + 1).max(1);
    let lo = -(nb * coarse) / 2;
    let hist = difference_histogram(&a, &b, lo, lo + nb * coarse, coarse);

    let counts: Vec<f64> = hist.iter().map(|&h| h as f64).collect();
    let n = counts.len() as f64;
    let (peak, &peak_val) = counts
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1).then(y.0.cmp(&x.0)))
        .unwrap();
    let rest: Vec<f64> = counts
        .iter()
        .enumerate()
        .filter(|&(k, _)| k.abs_diff(peak) > 1)
        .map(|(_, &c)| c)
        .collect();
    let (mean, std) = if rest.is_empty() {
        (0.0, 0.0)
    } else {
        let m = rest.iter().sum::<f64>() / rest.len() as f64;
        let v = rest.iter().map(|c| (c - m).powi(2)).sum::<f64>() / rest.len() as f64;
        (m, v.sqrt())
    };
    let sigma = mean.max(1.0).sqrt().max(std);
    let significance = (peak_val - mean) / sigma;
    if n < 2.0 || significance < 5.0 {
        return Err(TagError::NoPeak { significance });
    }

    let centre = lo + peak as i64 * coarse + coarse / 2;
    let (span_lo, span_hi) = (centre - 3 * coarse, centre + 3 * coarse);
    let diffs = differences(&a, &b, span_lo, span_hi);
    let half = coarse as f64;
    let bg_width = (span_hi - span_lo) as f64 - 2.0 * half;
    let mut c = centre as f64;
    for _ in 0..20 {
        let (mut n, mut sum, mut out) = (0.0, 0.0, 0.0);
        for &x in &diffs {
            let x = x as f64;
            if (x - c).abs() <= half {
                n += 1.0;
                sum += x;
            } else {
                out += 1.0;
            }
        }
        let bg = out / bg_width * (2.0 * half);
        if n - bg <= 0.0 {
            break;
        }
        let next = (sum - bg * c) / (n - bg);
        let done = (next - c).abs() < 1e-3;
        c = next;
        if done {
            break;
        }
    }
    Ok(c.round() as i64)
}

/// All `bob - alice` differences in `[lo, hi)`.
fn differences(a: &[u64], b: &[u64], lo: i64, hi: i64) -> Vec<i64> {
    let mut out = Vec::new();
    let mut start = 0usize;
    for &ta in a {
        let ta = ta as i64;
        while start < b.len() && (b[start] as i64) - ta < lo {
            start += 1;
        }
        for &tb in &b[start..] {
            let diff = tb as i64 - ta;
            if diff >= hi {
                break;
            }
            out.push(diff);
        }
    }
    out
}
