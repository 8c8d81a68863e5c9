//! Price and load series: ingestion, validation, transforms, windowing and a
//! seeded synthetic generator.
//!
//! All timestamps are market-local [`NaiveDateTime`]s. A [`MarketDataset`]
//! always covers whole days: 24 hourly values and 288 five-minute values per
//! day per zone.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOURS_PER_DAY: usize = 24;
pub const INTERVALS_PER_HOUR: usize = 12;
pub const INTERVALS_PER_DAY: usize = HOURS_PER_DAY * INTERVALS_PER_HOUR;

/// Guard applied to window standard deviations before dividing.
pub const NORM_EPS: f64 = 1e-8;

/// Channel order of every [`WindowSample`].
pub const CHANNELS: [&str; 3] = ["rt_hourly_mean", "da_hourly", "load"];

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("timestamps not strictly increasing at {0}")]
    NonMonotonicTimestamps(NaiveDateTime),
    #[error("timestamp {0} is not aligned to the series resolution")]
    MisalignedTimestamp(NaiveDateTime),
    #[error("gap of {missing} intervals after {after} exceeds limit {limit}")]
    GapExceedsLimit {
        after: NaiveDateTime,
        missing: usize,
        limit: usize,
    },
    #[error("cannot parse `{value}` on line {line}")]
    UnparseableValue { line: usize, value: String },
    #[error("no rows for zone `{0}`")]
    NoRows(String),
    #[error("non-finite value {value} at index {index}")]
    NonFiniteInput { index: usize, value: f64 },
    #[error("length {len} not divisible by {divisor}")]
    LengthNotDivisible { len: usize, divisor: usize },
    #[error("expected {expected:?} resolution")]
    WrongResolution { expected: Resolution },
    #[error("series for zone `{zone}` does not cover whole days: {detail}")]
    IncompleteDay { zone: String, detail: String },
    #[error("series for zone `{0}` do not share the same day span")]
    SpanMismatch(String),
    #[error("negative load {value} at index {index}")]
    NegativeLoad { index: usize, value: f64 },
    #[error("dataset spans {have} hours, need at least {need}")]
    SpanTooShort { have: usize, need: usize },
    #[error("split boundary {0} out of range or not increasing")]
    BoundaryOutOfRange(NaiveDateTime),
    #[error("unknown zone `{0}`")]
    UnknownZone(String),
    #[error("day {0} has no data {1} days earlier")]
    InsufficientHistory(NaiveDate, usize),
    #[error("invalid window geometry: {0}")]
    InvalidGeometry(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    FiveMinute,
    Hourly,
}

impl Resolution {
    pub fn step(self) -> Duration {
        match self {
            Resolution::FiveMinute => Duration::minutes(5),
            Resolution::Hourly => Duration::hours(1),
        }
    }

    pub fn per_day(self) -> usize {
        match self {
            Resolution::FiveMinute => INTERVALS_PER_DAY,
            Resolution::Hourly => HOURS_PER_DAY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub zone: String,
    pub resolution: Resolution,
    pub start: NaiveDateTime,
    pub values: Vec<f64>,
}

impl PriceSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        self.start + self.resolution.step() * index as i32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSeries {
    pub zone: String,
    pub start: NaiveDateTime,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Series {
    Price(PriceSeries),
    Load(LoadSeries),
}

impl Series {
    pub fn len(&self) -> usize {
        match self {
            Series::Price(p) => p.values.len(),
            Series::Load(l) => l.values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Series::Price(p) => &p.values,
            Series::Load(l) => &l.values,
        }
    }

    pub fn into_price(self) -> Option<PriceSeries> {
        match self {
            Series::Price(p) => Some(p),
            Series::Load(_) => None,
        }
    }

    pub fn into_load(self) -> Option<LoadSeries> {
        match self {
            Series::Load(l) => Some(l),
            Series::Price(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Da,
    Rt,
    Load,
}

impl SeriesKind {
    pub fn resolution(self) -> Resolution {
        match self {
            SeriesKind::Rt => Resolution::FiveMinute,
            SeriesKind::Da | SeriesKind::Load => Resolution::Hourly,
        }
    }

    fn value_column(self) -> &'static str {
        match self {
            SeriesKind::Load => "mw",
            _ => "price",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            SeriesKind::Da => "da_hourly.csv",
            SeriesKind::Rt => "rt_5min.csv",
            SeriesKind::Load => "load_hourly.csv",
        }
    }
}

/// Forward-fill limits. Gaps longer than these are ingestion errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FillPolicy {
    pub max_gap_hourly: usize,
    pub max_gap_five_minute: usize,
}

impl Default for FillPolicy {
    fn default() -> Self {
        Self {
            max_gap_hourly: 24,
            max_gap_five_minute: 12,
        }
    }
}

impl FillPolicy {
    fn limit(&self, resolution: Resolution) -> usize {
        match resolution {
            Resolution::Hourly => self.max_gap_hourly,
            Resolution::FiveMinute => self.max_gap_five_minute,
        }
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ];
    let s = s.trim();
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Loads one zone's series from a CSV file (see [`read_csv`]).
pub fn load_csv(path: &Path, kind: SeriesKind, zone: &str, fill: &FillPolicy) -> Result<Series> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, kind, zone, fill)
}

/// Reads `timestamp,zone,price` (or `timestamp,zone,mw` for load) rows,
/// keeps the rows of `zone`, sorts them and forward-fills short gaps.
pub fn read_csv<R: Read>(reader: R, kind: SeriesKind, zone: &str, fill: &FillPolicy) -> Result<Series> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let ts_col = col("timestamp")?;
    let zone_col = col("zone")?;
    let val_col = col(kind.value_column())?;

    let mut rows: Vec<(NaiveDateTime, f64)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let field = |c: usize| record.get(c).unwrap_or("");
        if field(zone_col) != zone {
            continue;
        }
        let ts = parse_timestamp(field(ts_col)).ok_or_else(|| DataError::UnparseableValue {
            line,
            value: field(ts_col).to_string(),
        })?;
        let raw = field(val_col);
        let value: f64 = raw.parse().map_err(|_| DataError::UnparseableValue {
            line,
            value: raw.to_string(),
        })?;
        if !value.is_finite() {
            return Err(DataError::UnparseableValue {
                line,
                value: raw.to_string(),
            });
        }
        rows.push((ts, value));
    }
    if rows.is_empty() {
        return Err(DataError::NoRows(zone.to_string()));
    }
    rows.sort_by_key(|r| r.0);

    let resolution = kind.resolution();
    let values = fill_gaps(&rows, resolution, fill.limit(resolution))?;
    let start = rows[0].0;
    Ok(match kind {
        SeriesKind::Load => {
            if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| **v < 0.0) {
                return Err(DataError::NegativeLoad { index, value });
            }
            Series::Load(LoadSeries {
                zone: zone.to_string(),
                start,
                values,
            })
        }
        _ => Series::Price(PriceSeries {
            zone: zone.to_string(),
            resolution,
            start,
            values,
        }),
    })
}

fn fill_gaps(rows: &[(NaiveDateTime, f64)], resolution: Resolution, limit: usize) -> Result<Vec<f64>> {
    let step = resolution.step().num_seconds();
    let aligned = |ts: NaiveDateTime| match resolution {
        Resolution::Hourly => ts.minute() == 0 && ts.second() == 0,
        Resolution::FiveMinute => ts.minute().is_multiple_of(5) && ts.second() == 0,
    };
    let mut values = Vec::with_capacity(rows.len());
    for (i, &(ts, v)) in rows.iter().enumerate() {
        if !aligned(ts) {
            return Err(DataError::MisalignedTimestamp(ts));
        }
        if i > 0 {
            let (prev_ts, prev_v) = rows[i - 1];
            let delta = (ts - prev_ts).num_seconds();
            if delta <= 0 {
                return Err(DataError::NonMonotonicTimestamps(ts));
            }
            let missing = (delta / step - 1) as usize;
            if missing > limit {
                return Err(DataError::GapExceedsLimit {
                    after: prev_ts,
                    missing,
                    limit,
                });
            }
            values.extend(std::iter::repeat_n(prev_v, missing));
        }
        values.push(v);
    }
    Ok(values)
}

/// Hourly means of a five-minute series.
pub fn resample_hourly_mean(rt: &PriceSeries) -> Result<PriceSeries> {
    if rt.resolution != Resolution::FiveMinute {
        return Err(DataError::WrongResolution {
            expected: Resolution::FiveMinute,
        });
    }
    if !rt.values.len().is_multiple_of(INTERVALS_PER_HOUR) {
        return Err(DataError::LengthNotDivisible {
            len: rt.values.len(),
            divisor: INTERVALS_PER_HOUR,
        });
    }
    let values = rt
        .values
        .chunks_exact(INTERVALS_PER_HOUR)
        .map(|c| c.iter().sum::<f64>() / INTERVALS_PER_HOUR as f64)
        .collect();
    Ok(PriceSeries {
        zone: rt.zone.clone(),
        resolution: Resolution::Hourly,
        start: rt.start,
        values,
    })
}

/// `sign(x) * ln(1 + |x|)`: compresses spikes, keeps the sign of negative
/// prices and is a bijection on the reals.
pub fn signed_log(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(DataError::NonFiniteInput { index: 0, value: x });
    }
    Ok(x.signum() * x.abs().ln_1p())
}

pub fn inverse_signed_log(y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(DataError::NonFiniteInput { index: 0, value: y });
    }
    Ok(y.signum() * y.abs().exp_m1())
}

/// Value transform applied to price channels before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Raw,
    SignedLog,
}

impl Transform {
    /// Forward transform; callers guarantee finite input.
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Raw => x,
            Transform::SignedLog => x.signum() * x.abs().ln_1p(),
        }
    }

    pub fn invert(self, y: f64) -> f64 {
        match self {
            Transform::Raw => y,
            Transform::SignedLog => y.signum() * y.abs().exp_m1(),
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Transform::Raw),
            "signed_log" | "log" => Ok(Transform::SignedLog),
            other => Err(format!("unknown transform `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneData {
    pub da_hourly: PriceSeries,
    pub rt_5min: PriceSeries,
    pub rt_hourly_mean: PriceSeries,
    pub load: LoadSeries,
}

impl ZoneData {
    pub fn da_day(&self, day: usize) -> &[f64] {
        &self.da_hourly.values[day * HOURS_PER_DAY..(day + 1) * HOURS_PER_DAY]
    }

    pub fn rt_day(&self, day: usize) -> &[f64] {
        &self.rt_5min.values[day * INTERVALS_PER_DAY..(day + 1) * INTERVALS_PER_DAY]
    }

    pub fn rt_mean_day(&self, day: usize) -> &[f64] {
        &self.rt_hourly_mean.values[day * HOURS_PER_DAY..(day + 1) * HOURS_PER_DAY]
    }
}

/// Whole-day, gap-free price and load data for one or more zones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketDataset {
    zones: BTreeMap<String, ZoneData>,
    first_day: NaiveDate,
    last_day: NaiveDate,
}

fn check_whole_days(zone: &str, start: NaiveDateTime, len: usize, per_day: usize) -> Result<usize> {
    if start.time() != chrono::NaiveTime::MIN {
        return Err(DataError::IncompleteDay {
            zone: zone.to_string(),
            detail: format!("series starts at {start}, not midnight"),
        });
    }
    if len == 0 || !len.is_multiple_of(per_day) {
        return Err(DataError::IncompleteDay {
            zone: zone.to_string(),
            detail: format!("{len} values is not a whole number of {per_day}-value days"),
        });
    }
    Ok(len / per_day)
}

impl MarketDataset {
    /// Assembles a dataset from per-zone `(da, rt, load)` series. The hourly
    /// real-time mean is derived from the five-minute series.
    pub fn from_series(parts: Vec<(PriceSeries, PriceSeries, LoadSeries)>) -> Result<Self> {
        let mut zones = BTreeMap::new();
        let mut span: Option<(NaiveDate, usize)> = None;
        for (da, rt, load) in parts {
            let zone = da.zone.clone();
            if da.resolution != Resolution::Hourly {
                return Err(DataError::WrongResolution {
                    expected: Resolution::Hourly,
                });
            }
            if rt.resolution != Resolution::FiveMinute {
                return Err(DataError::WrongResolution {
                    expected: Resolution::FiveMinute,
                });
            }
            let d_da = check_whole_days(&zone, da.start, da.len(), HOURS_PER_DAY)?;
            let d_rt = check_whole_days(&zone, rt.start, rt.len(), INTERVALS_PER_DAY)?;
            let d_ld = check_whole_days(&zone, load.start, load.values.len(), HOURS_PER_DAY)?;
            if d_da != d_rt
                || d_da != d_ld
                || da.start != rt.start
                || da.start != load.start
                || rt.zone != zone
                || load.zone != zone
            {
                return Err(DataError::SpanMismatch(zone));
            }
            let this = (da.start.date(), d_da);
            match span {
                None => span = Some(this),
                Some(s) if s != this => return Err(DataError::SpanMismatch(zone)),
                _ => {}
            }
            for (index, &value) in da.values.iter().chain(&rt.values).enumerate() {
                if !value.is_finite() {
                    return Err(DataError::NonFiniteInput { index, value });
                }
            }
            for (index, &value) in load.values.iter().enumerate() {
                if !value.is_finite() {
                    return Err(DataError::NonFiniteInput { index, value });
                }
                if value < 0.0 {
                    return Err(DataError::NegativeLoad { index, value });
                }
            }
            let rt_hourly_mean = resample_hourly_mean(&rt)?;
            zones.insert(
                zone,
                ZoneData {
                    da_hourly: da,
                    rt_5min: rt,
                    rt_hourly_mean,
                    load,
                },
            );
        }
        let (first_day, days) = span.ok_or_else(|| DataError::NoRows("<any>".into()))?;
        Ok(Self {
            zones,
            first_day,
            last_day: first_day + Duration::days(days as i64 - 1),
        })
    }

    /// Reads `da_hourly.csv`, `rt_5min.csv` and `load_hourly.csv` from `dir`.
    pub fn load_dir(dir: &Path, zones: &[String], fill: &FillPolicy) -> Result<Self> {
        let mut parts = Vec::new();
        for zone in zones {
            let da = load_csv(&dir.join(SeriesKind::Da.file_name()), SeriesKind::Da, zone, fill)?;
            let rt = load_csv(&dir.join(SeriesKind::Rt.file_name()), SeriesKind::Rt, zone, fill)?;
            let load = load_csv(&dir.join(SeriesKind::Load.file_name()), SeriesKind::Load, zone, fill)?;
            parts.push((
                da.into_price().expect("da is a price series"),
                rt.into_price().expect("rt is a price series"),
                load.into_load().expect("load is a load series"),
            ));
        }
        Self::from_series(parts)
    }

    /// Writes the three ingestion CSVs into `dir` (created if missing).
    /// `preamble` lines are written as leading `#` comments.
    pub fn write_dir(&self, dir: &Path, preamble: &[String]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for kind in [SeriesKind::Da, SeriesKind::Rt, SeriesKind::Load] {
            let path = dir.join(kind.file_name());
            let mut out = String::new();
            for line in preamble {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
            out.push_str("timestamp,zone,");
            out.push_str(kind.value_column());
            out.push('\n');
            for (zone, data) in &self.zones {
                let (start, step, values) = match kind {
                    SeriesKind::Da => (data.da_hourly.start, Resolution::Hourly.step(), &data.da_hourly.values),
                    SeriesKind::Rt => (data.rt_5min.start, Resolution::FiveMinute.step(), &data.rt_5min.values),
                    SeriesKind::Load => (data.load.start, Resolution::Hourly.step(), &data.load.values),
                };
                for (i, v) in values.iter().enumerate() {
                    let ts = start + step * i as i32;
                    out.push_str(&format!("{},{},{}\n", ts.format(TIMESTAMP_FORMAT), zone, v));
                }
            }
            std::fs::write(&path, out).map_err(|source| DataError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }

    pub fn zone(&self, zone: &str) -> Result<&ZoneData> {
        self.zones
            .get(zone)
            .ok_or_else(|| DataError::UnknownZone(zone.to_string()))
    }

    pub fn zone_names(&self) -> impl Iterator<Item = &str> {
        self.zones.keys().map(String::as_str)
    }

    pub fn first_day(&self) -> NaiveDate {
        self.first_day
    }

    pub fn last_day(&self) -> NaiveDate {
        self.last_day
    }

    pub fn days(&self) -> usize {
        (self.last_day - self.first_day).num_days() as usize + 1
    }

    pub fn hours(&self) -> usize {
        self.days() * HOURS_PER_DAY
    }

    pub fn start(&self) -> NaiveDateTime {
        self.first_day.and_time(chrono::NaiveTime::MIN)
    }

    pub fn day(&self, index: usize) -> NaiveDate {
        self.first_day + Duration::days(index as i64)
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        if date < self.first_day || date > self.last_day {
            None
        } else {
            Some((date - self.first_day).num_days() as usize)
        }
    }

    pub fn hour_timestamp(&self, hour: usize) -> NaiveDateTime {
        self.start() + Duration::hours(hour as i64)
    }

    /// Hour index of `ts` on the hourly timeline, if it lies on it.
    pub fn hour_index(&self, ts: NaiveDateTime) -> Option<usize> {
        let delta = ts - self.start();
        if delta < Duration::zero() || delta.num_seconds() % 3600 != 0 {
            return None;
        }
        let h = delta.num_hours() as usize;
        (h <= self.hours()).then_some(h)
    }
}

/// Half-open range of hour indices on a dataset's hourly timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HourRange {
    pub start: usize,
    pub end: usize,
}

impl HourRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, hour: usize) -> bool {
        hour >= self.start && hour < self.end
    }

    /// Day indices whose 24 hours all lie inside the range.
    pub fn full_days(&self) -> std::ops::Range<usize> {
        let first = self.start.div_ceil(HOURS_PER_DAY);
        let last = self.end / HOURS_PER_DAY;
        first..last.max(first)
    }
}

/// Partitions the hourly timeline at `boundaries`, returning
/// `boundaries.len() + 1` contiguous, disjoint ranges.
pub fn split_dataset(ds: &MarketDataset, boundaries: &[NaiveDateTime]) -> Result<Vec<HourRange>> {
    let mut cuts = vec![0];
    for &b in boundaries {
        let h = ds
            .hour_index(b)
            .filter(|&h| h > *cuts.last().unwrap() && h < ds.hours())
            .ok_or(DataError::BoundaryOutOfRange(b))?;
        cuts.push(h);
    }
    cuts.push(ds.hours());
    Ok(cuts
        .windows(2)
        .map(|w| HourRange {
            start: w[0],
            end: w[1],
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: HourRange,
    pub val: HourRange,
    pub test: HourRange,
}

/// Train/validation/test split with validation starting at `val_start` and
/// test at `test_start` (both midnight dates).
pub fn split_train_val_test(ds: &MarketDataset, val_start: NaiveDate, test_start: NaiveDate) -> Result<DataSplit> {
    let parts = split_dataset(
        ds,
        &[
            val_start.and_time(chrono::NaiveTime::MIN),
            test_start.and_time(chrono::NaiveTime::MIN),
        ],
    )?;
    Ok(DataSplit {
        train: parts[0],
        val: parts[1],
        test: parts[2],
    })
}

/// Per-channel statistics captured when a window is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats { mean: 0.0, std: 1.0 };

    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }

    /// Divisor actually used: the std guarded from below by [`NORM_EPS`].
    pub fn scale(&self) -> f64 {
        self.std.max(NORM_EPS)
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale()
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.scale() + self.mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    pub transform: Transform,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            lookback: 336,
            horizon: 24,
            stride: 24,
            transform: Transform::Raw,
        }
    }
}

/// One supervised example: `channels × lookback` history and the next
/// `horizon` hours of the hourly real-time mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    /// Row-major `channels × lookback`, transformed but not normalized.
    pub input: Vec<f64>,
    pub channels: usize,
    pub lookback: usize,
    /// Raw target prices ($/MWh).
    pub target: Vec<f64>,
    pub target_day: NaiveDate,
    /// Timestamp of the first target hour.
    pub target_start: NaiveDateTime,
    /// Timestamp of the last input hour.
    pub input_end: NaiveDateTime,
    pub norm_stats: Vec<NormStats>,
    pub transform: Transform,
}

impl WindowSample {
    pub fn channel(&self, j: usize) -> &[f64] {
        &self.input[j * self.lookback..(j + 1) * self.lookback]
    }

    pub fn horizon(&self) -> usize {
        self.target.len()
    }

    pub fn normalized_channel(&self, j: usize) -> Vec<f64> {
        let s = self.norm_stats[j];
        self.channel(j).iter().map(|&x| s.normalize(x)).collect()
    }

    /// Target in the model's training space: transformed, then normalized
    /// with the target channel's statistics.
    pub fn normalized_target(&self) -> Vec<f64> {
        let s = self.norm_stats[0];
        self.target
            .iter()
            .map(|&x| s.normalize(self.transform.apply(x)))
            .collect()
    }

    /// Maps model-space outputs back to $/MWh.
    pub fn to_price(&self, z: &[f64]) -> Vec<f64> {
        let s = self.norm_stats[0];
        z.iter()
            .map(|&v| self.transform.invert(s.denormalize(v)))
            .collect()
    }

    /// Recomputes the normalization statistics from the current input.
    pub fn refresh_stats(&mut self) {
        self.norm_stats = (0..self.channels).map(|j| NormStats::of(self.channel(j))).collect();
    }
}

/// Builds windows whose targets fall anywhere in the dataset.
pub fn build_windows(ds: &MarketDataset, zone: &str, cfg: &WindowConfig) -> Result<Vec<WindowSample>> {
    build_windows_in(
        ds,
        zone,
        cfg,
        HourRange {
            start: 0,
            end: ds.hours(),
        },
    )
}

/// Builds windows whose whole target lies in `targets`. Target start hours
/// sit on the grid `lookback + k * stride` anchored at the dataset start, and
/// inputs are the `lookback` hours immediately before the target.
pub fn build_windows_in(ds: &MarketDataset, zone: &str, cfg: &WindowConfig, targets: HourRange) -> Result<Vec<WindowSample>> {
    if cfg.lookback == 0 || cfg.horizon == 0 || cfg.stride == 0 {
        return Err(DataError::InvalidGeometry(format!("{cfg:?}")));
    }
    let data = ds.zone(zone)?;
    let need = cfg.lookback + cfg.horizon;
    if ds.hours() < need {
        return Err(DataError::SpanTooShort {
            have: ds.hours(),
            need,
        });
    }
    let channels: [&[f64]; 3] = [
        &data.rt_hourly_mean.values,
        &data.da_hourly.values,
        &data.load.values,
    ];
    let mut out = Vec::new();
    let mut t0 = cfg.lookback;
    while t0 < targets.start {
        t0 += cfg.stride;
    }
    while t0 + cfg.horizon <= targets.end.min(ds.hours()) {
        let mut input = Vec::with_capacity(channels.len() * cfg.lookback);
        for (j, ch) in channels.iter().enumerate() {
            let hist = &ch[t0 - cfg.lookback..t0];
            if j < 2 {
                input.extend(hist.iter().map(|&x| cfg.transform.apply(x)));
            } else {
                input.extend_from_slice(hist);
            }
        }
        let target_start = ds.hour_timestamp(t0);
        let mut sample = WindowSample {
            input,
            channels: channels.len(),
            lookback: cfg.lookback,
            target: channels[0][t0..t0 + cfg.horizon].to_vec(),
            target_day: target_start.date(),
            target_start,
            input_end: ds.hour_timestamp(t0 - 1),
            norm_stats: Vec::new(),
            transform: cfg.transform,
        };
        sample.refresh_stats();
        out.push(sample);
        t0 += cfg.stride;
    }
    Ok(out)
}

/// Knobs of the synthetic market. Defaults give a mildly noisy single zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub start_date: NaiveDate,
    pub zones: Vec<String>,
    pub base_price: f64,
    /// Amplitude of the 24-hour sinusoid (peak late afternoon).
    pub daily_amplitude: f64,
    /// Weekend discount; weekdays carry no offset.
    pub weekend_discount: f64,
    /// Optional extra sinusoid with a period that is not a divisor of a week.
    pub extra_period_hours: f64,
    pub extra_amplitude: f64,
    /// Day-level AR(1) shock: std and persistence.
    pub level_std: f64,
    pub level_persistence: f64,
    pub da_noise_std: f64,
    pub rt_noise_std: f64,
    /// Per-interval probability of an exponential upward spike.
    pub spike_prob: f64,
    pub spike_mean: f64,
    /// Per-interval probability of a strictly negative price.
    pub negative_prob: f64,
    pub negative_scale: f64,
    pub load_base: f64,
    pub load_amplitude: f64,
    pub load_noise_std: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            start_date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            zones: vec!["SYN".to_string()],
            base_price: 40.0,
            daily_amplitude: 12.0,
            weekend_discount: 5.0,
            extra_period_hours: 60.0,
            extra_amplitude: 0.0,
            level_std: 0.0,
            level_persistence: 0.8,
            da_noise_std: 0.0,
            rt_noise_std: 0.0,
            spike_prob: 0.0,
            spike_mean: 100.0,
            negative_prob: 0.0,
            negative_scale: 20.0,
            load_base: 5000.0,
            load_amplitude: 1200.0,
            load_noise_std: 0.0,
        }
    }
}

impl SynthParams {
    /// Deterministic hourly template (without the day-level shock).
    pub fn template(&self, date: NaiveDate, hour_of_day: usize, abs_hour: usize) -> f64 {
        use std::f64::consts::TAU;
        let h = hour_of_day as f64;
        let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
        let mut v = self.base_price + self.daily_amplitude * (TAU * (h - 11.0) / 24.0).sin();
        if weekend {
            v -= self.weekend_discount;
        }
        if self.extra_amplitude != 0.0 && self.extra_period_hours > 0.0 {
            v += self.extra_amplitude * (TAU * abs_hour as f64 / self.extra_period_hours).sin();
        }
        v
    }
}

fn normal(std: f64) -> Option<Normal<f64>> {
    (std > 0.0).then(|| Normal::new(0.0, std).expect("finite std"))
}

/// Seeded synthetic market. Each zone draws from its own ChaCha stream, so
/// adding zones never perturbs existing ones.
pub fn synth_generate(seed: u64, days: usize, params: &SynthParams) -> MarketDataset {
    let days = days.max(1);
    let start = params.start_date.and_time(chrono::NaiveTime::MIN);
    let mut parts = Vec::new();
    for (zi, zone) in params.zones.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(zi as u64);
        let level_noise = normal(params.level_std);
        let da_noise = normal(params.da_noise_std);
        let rt_noise = normal(params.rt_noise_std);
        let load_noise = normal(params.load_noise_std);
        let spike = Exp::new(1.0 / params.spike_mean.max(1e-9)).expect("positive rate");
        // Expected contribution of spikes and negative events, priced into DA.
        let spike_premium = params.spike_prob * params.spike_mean;

        let mut da = Vec::with_capacity(days * HOURS_PER_DAY);
        let mut rt = Vec::with_capacity(days * INTERVALS_PER_DAY);
        let mut load = Vec::with_capacity(days * HOURS_PER_DAY);
        let mut level = 0.0;
        for d in 0..days {
            let date = params.start_date + Duration::days(d as i64);
            if let Some(n) = &level_noise {
                level = params.level_persistence * level + n.sample(&mut rng);
            }
            for h in 0..HOURS_PER_DAY {
                let abs_hour = d * HOURS_PER_DAY + h;
                let expected = params.template(date, h, abs_hour) + level;
                let mut da_price = expected + spike_premium;
                if let Some(n) = &da_noise {
                    da_price += n.sample(&mut rng);
                }
                da.push(da_price);
                for _ in 0..INTERVALS_PER_HOUR {
                    let p = if params.negative_prob > 0.0 && rng.random::<f64>() < params.negative_prob {
                        -params.negative_scale * (0.05 + 0.95 * rng.random::<f64>())
                    } else {
                        let mut p = expected;
                        if let Some(n) = &rt_noise {
                            p += n.sample(&mut rng);
                        }
                        if params.spike_prob > 0.0 && rng.random::<f64>() < params.spike_prob {
                            p += spike.sample(&mut rng);
                        }
                        p.max(0.0)
                    };
                    rt.push(p);
                }
                let mut l = params.load_base
                    + params.load_amplitude * (std::f64::consts::TAU * (h as f64 - 11.0) / 24.0).sin();
                if let Some(n) = &load_noise {
                    l += n.sample(&mut rng);
                }
                load.push(l.max(0.0));
            }
        }
        parts.push((
            PriceSeries {
                zone: zone.clone(),
                resolution: Resolution::Hourly,
                start,
                values: da,
            },
            PriceSeries {
                zone: zone.clone(),
                resolution: Resolution::FiveMinute,
                start,
                values: rt,
            },
            LoadSeries {
                zone: zone.clone(),
                start,
                values: load,
            },
        ));
    }
    MarketDataset::from_series(parts).expect("synthetic series are whole days")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneStats {
    pub mean_dap: f64,
    pub std_dap: f64,
    pub mean_rtp: f64,
    pub std_rtp: f64,
    pub negative_rtp: usize,
}

/// Sample mean and sample (n - 1) standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Price statistics of `zone` over `range` (the whole span when `None`).
pub fn zone_stats(ds: &MarketDataset, zone: &str, range: Option<HourRange>) -> Result<ZoneStats> {
    let data = ds.zone(zone)?;
    let range = range.unwrap_or(HourRange {
        start: 0,
        end: ds.hours(),
    });
    let da = &data.da_hourly.values[range.start..range.end];
    let rt = &data.rt_5min.values[range.start * INTERVALS_PER_HOUR..range.end * INTERVALS_PER_HOUR];
    let (mean_dap, std_dap) = mean_std(da);
    let (mean_rtp, std_rtp) = mean_std(rt);
    Ok(ZoneStats {
        mean_dap,
        std_dap,
        mean_rtp,
        std_rtp,
        negative_rtp: rt.iter().filter(|&&v| v < 0.0).count(),
    })
}

/// Seven-day-lag lookup used by the naive forecaster.
pub fn lagged_day(ds: &MarketDataset, zone: &str, target_day: NaiveDate, lag_days: usize) -> Result<Vec<f64>> {
    let data = ds.zone(zone)?;
    let d = ds
        .day_index(target_day)
        .ok_or(DataError::InsufficientHistory(target_day, lag_days))?;
    if d < lag_days {
        return Err(DataError::InsufficientHistory(target_day, lag_days));
    }
    Ok(data.rt_mean_day(d - lag_days).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn read(csv: &str, kind: SeriesKind) -> Result<Series> {
        read_csv(csv.as_bytes(), kind, "NYC", &FillPolicy::default())
    }

    #[test]
    fn two_row_rt_file() {
        let s = read(
            "timestamp,zone,price\n2021-01-01T00:00:00,NYC,40.5\n2021-01-01T00:05:00,NYC,41\n",
            SeriesKind::Rt,
        )
        .unwrap();
        assert_eq!(s.values(), &[40.5, 41.0]);
    }

    #[test]
    fn unsorted_rows_are_sorted_and_other_zones_skipped() {
        let s = read(
            "timestamp,zone,price\n2021-01-01T01:00:00,NYC,2\n2021-01-01T00:00:00,WEST,9\n2021-01-01T00:00:00,NYC,1\n",
            SeriesKind::Da,
        )
        .unwrap();
        assert_eq!(s.values(), &[1.0, 2.0]);
    }

    #[test]
    fn single_missing_interval_is_forward_filled() {
        let s = read(
            "timestamp,zone,price\n2021-01-01 00:00,NYC,10\n2021-01-01 00:10,NYC,30\n",
            SeriesKind::Rt,
        )
        .unwrap();
        assert_eq!(s.values(), &[10.0, 10.0, 30.0]);
    }

    #[test]
    fn gap_limits() {
        let mut csv = String::from("timestamp,zone,price\n2021-01-01T00:00:00,NYC,1\n");
        // 25 missing hours between 00:00 and 02:00 the next day.
        csv.push_str("2021-01-02T02:00:00,NYC,2\n");
        assert!(matches!(
            read(&csv, SeriesKind::Da),
            Err(DataError::GapExceedsLimit { missing: 25, limit: 24, .. })
        ));
        let mut ok = String::from("timestamp,zone,price\n2021-01-01T00:00:00,NYC,1\n");
        ok.push_str("2021-01-02T01:00:00,NYC,2\n");
        assert_eq!(read(&ok, SeriesKind::Da).unwrap().len(), 26);
    }

    #[test]
    fn ingestion_errors() {
        assert!(matches!(
            read("timestamp,zone\n", SeriesKind::Da),
            Err(DataError::MissingColumn(c)) if c == "price"
        ));
        assert!(matches!(
            read("timestamp,zone,price\n2021-01-01T00:00:00,NYC,abc\n", SeriesKind::Da),
            Err(DataError::UnparseableValue { line: 2, .. })
        ));
        assert!(matches!(
            read(
                "timestamp,zone,price\n2021-01-01T00:00:00,NYC,1\n2021-01-01T00:00:00,NYC,2\n",
                SeriesKind::Da
            ),
            Err(DataError::NonMonotonicTimestamps(_))
        ));
        assert!(matches!(
            read("timestamp,zone,mw\n2021-01-01T00:00:00,NYC,-1\n", SeriesKind::Load),
            Err(DataError::NegativeLoad { .. })
        ));
        assert!(matches!(
            read("timestamp,zone,price\n2021-01-01T00:30:00,NYC,1\n", SeriesKind::Da),
            Err(DataError::MisalignedTimestamp(_))
        ));
    }

    #[test]
    fn resample_examples() {
        let mk = |values: Vec<f64>| PriceSeries {
            zone: "Z".into(),
            resolution: Resolution::FiveMinute,
            start: ts("2021-01-01T00:00:00"),
            values,
        };
        assert_eq!(resample_hourly_mean(&mk(vec![40.0; 12])).unwrap().values, vec![40.0]);
        let v = vec![0., 0., 0., 0., 0., 0., 12., 12., 12., 12., 12., 12.];
        assert_eq!(resample_hourly_mean(&mk(v)).unwrap().values, vec![6.0]);
        assert!(matches!(
            resample_hourly_mean(&mk(vec![1.0; 13])),
            Err(DataError::LengthNotDivisible { len: 13, divisor: 12 })
        ));
    }

    #[test]
    fn resample_full_synthetic_day_matches_naive_sums() {
        let p = SynthParams {
            rt_noise_std: 5.0,
            spike_prob: 0.02,
            ..SynthParams::default()
        };
        let ds = synth_generate(7, 1, &p);
        let z = ds.zone("SYN").unwrap();
        for h in 0..24 {
            let mut acc = 0.0;
            let mut k = 0;
            while k < 12 {
                acc += z.rt_5min.values[h * 12 + k];
                k += 1;
            }
            assert!((z.rt_hourly_mean.values[h] - acc / 12.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn signed_log_examples() {
        assert_eq!(signed_log(0.0).unwrap(), 0.0);
        assert!((signed_log(std::f64::consts::E - 1.0).unwrap() - 1.0).abs() < 1e-15);
        let y = signed_log(-42.49).unwrap();
        // ln(43.49) = 3.772531... evaluated independently via ln of the sum.
        assert!((y + 43.49f64.ln()).abs() < 1e-14);
        let back = inverse_signed_log(y).unwrap();
        assert!((back + 42.49).abs() / 42.49 <= 1e-12);
        assert!(signed_log(f64::NAN).is_err());
        assert!(signed_log(f64::INFINITY).is_err());
    }

    #[test]
    fn window_counts() {
        let p = SynthParams::default();
        let cfg = WindowConfig::default();
        let exact = synth_generate(1, 15, &p);
        assert_eq!(build_windows(&exact, "SYN", &cfg).unwrap().len(), 1);
        let month = synth_generate(1, 30, &p);
        // Target starts 336, 360, ..., 696.
        let expected = (336..=720 - 24).step_by(24).count();
        assert_eq!(expected, 16);
        assert_eq!(build_windows(&month, "SYN", &cfg).unwrap().len(), expected);
        let short = synth_generate(1, 14, &p);
        assert!(matches!(
            build_windows(&short, "SYN", &cfg),
            Err(DataError::SpanTooShort { .. })
        ));
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let p = SynthParams {
            daily_amplitude: 0.0,
            weekend_discount: 0.0,
            ..SynthParams::default()
        };
        let ds = synth_generate(2, 16, &p);
        let w = &build_windows(&ds, "SYN", &WindowConfig::default()).unwrap()[0];
        assert!(w.norm_stats[0].std < NORM_EPS);
        assert!(w.normalized_channel(0).iter().all(|&z| z == 0.0));
    }

    #[test]
    fn windows_are_normalized_and_do_not_leak() {
        let p = SynthParams {
            rt_noise_std: 3.0,
            level_std: 2.0,
            ..SynthParams::default()
        };
        let ds = synth_generate(5, 40, &p);
        let cfg = WindowConfig {
            stride: 7,
            transform: Transform::SignedLog,
            ..WindowConfig::default()
        };
        let ws = build_windows(&ds, "SYN", &cfg).unwrap();
        assert!(!ws.is_empty());
        for w in &ws {
            assert!(w.input_end < w.target_start);
            for j in 0..w.channels {
                let z = w.normalized_channel(j);
                let s = NormStats::of(&z);
                assert!(s.mean.abs() <= 1e-9);
                assert!((s.std - 1.0).abs() <= 1e-6);
            }
        }
        assert!(ws.windows(2).all(|p| p[0].target_start < p[1].target_start));
    }

    #[test]
    fn five_year_split() {
        let p = SynthParams {
            start_date: NaiveDate::from_ymd_opt(2017, 1, 1).unwrap(),
            ..SynthParams::default()
        };
        let ds = synth_generate(1, 1826, &p);
        assert_eq!(ds.last_day(), NaiveDate::from_ymd_opt(2021, 12, 31).unwrap());
        let s = split_train_val_test(
            &ds,
            NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
        )
        .unwrap();
        assert_eq!(s.train.len(), 1095 * 24);
        assert_eq!(s.val.len(), 366 * 24);
        assert_eq!(s.test.len(), 365 * 24);
        assert_eq!(s.train.end, s.val.start);
        assert_eq!(s.val.end, s.test.start);
        assert_eq!(s.test.end, ds.hours());

        let cfg = WindowConfig::default();
        let train = build_windows_in(&ds, "SYN", &cfg, s.train).unwrap();
        let test_start = ds.hour_timestamp(s.test.start);
        assert!(train.iter().all(|w| w.input_end < test_start && w.target_start < test_start));
    }

    #[test]
    fn split_edge_cases() {
        let ds = synth_generate(1, 1, &SynthParams::default());
        let parts = split_dataset(&ds, &[ts("2021-01-01T12:00:00")]).unwrap();
        assert_eq!(parts, vec![HourRange { start: 0, end: 12 }, HourRange { start: 12, end: 24 }]);
        let bad = split_dataset(&ds, &[ts("2021-01-01T12:00:00"), ts("2021-01-01T06:00:00")]);
        assert!(matches!(bad, Err(DataError::BoundaryOutOfRange(_))));
        assert!(split_dataset(&ds, &[ts("2021-01-02T00:00:00")]).is_err());
        assert!(split_dataset(&ds, &[ts("2021-01-01T00:00:00")]).is_err());
    }

    #[test]
    fn synth_is_deterministic() {
        let p = SynthParams {
            rt_noise_std: 4.0,
            spike_prob: 0.01,
            negative_prob: 0.01,
            level_std: 3.0,
            da_noise_std: 1.0,
            load_noise_std: 50.0,
            zones: vec!["A".into(), "B".into()],
            ..SynthParams::default()
        };
        let a = serde_json::to_string(&synth_generate(1, 10, &p)).unwrap();
        let b = serde_json::to_string(&synth_generate(1, 10, &p)).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&synth_generate(2, 10, &p)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_free_rt_mean_is_template() {
        let p = SynthParams {
            extra_amplitude: 3.0,
            ..SynthParams::default()
        };
        let ds = synth_generate(11, 9, &p);
        let z = ds.zone("SYN").unwrap();
        for (i, &v) in z.rt_hourly_mean.values.iter().enumerate() {
            let date = ds.day(i / 24);
            assert!((v - p.template(date, i % 24, i)).abs() <= 1e-9);
        }
    }

    #[test]
    fn negative_price_frequency_is_binomial() {
        let prob = 0.05;
        let p = SynthParams {
            negative_prob: prob,
            ..SynthParams::default()
        };
        let ds = synth_generate(3, 100, &p);
        let n = 100.0 * 288.0;
        let count = zone_stats(&ds, "SYN", None).unwrap().negative_rtp as f64;
        let mean = n * prob;
        let sigma = (n * prob * (1.0 - prob)).sqrt();
        // 1440 expected, sigma ~36.98
        assert!((count - mean).abs() <= 3.0 * sigma, "count {count}");
    }

    #[test]
    fn stats_examples() {
        let p = SynthParams {
            base_price: 10.0,
            daily_amplitude: 0.0,
            weekend_discount: 0.0,
            ..SynthParams::default()
        };
        let ds = synth_generate(1, 3, &p);
        let s = zone_stats(&ds, "SYN", None).unwrap();
        assert!((s.mean_dap - 10.0).abs() < 1e-12 && (s.mean_rtp - 10.0).abs() < 1e-12);
        assert!(s.std_dap < 1e-12 && s.std_rtp < 1e-12);
        assert_eq!(s.negative_rtp, 0);
        assert!(matches!(zone_stats(&ds, "NOPE", None), Err(DataError::UnknownZone(_))));
        let (m, _) = mean_std(&[-1.0, 1.0]);
        assert_eq!(m, 0.0);
    }

    #[test]
    fn csv_dir_round_trip() {
        let p = SynthParams {
            rt_noise_std: 4.0,
            zones: vec!["A".into(), "B".into()],
            ..SynthParams::default()
        };
        let ds = synth_generate(9, 2, &p);
        let dir = tempfile::tempdir().unwrap();
        ds.write_dir(dir.path(), &["seed=9".into()]).unwrap();
        let back = MarketDataset::load_dir(dir.path(), &p.zones, &FillPolicy::default()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn dataset_rejects_partial_days() {
        let start = ts("2021-01-01T00:00:00");
        let da = PriceSeries {
            zone: "Z".into(),
            resolution: Resolution::Hourly,
            start,
            values: vec![1.0; 23],
        };
        let rt = PriceSeries {
            zone: "Z".into(),
            resolution: Resolution::FiveMinute,
            start,
            values: vec![1.0; 288],
        };
        let load = LoadSeries {
            zone: "Z".into(),
            start,
            values: vec![1.0; 24],
        };
        assert!(matches!(
            MarketDataset::from_series(vec![(da, rt, load)]),
            Err(DataError::IncompleteDay { .. })
        ));
    }
}
