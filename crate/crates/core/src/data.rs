//! Historical data ingestion, day windowing, normalization, mini-batching and
//! synthetic multimodal datasets.
//!
//! Every [`ScenarioBatch`] holds values in `[0, 1]` (power divided by site
//! capacity). A sample is an `n_sites x timesteps` matrix stored site-major,
//! which is also the row layout the networks consume.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const MINUTES_PER_DAY: usize = 24 * 60;

/// Raw power series for one site, in MW.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSeries {
    pub site_id: String,
    pub capacity_mw: f64,
    pub resolution_minutes: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteMeta {
    pub capacity_mw: f64,
    pub resolution_minutes: usize,
}

/// Dataset manifest: `site_id -> {capacity_mw, resolution_minutes}`, stored as TOML.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sites: BTreeMap<String, SiteMeta>,
}

impl Manifest {
    pub fn uniform(site_ids: &[String], capacity_mw: f64, resolution_minutes: usize) -> Self {
        Self {
            sites: site_ids
                .iter()
                .map(|id| {
                    (
                        id.clone(),
                        SiteMeta {
                            capacity_mw,
                            resolution_minutes,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: Manifest = toml::from_str(&text)
            .map_err(|e| Error::InvalidData(format!("manifest {}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self)
            .map_err(|e| Error::InvalidData(format!("manifest serialization: {e}")))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites.is_empty() {
            return Err(Error::InvalidData("manifest lists no sites".into()));
        }
        for (id, meta) in &self.sites {
            if !(meta.capacity_mw > 0.0 && meta.capacity_mw.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "site {id}: capacity must be > 0"
                )));
            }
            if meta.resolution_minutes == 0 || MINUTES_PER_DAY % meta.resolution_minutes != 0 {
                return Err(Error::InvalidData(format!(
                    "site {id}: resolution {} min does not divide a day",
                    meta.resolution_minutes
                )));
            }
        }
        Ok(())
    }

    /// Capacities in the given site order.
    pub fn capacities(&self, site_ids: &[String]) -> Result<Vec<f64>> {
        site_ids
            .iter()
            .map(|id| {
                self.sites
                    .get(id)
                    .map(|m| m.capacity_mw)
                    .ok_or_else(|| Error::InvalidData(format!("site {id} missing from manifest")))
            })
            .collect()
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Load a `timestamp,<site_id>,...` CSV of MW values.
///
/// Rows must be strictly increasing in time with exactly the manifest
/// resolution between them; gaps, negative or non-finite values are
/// rejected. Row numbers in errors count the header as row 1.
pub fn load_csv(path: &Path, manifest: &Manifest) -> Result<Vec<SiteSeries>> {
    manifest.validate()?;
    let err = |row: usize, message: String| Error::Csv {
        path: PathBuf::from(path),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(err(1, "file is empty".into()));
    }
    if &headers[0] != "timestamp" {
        return Err(err(
            1,
            format!("first column must be `timestamp`, found `{}`", &headers[0]),
        ));
    }
    let site_ids: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    if site_ids.is_empty() {
        return Err(err(1, "no site columns".into()));
    }
    for id in &site_ids {
        if !manifest.sites.contains_key(id) {
            return Err(err(1, format!("column `{id}` is not in the manifest")));
        }
    }
    for id in manifest.sites.keys() {
        if !site_ids.contains(id) {
            return Err(err(1, format!("missing column for manifest site `{id}`")));
        }
    }
    let resolution = manifest.sites[&site_ids[0]].resolution_minutes;
    if let Some(id) = site_ids
        .iter()
        .find(|id| manifest.sites[*id].resolution_minutes != resolution)
    {
        return Err(err(
            1,
            format!("site `{id}` resolution differs from `{}`", site_ids[0]),
        ));
    }

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); site_ids.len()];
    let mut prev: Option<NaiveDateTime> = None;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| err(row, e.to_string()))?;
        if rec.len() != site_ids.len() + 1 {
            return Err(err(
                row,
                format!(
                    "expected {} fields, found {}",
                    site_ids.len() + 1,
                    rec.len()
                ),
            ));
        }
        let ts = parse_timestamp(&rec[0])
            .ok_or_else(|| err(row, format!("unparseable timestamp `{}`", &rec[0])))?;
        if let Some(p) = prev {
            if ts <= p {
                return Err(err(
                    row,
                    format!("timestamp {ts} is not after previous {p}"),
                ));
            }
            let step = (ts - p).num_minutes();
            if step != resolution as i64 {
                return Err(err(
                    row,
                    format!("gap of {step} min, expected {resolution} min (missing data is not imputed)"),
                ));
            }
        }
        prev = Some(ts);
        for (k, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| err(row, format!("site `{}`: bad value `{field}`", site_ids[k])))?;
            if !v.is_finite() {
                return Err(err(
                    row,
                    format!("site `{}`: non-finite value", site_ids[k]),
                ));
            }
            if v < 0.0 {
                return Err(err(
                    row,
                    format!("site `{}`: negative value {v}", site_ids[k]),
                ));
            }
            values[k].push(v);
        }
    }
    if prev.is_none() {
        return Err(err(2, "file has no data rows".into()));
    }
    Ok(site_ids
        .into_iter()
        .zip(values)
        .map(|(id, values)| {
            let meta = manifest.sites[&id];
            SiteSeries {
                site_id: id,
                capacity_mw: meta.capacity_mw,
                resolution_minutes: meta.resolution_minutes,
                values,
            }
        })
        .collect())
}

/// Write sites as a `timestamp,<site_id>,...` CSV, one row per step, starting
/// at midnight of `start`.
pub fn write_csv(path: &Path, series: &[SiteSeries], start: NaiveDateTime) -> Result<()> {
    let first = series
        .first()
        .ok_or_else(|| Error::InvalidData("no series to write".into()))?;
    let len = first.values.len();
    if series
        .iter()
        .any(|s| s.values.len() != len || s.resolution_minutes != first.resolution_minutes)
    {
        return Err(Error::InvalidData("series are not aligned".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::InvalidData(e.to_string()))?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(series.iter().map(|s| s.site_id.clone()));
    w.write_record(&header)
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    let step = chrono::Duration::minutes(first.resolution_minutes as i64);
    let mut ts = start;
    for t in 0..len {
        let mut rec = vec![ts.format("%Y-%m-%dT%H:%M:%S").to_string()];
        rec.extend(series.iter().map(|s| format!("{}", s.values[t])));
        w.write_record(&rec)
            .map_err(|e| Error::InvalidData(e.to_string()))?;
        ts += step;
    }
    w.flush()?;
    Ok(())
}

/// Where a batch came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Historical,
    Synthetic,
    Generated(usize),
}

/// A set of equally shaped scenario matrices with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBatch {
    n_sites: usize,
    timesteps: usize,
    data: Vec<f64>,
    pub provenance: Provenance,
}

impl ScenarioBatch {
    pub fn new(
        n_sites: usize,
        timesteps: usize,
        data: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if n_sites == 0 || timesteps == 0 {
            return Err(Error::InvalidData(
                "scenario shape must be non-empty".into(),
            ));
        }
        let width = n_sites * timesteps;
        if data.len() % width != 0 {
            return Err(Error::mismatch(
                "scenario data length",
                width,
                data.len() % width,
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidData(format!(
                "scenario value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            n_sites,
            timesteps,
            data,
            provenance,
        })
    }

    pub fn from_matrix(
        n_sites: usize,
        timesteps: usize,
        m: Matrix,
        provenance: Provenance,
    ) -> Result<Self> {
        if m.cols() != n_sites * timesteps {
            return Err(Error::mismatch(
                "scenario width",
                n_sites * timesteps,
                m.cols(),
            ));
        }
        Self::new(n_sites, timesteps, m.into_vec(), provenance)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    /// Flattened sample width, `n_sites * timesteps`.
    pub fn width(&self) -> usize {
        self.n_sites * self.timesteps
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Sample `i`, site-major.
    pub fn sample(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    /// Site `s` of sample `i`.
    pub fn site(&self, i: usize, s: usize) -> &[f64] {
        let start = i * self.width() + s * self.timesteps;
        &self.data[start..start + self.timesteps]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width())
    }

    /// One sample per row.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.width(), self.data.clone()).expect("consistent shape")
    }

    /// Rows `indices` as a matrix, in the given order.
    pub fn gather(&self, indices: &[usize]) -> Matrix {
        let w = self.width();
        let mut out = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            out.extend_from_slice(self.sample(i));
        }
        Matrix::from_vec(indices.len(), w, out).expect("consistent shape")
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            n_sites: self.n_sites,
            timesteps: self.timesteps,
            data: self.gather(indices).into_vec(),
            provenance: self.provenance,
        }
    }

    /// Append `other`'s samples. Shapes must match.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.n_sites != other.n_sites || self.timesteps != other.timesteps {
            return Err(Error::InvalidData(format!(
                "cannot concatenate {}x{} with {}x{} scenarios",
                self.n_sites, self.timesteps, other.n_sites, other.timesteps
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            n_sites: self.n_sites,
            timesteps: self.timesteps,
            data,
            provenance: self.provenance,
        })
    }
}

/// Normalized values together with how many inputs exceeded capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub overage_count: usize,
}

/// Divide by capacity, clamping anything above capacity to 1.
pub fn normalize(values_mw: &[f64], capacity_mw: f64) -> Result<Normalized> {
    if !(capacity_mw > 0.0 && capacity_mw.is_finite()) {
        return Err(Error::InvalidData(format!(
            "capacity must be > 0, got {capacity_mw}"
        )));
    }
    let mut overage_count = 0;
    let values = values_mw
        .iter()
        .map(|&v| {
            let x = v / capacity_mw;
            if x > 1.0 {
                overage_count += 1;
                1.0
            } else {
                x.max(0.0)
            }
        })
        .collect();
    Ok(Normalized {
        values,
        overage_count,
    })
}

pub fn denormalize(values: &[f64], capacity_mw: f64) -> Vec<f64> {
    values.iter().map(|v| v * capacity_mw).collect()
}

/// Result of [`window_into_days`].
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDays {
    pub batch: ScenarioBatch,
    pub site_ids: Vec<String>,
    pub capacities: Vec<f64>,
    /// Trailing points per site that did not fill a whole day.
    pub dropped_points: usize,
    /// Values clamped to capacity during normalization.
    pub overage_count: usize,
}

/// Normalize each site by its capacity and cut the aligned series into
/// non-overlapping days, stacking sites into one matrix per day.
pub fn window_into_days(series: &[SiteSeries]) -> Result<WindowedDays> {
    let first = series
        .first()
        .ok_or_else(|| Error::InvalidData("no series to window".into()))?;
    let res = first.resolution_minutes;
    if res == 0 || MINUTES_PER_DAY % res != 0 {
        return Err(Error::InvalidData(format!(
            "resolution {res} min does not divide a day"
        )));
    }
    let len = first.values.len();
    for s in series {
        if s.resolution_minutes != res {
            return Err(Error::InvalidData(format!(
                "site {} has resolution {} min, expected {res}",
                s.site_id, s.resolution_minutes
            )));
        }
        if s.values.len() != len {
            return Err(Error::mismatch(
                format!("length of site {}", s.site_id),
                len,
                s.values.len(),
            ));
        }
    }
    let per_day = MINUTES_PER_DAY / res;
    let days = len / per_day;
    if days == 0 {
        return Err(Error::InvalidData(format!(
            "series of {len} points is shorter than one day ({per_day} points)"
        )));
    }
    let mut normalized = Vec::with_capacity(series.len());
    let mut overage_count = 0;
    for s in series {
        let n = normalize(&s.values, s.capacity_mw)?;
        overage_count += n.overage_count;
        normalized.push(n.values);
    }
    let mut data = Vec::with_capacity(days * series.len() * per_day);
    for d in 0..days {
        for site in &normalized {
            data.extend_from_slice(&site[d * per_day..(d + 1) * per_day]);
        }
    }
    Ok(WindowedDays {
        batch: ScenarioBatch::new(series.len(), per_day, data, Provenance::Historical)?,
        site_ids: series.iter().map(|s| s.site_id.clone()).collect(),
        capacities: series.iter().map(|s| s.capacity_mw).collect(),
        dropped_points: len - days * per_day,
        overage_count,
    })
}

/// One epoch of shuffled mini-batches of sample indices. The last batch is
/// shorter when `m` does not divide `n`.
pub fn shuffle_and_batch<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<impl Iterator<Item = Vec<usize>>> {
    if m == 0 || m > n {
        return Err(Error::InvalidConfig(format!(
            "batch size {m} must be in 1..={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order
        .chunks(m)
        .map(<[usize]>::to_vec)
        .collect::<Vec<_>>()
        .into_iter())
}

/// Endless fixed-size mini-batch stream: shuffle without replacement, hand
/// out full batches, reshuffle when fewer than `m` indices remain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochBatcher {
    n: usize,
    m: usize,
    order: Vec<usize>,
    cursor: usize,
    pub passes: u64,
}

impl EpochBatcher {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::InvalidConfig(format!(
                "batch size {m} must be in 1..={n}"
            )));
        }
        Ok(Self {
            n,
            m,
            order: (0..n).collect(),
            // forces a shuffle on first use
            cursor: n,
            passes: 0,
        })
    }

    pub fn dataset_len(&self) -> usize {
        self.n
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        if self.cursor + self.m > self.n {
            self.order.shuffle(rng);
            self.cursor = 0;
            self.passes += 1;
        }
        let b = self.order[self.cursor..self.cursor + self.m].to_vec();
        self.cursor += self.m;
        b
    }
}

/// Daylight band `[rise, set)` used by the solar construction.
pub fn daylight_band(timesteps: usize) -> (usize, usize) {
    let rise = timesteps / 4;
    (rise, timesteps - rise)
}

fn check_timesteps(timesteps: usize) -> Result<()> {
    if timesteps < 8 {
        return Err(Error::InvalidConfig(format!(
            "synthetic profiles need at least 8 timesteps, got {timesteps}"
        )));
    }
    Ok(())
}

/// Clear-sky bell over the daylight band with random peak in `[0.5, 1]` and
/// per-step cloud attenuation; exactly zero at night.
pub fn synth_solar<R: Rng + ?Sized>(
    n_samples: usize,
    timesteps: usize,
    rng: &mut R,
) -> Result<ScenarioBatch> {
    check_timesteps(timesteps)?;
    let (rise, set) = daylight_band(timesteps);
    let span = (set - rise) as f64;
    let mut data = Vec::with_capacity(n_samples * timesteps);
    for _ in 0..n_samples {
        let peak: f64 = rng.gen_range(0.5..=1.0);
        let cloudiness: f64 = rng.gen_range(0.0..0.3);
        for t in 0..timesteps {
            if t < rise || t >= set {
                data.push(0.0);
                continue;
            }
            let x = (t - rise) as f64 + 0.5;
            let shape = (std::f64::consts::PI * x / span).sin();
            let cloud = 1.0 - cloudiness * rng.gen::<f64>();
            data.push((peak * shape * cloud).clamp(0.0, 1.0));
        }
    }
    ScenarioBatch::new(1, timesteps, data, Provenance::Synthetic)
}

/// Wind behaviour presets for the mean-reverting profile generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindRegime {
    /// Low, steady output around 0.2.
    Calm,
    /// Mid-level output around 0.5 without ramps.
    Moderate,
    /// High, volatile output around 0.6 with ramp events.
    Gusty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindParams {
    pub level: f64,
    /// Mean-reversion rate per step.
    pub reversion: f64,
    pub volatility: f64,
    pub ramp_prob: f64,
    pub ramp_size: f64,
}

impl WindRegime {
    pub fn params(self) -> WindParams {
        match self {
            WindRegime::Calm => WindParams {
                level: 0.2,
                reversion: 0.3,
                volatility: 0.02,
                ramp_prob: 0.0,
                ramp_size: 0.0,
            },
            WindRegime::Moderate => WindParams {
                level: 0.5,
                reversion: 0.3,
                volatility: 0.08,
                ramp_prob: 0.0,
                ramp_size: 0.0,
            },
            WindRegime::Gusty => WindParams {
                level: 0.6,
                reversion: 0.3,
                volatility: 0.07,
                ramp_prob: 0.1,
                ramp_size: 0.2,
            },
        }
    }
}

impl From<WindRegime> for WindParams {
    fn from(r: WindRegime) -> Self {
        r.params()
    }
}

impl WindParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.level)
            && self.reversion > 0.0
            && self.reversion <= 1.0
            && self.volatility >= 0.0
            && self.volatility.is_finite()
            && (0.0..=1.0).contains(&self.ramp_prob)
            && self.ramp_size >= 0.0
            && self.ramp_size.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidData(format!(
                "invalid wind parameters {self:?}"
            )))
        }
    }
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    if a.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidData(
            "correlation matrix must be square".into(),
        ));
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            if (a[i][j] - a[j][i]).abs() > 1e-12 {
                return Err(Error::InvalidData(format!(
                    "matrix not symmetric at ({i}, {j})"
                )));
            }
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return Err(Error::InvalidData("matrix is not positive definite".into()));
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Mean-reverting profiles driven by correlated Gaussian innovations.
///
/// Per step and site: `x += reversion * (level - x) + volatility * e`, with
/// `e = L xi` for the Cholesky factor `L` of `target_corr`, plus occasional
/// ramps of `+-ramp_size`; the start is drawn from the stationary law of the
/// same process. Values are clipped to `[0, 1]`.
pub fn synth_correlated_wind<R: Rng + ?Sized>(
    n_samples: usize,
    timesteps: usize,
    target_corr: &[Vec<f64>],
    regime: impl Into<WindParams>,
    rng: &mut R,
) -> Result<ScenarioBatch> {
    check_timesteps(timesteps)?;
    let p: WindParams = regime.into();
    p.validate()?;
    let n_sites = target_corr.len();
    if n_sites == 0 {
        return Err(Error::InvalidData("need at least one site".into()));
    }
    for (i, row) in target_corr.iter().enumerate() {
        if row.len() != n_sites || (row[i] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidData(
                "correlation matrix must be square with unit diagonal".into(),
            ));
        }
    }
    let l = cholesky(target_corr)?;
    let stationary_sd = p.volatility / (1.0 - (1.0 - p.reversion).powi(2)).sqrt();

    let correlated = |rng: &mut R| -> Vec<f64> {
        let xi: Vec<f64> = (0..n_sites).map(|_| rng.sample(StandardNormal)).collect();
        l.iter()
            .map(|row| row.iter().zip(&xi).map(|(a, b)| a * b).sum())
            .collect()
    };

    let mut data = vec![0.0; n_samples * n_sites * timesteps];
    for i in 0..n_samples {
        let base = i * n_sites * timesteps;
        let mut x: Vec<f64> = correlated(rng)
            .into_iter()
            .map(|e| p.level + stationary_sd * e)
            .collect();
        for t in 0..timesteps {
            if t > 0 {
                let e = correlated(rng);
                for s in 0..n_sites {
                    x[s] += p.reversion * (p.level - x[s]) + p.volatility * e[s];
                }
                if p.ramp_prob > 0.0 && rng.gen::<f64>() < p.ramp_prob {
                    let dir = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    for v in x.iter_mut() {
                        *v += dir * p.ramp_size;
                    }
                }
            }
            for s in 0..n_sites {
                data[base + s * timesteps + t] = x[s].clamp(0.0, 1.0);
            }
        }
    }
    ScenarioBatch::new(n_sites, timesteps, data, Provenance::Synthetic)
}

/// Single-site wind profiles in the given regime.
pub fn synth_wind<R: Rng + ?Sized>(
    n_samples: usize,
    timesteps: usize,
    rng: &mut R,
    regime: WindRegime,
) -> Result<ScenarioBatch> {
    synth_correlated_wind(n_samples, timesteps, &[vec![1.0]], regime, rng)
}

/// Multi-site moderate-regime wind with cross-site correlation `target_corr`.
pub fn synth_spatiotemporal<R: Rng + ?Sized>(
    n_samples: usize,
    n_sites: usize,
    timesteps: usize,
    target_corr: &[Vec<f64>],
    rng: &mut R,
) -> Result<ScenarioBatch> {
    if target_corr.len() != n_sites {
        return Err(Error::mismatch(
            "correlation matrix size",
            n_sites,
            target_corr.len(),
        ));
    }
    synth_correlated_wind(n_samples, timesteps, target_corr, WindRegime::Moderate, rng)
}

/// Known mode of a synthetic sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Wind,
    Solar,
    Calm,
    Gusty,
    Group1,
    Group2,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Wind => "wind",
            Mode::Solar => "solar",
            Mode::Calm => "calm",
            Mode::Gusty => "gusty",
            Mode::Group1 => "group1",
            Mode::Group2 => "group2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "wind" => Mode::Wind,
            "solar" => Mode::Solar,
            "calm" => Mode::Calm,
            "gusty" => Mode::Gusty,
            "group1" => Mode::Group1,
            "group2" => Mode::Group2,
            _ => return None,
        })
    }
}

/// A synthetic dataset with its ground-truth mode per sample.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub batch: ScenarioBatch,
    pub labels: Vec<Mode>,
}

impl LabeledBatch {
    /// Concatenate two labeled sets and shuffle samples jointly.
    pub fn shuffled_union<R: Rng + ?Sized>(
        a: LabeledBatch,
        b: LabeledBatch,
        rng: &mut R,
    ) -> Result<Self> {
        let all = a.batch.concat(&b.batch)?;
        let mut labels = a.labels;
        labels.extend(b.labels);
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.shuffle(rng);
        Ok(Self {
            batch: all.select(&order),
            labels: order.iter().map(|&i| labels[i]).collect(),
        })
    }

    /// Samples carrying `mode`.
    pub fn of_mode(&self, mode: Mode) -> ScenarioBatch {
        let idx: Vec<usize> = (0..self.labels.len())
            .filter(|&i| self.labels[i] == mode)
            .collect();
        self.batch.select(&idx)
    }
}

/// Half gusty wind, half solar, shuffled. Odd counts give the extra sample to wind.
pub fn synth_mixed_wind_solar<R: Rng + ?Sized>(
    n_samples: usize,
    timesteps: usize,
    rng: &mut R,
) -> Result<LabeledBatch> {
    let n_solar = n_samples / 2;
    let n_wind = n_samples - n_solar;
    let wind = synth_wind(n_wind, timesteps, rng, WindRegime::Gusty)?;
    let solar = synth_solar(n_solar, timesteps, rng)?;
    LabeledBatch::shuffled_union(
        LabeledBatch {
            batch: wind,
            labels: vec![Mode::Wind; n_wind],
        },
        LabeledBatch {
            batch: solar,
            labels: vec![Mode::Solar; n_solar],
        },
        rng,
    )
}

/// Half calm, half gusty single-site wind, shuffled.
pub fn synth_two_regime_wind<R: Rng + ?Sized>(
    n_samples: usize,
    timesteps: usize,
    rng: &mut R,
) -> Result<LabeledBatch> {
    let n_gusty = n_samples / 2;
    let n_calm = n_samples - n_gusty;
    let calm = synth_wind(n_calm, timesteps, rng, WindRegime::Calm)?;
    let gusty = synth_wind(n_gusty, timesteps, rng, WindRegime::Gusty)?;
    LabeledBatch::shuffled_union(
        LabeledBatch {
            batch: calm,
            labels: vec![Mode::Calm; n_calm],
        },
        LabeledBatch {
            batch: gusty,
            labels: vec![Mode::Gusty; n_gusty],
        },
        rng,
    )
}

/// Equicorrelated matrix with off-diagonal `rho`.
pub fn equicorrelation(n: usize, rho: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { rho }).collect())
        .collect()
}

/// Block-pair correlation: sites `{0,1}` and `{2,3}`... correlated at
/// `within`, everything else at `across`.
pub fn paired_correlation(n: usize, within: f64, across: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        1.0
                    } else if i / 2 == j / 2 {
                        within
                    } else {
                        across
                    }
                })
                .collect()
        })
        .collect()
}

/// Sites split into two halves: `within` inside each half, `across` between them.
pub fn split_correlation(n: usize, within: f64, across: f64) -> Vec<Vec<f64>> {
    let first = n - n / 2;
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        1.0
                    } else if (i < first) == (j < first) {
                        within
                    } else {
                        across
                    }
                })
                .collect()
        })
        .collect()
}

/// Dynamics of the second group in [`synth_contrasting_site_groups`].
pub const SEESAW_WIND: WindParams = WindParams {
    level: 0.5,
    reversion: 0.3,
    volatility: 0.12,
    ramp_prob: 0.0,
    ramp_size: 0.0,
};

/// Group 1: calm wind moving together at every site (rho 0.9).
/// Group 2: livelier wind where the two halves of the sites move against each
/// other (rho 0.9 within a half, -0.8 across).
pub fn synth_contrasting_site_groups<R: Rng + ?Sized>(
    n_samples: usize,
    n_sites: usize,
    timesteps: usize,
    rng: &mut R,
) -> Result<LabeledBatch> {
    if n_sites < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 sites, got {n_sites}"
        )));
    }
    synth_two_group_spatiotemporal(
        n_samples,
        timesteps,
        (&equicorrelation(n_sites, 0.9), WindRegime::Calm.params()),
        (&split_correlation(n_sites, 0.9, -0.8), SEESAW_WIND),
        rng,
    )
}

/// Two groups of spatiotemporal wind with distinct correlation structure and
/// dynamics, shuffled together.
pub fn synth_two_group_spatiotemporal<R: Rng + ?Sized>(
    n_samples: usize,
    timesteps: usize,
    group1: (&[Vec<f64>], WindParams),
    group2: (&[Vec<f64>], WindParams),
    rng: &mut R,
) -> Result<LabeledBatch> {
    let n2 = n_samples / 2;
    let n1 = n_samples - n2;
    let a = synth_correlated_wind(n1, timesteps, group1.0, group1.1, rng)?;
    let b = synth_correlated_wind(n2, timesteps, group2.0, group2.1, rng)?;
    LabeledBatch::shuffled_union(
        LabeledBatch {
            batch: a,
            labels: vec![Mode::Group1; n1],
        },
        LabeledBatch {
            batch: b,
            labels: vec![Mode::Group2; n2],
        },
        rng,
    )
}

/// Format with 9 significant digits in plain decimal notation.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (8 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

/// One generator's (or the data's) scenarios, as read back from a scenario CSV.
#[derive(Debug, Clone)]
pub struct ScenarioGroup {
    pub generator: String,
    pub batch: ScenarioBatch,
}

/// Write scenarios as `generator,scenario,site,t0..t{T-1}`, one row per
/// `(scenario, site)`. With `capacities`, values are denormalized to MW.
pub fn write_scenario_csv(
    path: &Path,
    groups: &[(String, &ScenarioBatch)],
    capacities: Option<&[f64]>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::InvalidData(e.to_string()))?;
    let t = groups.first().map_or(0, |g| g.1.timesteps());
    let mut header = vec!["generator".to_string(), "scenario".into(), "site".into()];
    header.extend((0..t).map(|k| format!("t{k}")));
    w.write_record(&header)
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    for (name, batch) in groups {
        if batch.timesteps() != t {
            return Err(Error::mismatch("scenario timesteps", t, batch.timesteps()));
        }
        if let Some(c) = capacities {
            if c.len() != batch.n_sites() {
                return Err(Error::mismatch("capacities", batch.n_sites(), c.len()));
            }
        }
        for i in 0..batch.len() {
            for s in 0..batch.n_sites() {
                let scale = capacities.map_or(1.0, |c| c[s]);
                let mut rec = vec![name.clone(), i.to_string(), s.to_string()];
                rec.extend(batch.site(i, s).iter().map(|v| format_sig9(v * scale)));
                w.write_record(&rec)
                    .map_err(|e| Error::InvalidData(e.to_string()))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a normalized scenario CSV back, grouped by the `generator` column in
/// order of first appearance.
pub fn read_scenario_csv(path: &Path) -> Result<Vec<ScenarioGroup>> {
    let err = |row: usize, message: String| Error::Csv {
        path: PathBuf::from(path),
        row,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.len() < 4
        || &headers[0] != "generator"
        || &headers[1] != "scenario"
        || &headers[2] != "site"
    {
        return Err(err(
            1,
            "expected header `generator,scenario,site,t0,...`".into(),
        ));
    }
    let t = headers.len() - 3;
    // generator -> scenario -> site -> values
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, BTreeMap<usize, BTreeMap<usize, Vec<f64>>>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| err(row, e.to_string()))?;
        let gen = rec[0].to_string();
        let scen: usize = rec[1]
            .parse()
            .map_err(|_| err(row, "bad scenario index".into()))?;
        let site: usize = rec[2]
            .parse()
            .map_err(|_| err(row, "bad site index".into()))?;
        let vals = rec
            .iter()
            .skip(3)
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| err(row, "bad value".into()))?;
        if vals.len() != t {
            return Err(err(
                row,
                format!("expected {t} values, found {}", vals.len()),
            ));
        }
        if !groups.contains_key(&gen) {
            order.push(gen.clone());
        }
        if groups
            .entry(gen)
            .or_default()
            .entry(scen)
            .or_default()
            .insert(site, vals)
            .is_some()
        {
            return Err(err(row, format!("duplicate scenario {scen} site {site}")));
        }
    }
    order
        .into_iter()
        .map(|name| {
            let scens = &groups[&name];
            let n_sites = scens.values().next().map_or(0, BTreeMap::len);
            let mut data = Vec::new();
            for (k, sites) in scens {
                if sites.len() != n_sites || sites.keys().enumerate().any(|(a, &b)| a != b) {
                    return Err(Error::InvalidData(format!(
                        "{}: generator {name} scenario {k} has an inconsistent site set",
                        path.display()
                    )));
                }
                for v in sites.values() {
                    data.extend_from_slice(v);
                }
            }
            let prov = name
                .parse()
                .map(Provenance::Generated)
                .unwrap_or(Provenance::Historical);
            Ok(ScenarioGroup {
                batch: ScenarioBatch::new(n_sites, t, data, prov)?,
                generator: name,
            })
        })
        .collect()
}

/// Write `sample,label` rows.
pub fn write_labels(path: &Path, labels: &[Mode]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::InvalidData(e.to_string()))?;
    w.write_record(["sample", "label"])
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    for (i, m) in labels.iter().enumerate() {
        w.write_record([i.to_string(), m.as_str().to_string()])
            .map_err(|e| Error::InvalidData(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<Mode>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::InvalidData(e.to_string()))?;
        let mode = rec.get(1).and_then(Mode::parse).ok_or_else(|| Error::Csv {
            path: PathBuf::from(path),
            row: i + 2,
            message: "unknown label".into(),
        })?;
        out.push(mode);
    }
    Ok(out)
}
