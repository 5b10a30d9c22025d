//! Survival datasets: ingestion, splitting, time grids and a synthetic generator.
//!
//! A [`SurvivalDataset`] holds `(features, observed_time, event)` triples. Feature
//! columns may be standardized at ingestion; the statistics travel with the
//! dataset so calibration and test files can be loaded with the training
//! statistics instead of their own.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: feature vector, observed time and event indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub features: Vec<f64>,
    pub observed_time: f64,
    /// `true` when the death was observed, `false` when censored.
    pub event: bool,
}

impl Subject {
    pub fn new(features: Vec<f64>, observed_time: f64, event: bool) -> Self {
        Self {
            features,
            observed_time,
            event,
        }
    }
}

/// Per-feature `(mean, scale)` pairs. A feature is mapped to `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    /// Column means and sample standard deviations (n - 1 denominator).
    /// Constant columns, and every column when there is a single row, get scale 1.
    pub fn fit(rows: &[Vec<f64>], dim: usize) -> Self {
        let n = rows.len();
        let mut means = vec![0.0; dim];
        let mut scales = vec![1.0; dim];
        if n == 0 {
            return Self { means, scales };
        }
        for (k, mean) in means.iter_mut().enumerate() {
            *mean = rows.iter().map(|r| r[k]).sum::<f64>() / n as f64;
        }
        if n > 1 {
            for (k, scale) in scales.iter_mut().enumerate() {
                let ss: f64 = rows.iter().map(|r| (r[k] - means[k]).powi(2)).sum();
                let sd = (ss / (n - 1) as f64).sqrt();
                let constant = rows.iter().all(|r| r[k] == rows[0][k]);
                *scale = if constant || sd == 0.0 { 1.0 } else { sd };
            }
        }
        Self { means, scales }
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.means).zip(&self.scales) {
            *v = (*v - m) / s;
        }
    }
}

/// An ordered collection of subjects sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    subjects: Vec<Subject>,
    feature_dim: usize,
    #[serde(default)]
    feature_names: Option<Vec<String>>,
    #[serde(default)]
    standardization: Option<Standardization>,
}

impl SurvivalDataset {
    /// Builds a dataset, checking dimensions, times and finiteness.
    pub fn new(subjects: Vec<Subject>, feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be positive".into()));
        }
        for (i, s) in subjects.iter().enumerate() {
            if s.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    actual: s.features.len(),
                });
            }
            if !(s.observed_time >= 0.0) || !s.observed_time.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "subject {i}: observed time {} must be finite and nonnegative",
                    s.observed_time
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "subject {i}: non-finite feature"
                )));
            }
        }
        Ok(Self {
            subjects,
            feature_dim,
            feature_names: None,
            standardization: None,
        })
    }

    /// Convenience constructor from parallel slices.
    pub fn from_parts(features: Vec<Vec<f64>>, times: &[f64], events: &[bool]) -> Result<Self> {
        if features.len() != times.len() || times.len() != events.len() {
            return Err(Error::InvalidArgument(
                "features, times and events must have equal length".into(),
            ));
        }
        let dim = features.first().map(|f| f.len()).unwrap_or(1);
        let subjects = features
            .into_iter()
            .zip(times)
            .zip(events)
            .map(|((f, &t), &e)| Subject::new(f, t, e))
            .collect();
        Self::new(subjects, dim)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: names.len(),
            });
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn get(&self, i: usize) -> &Subject {
        &self.subjects[i]
    }

    pub fn times(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.observed_time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.subjects.iter().map(|s| s.event).collect()
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.subjects.iter().map(|s| s.features.as_slice()).collect()
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.subjects.iter().filter(|s| !s.event).count() as f64 / self.len() as f64
    }

    /// A new dataset with the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            feature_dim: self.feature_dim,
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Standardizes features with statistics fitted on this dataset.
    pub fn standardize(mut self) -> Self {
        let rows: Vec<Vec<f64>> = self.subjects.iter().map(|s| s.features.clone()).collect();
        let stats = Standardization::fit(&rows, self.feature_dim);
        for s in &mut self.subjects {
            stats.apply(&mut s.features);
        }
        self.standardization = Some(stats);
        self
    }

    /// Standardizes features with externally supplied statistics.
    pub fn standardize_with(mut self, stats: &Standardization) -> Result<Self> {
        if stats.means.len() != self.feature_dim || stats.scales.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: stats.means.len(),
            });
        }
        for s in &mut self.subjects {
            stats.apply(&mut s.features);
        }
        self.standardization = Some(stats.clone());
        Ok(self)
    }

    pub(crate) fn subjects_mut(&mut self) -> &mut [Subject] {
        &mut self.subjects
    }
}

/// How feature columns are standardized during ingestion.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Standardize {
    #[default]
    None,
    /// Fit statistics on the file being loaded.
    Fit,
    /// Reuse statistics fitted elsewhere, typically on training data.
    Apply(Standardization),
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub time_col: String,
    pub event_col: String,
    /// Feature columns; `None` selects every column other than time and event.
    pub features: Option<Vec<String>>,
    pub standardize: Standardize,
}

impl CsvSchema {
    pub fn new(time_col: impl Into<String>, event_col: impl Into<String>) -> Self {
        Self {
            time_col: time_col.into(),
            event_col: event_col.into(),
            features: None,
            standardize: Standardize::None,
        }
    }

    pub fn with_features(mut self, features: Vec<String>) -> Self {
        self.features = Some(features);
        self
    }

    pub fn with_standardize(mut self, standardize: Standardize) -> Self {
        self.standardize = standardize;
        self
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::UnparseableCell {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        })
}

/// Loads a headered, comma-separated file. Rows are numbered from 1 (first
/// data row) in error messages. Time and event columns are never standardized.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SurvivalDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let position = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let time_idx = position(&schema.time_col)?;
    let event_idx = position(&schema.event_col)?;
    let feature_names: Vec<String> = match &schema.features {
        Some(f) => f.clone(),
        None => header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != time_idx && *i != event_idx)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    if feature_names.is_empty() {
        return Err(Error::InvalidArgument("schema selects no feature columns".into()));
    }
    let feature_idx = feature_names
        .iter()
        .map(|n| position(n))
        .collect::<Result<Vec<_>>>()?;

    let mut subjects = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = r + 1;
        let cell = |idx: usize| record.get(idx).unwrap_or("");
        let time = parse_cell(cell(time_idx), row, &schema.time_col)?;
        if time < 0.0 {
            return Err(Error::NegativeTime {
                row,
                column: schema.time_col.clone(),
                value: time,
            });
        }
        let event = parse_cell(cell(event_idx), row, &schema.event_col)?;
        let event = if event == 1.0 {
            true
        } else if event == 0.0 {
            false
        } else {
            return Err(Error::InvalidEvent {
                row,
                column: schema.event_col.clone(),
                value: event,
            });
        };
        let features = feature_idx
            .iter()
            .zip(&feature_names)
            .map(|(&idx, name)| parse_cell(cell(idx), row, name))
            .collect::<Result<Vec<_>>>()?;
        subjects.push(Subject::new(features, time, event));
    }
    let dataset =
        SurvivalDataset::new(subjects, feature_names.len())?.with_feature_names(feature_names)?;
    match &schema.standardize {
        Standardize::None => Ok(dataset),
        Standardize::Fit => Ok(dataset.standardize()),
        Standardize::Apply(stats) => dataset.standardize_with(stats),
    }
}

/// Writes a dataset in the ingestion format: feature columns, then `time`, `event`.
pub fn write_csv(dataset: &SurvivalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    let names: Vec<String> = match dataset.feature_names() {
        Some(n) => n.to_vec(),
        None => (1..=dataset.feature_dim()).map(|k| format!("x{k}")).collect(),
    };
    let mut header = names.clone();
    header.push("time".into());
    header.push("event".into());
    writer.write_record(&header).map_err(csv_err)?;
    for s in dataset.subjects() {
        let mut row: Vec<String> = s.features.iter().map(|v| format!("{v}")).collect();
        row.push(format!("{}", s.observed_time));
        row.push(if s.event { "1".into() } else { "0".into() });
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Randomly partitions a dataset. Part `k` receives `round(f_k * n)` subjects
/// (the last part takes the remainder), drawn from one seeded permutation.
pub fn split(dataset: &SurvivalDataset, fractions: &[f64], seed: u64) -> Result<Vec<SurvivalDataset>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::InvalidArgument("fractions must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "fractions sum to {total}, expected 1"
        )));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(fractions.len());
    let mut start = 0;
    for (k, &f) in fractions.iter().enumerate() {
        let end = if k + 1 == fractions.len() {
            n
        } else {
            (start + (f * n as f64).round() as usize).min(n)
        };
        parts.push(dataset.subset(&order[start..end]));
        start = end;
    }
    Ok(parts)
}

/// Strictly increasing time points on which hazards and curves are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    quantized: bool,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>, quantized: bool) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidArgument("empty time grid".into()));
        }
        if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidArgument("grid times must be finite and nonnegative".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("grid times must be strictly increasing".into()));
        }
        Ok(Self { times, quantized })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn quantized(&self) -> bool {
        self.quantized
    }

    pub fn first(&self) -> f64 {
        self.times[0]
    }

    pub fn last(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Index of a time that lies exactly on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times
            .binary_search_by(|g| g.partial_cmp(&t).expect("grid times are finite"))
            .ok()
    }

    /// Nearest grid point, ties going to the lower point.
    pub fn snap(&self, t: f64) -> f64 {
        let upper = self.times.partition_point(|&g| g < t);
        if upper == 0 {
            return self.times[0];
        }
        if upper == self.times.len() {
            return self.last();
        }
        let (lo, hi) = (self.times[upper - 1], self.times[upper]);
        if t - lo <= hi - t {
            lo
        } else {
            hi
        }
    }

    /// Number of grid points strictly below `t`.
    pub fn count_below(&self, t: f64) -> usize {
        self.times.partition_point(|&g| g < t)
    }
}

/// Sorted unique observed times, or `m` evenly spaced points spanning them.
pub fn build_time_grid(dataset: &SurvivalDataset, m: Option<usize>) -> Result<TimeGrid> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut times = dataset.times();
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    match m {
        None => {
            times.dedup();
            TimeGrid::new(times, false)
        }
        Some(m) => {
            let (lo, hi) = (times[0], times[times.len() - 1]);
            if m == 0 || (m == 1 && lo != hi) {
                return Err(Error::InvalidArgument(format!(
                    "cannot span [{lo}, {hi}] with {m} grid points"
                )));
            }
            if lo == hi {
                return TimeGrid::new(vec![lo], true);
            }
            let step = (hi - lo) / (m - 1) as f64;
            let mut grid: Vec<f64> = (0..m).map(|k| lo + step * k as f64).collect();
            grid[m - 1] = hi;
            TimeGrid::new(grid, true)
        }
    }
}

/// Replaces each observed time by its nearest grid point (ties downward).
pub fn snap_to_grid(dataset: &SurvivalDataset, grid: &TimeGrid) -> Result<SurvivalDataset> {
    let mut out = dataset.clone();
    for s in out.subjects_mut() {
        if s.observed_time < grid.first() || s.observed_time > grid.last() {
            return Err(Error::InvalidArgument(format!(
                "observed time {} outside grid range [{}, {}]",
                s.observed_time,
                grid.first(),
                grid.last()
            )));
        }
        s.observed_time = grid.snap(s.observed_time);
    }
    Ok(out)
}

/// Generator of survival times given features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HazardModel {
    /// `X ~ N(0, I)`, `T | X ~ Exponential(rate = exp(beta . x))`.
    Exponential { beta: Vec<f64> },
    /// Two equiprobable Gaussian clusters centered at `±separation/2` along the
    /// first axis; the cluster fixes the Weibull scale of `T`.
    TwoCluster {
        separation: f64,
        shape: f64,
        scales: [f64; 2],
    },
}

impl HazardModel {
    fn validate(&self, d: usize) -> Result<()> {
        match self {
            HazardModel::Exponential { beta } => {
                if beta.len() > d {
                    return Err(Error::InvalidArgument(format!(
                        "beta has {} entries for {d} features",
                        beta.len()
                    )));
                }
            }
            HazardModel::TwoCluster {
                separation,
                shape,
                scales,
            } => {
                if !(*shape > 0.0) || scales.iter().any(|s| !(*s > 0.0)) || !separation.is_finite() {
                    return Err(Error::InvalidArgument("invalid two-cluster parameters".into()));
                }
            }
        }
        Ok(())
    }
}

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub hazard_model: HazardModel,
    /// Target fraction of censored subjects, in `[0, 1)`.
    pub censoring_rate_target: f64,
    pub seed: u64,
}

/// Analytic conditional survival function of a synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub hazard_model: HazardModel,
    /// Rate of the exponential censoring distribution; `None` means no censoring.
    pub censoring_rate: Option<f64>,
}

impl GroundTruth {
    /// `S(t | x) = P(T > t | X = x)`.
    pub fn survival(&self, x: &[f64], t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match &self.hazard_model {
            HazardModel::Exponential { beta } => {
                let eta: f64 = beta.iter().zip(x).map(|(b, v)| b * v).sum();
                (-eta.exp() * t).exp()
            }
            HazardModel::TwoCluster {
                separation,
                shape,
                scales,
            } => {
                let p1 = 1.0 / (1.0 + (-separation * x[0]).exp());
                let s = |scale: f64| (-(t / scale).powf(*shape)).exp();
                (1.0 - p1) * s(scales[0]) + p1 * s(scales[1])
            }
        }
    }

    /// Cluster a feature vector most likely came from (two-cluster model only).
    pub fn cluster_of(&self, x: &[f64]) -> Option<usize> {
        match &self.hazard_model {
            HazardModel::TwoCluster { .. } => Some(usize::from(x[0] > 0.0)),
            _ => None,
        }
    }
}

const TUNING_STEPS: usize = 100;
const TUNING_TOLERANCE: f64 = 0.05;

/// Samples a dataset following the usual censoring mechanism: features, then
/// survival time, then an exponential censoring time whose rate is bisected
/// until the realized censored fraction is close to the target.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(SurvivalDataset, GroundTruth)> {
    if spec.n == 0 || spec.d == 0 {
        return Err(Error::InvalidArgument("n and d must be positive".into()));
    }
    if !(0.0..1.0).contains(&spec.censoring_rate_target) {
        return Err(Error::InvalidArgument(format!(
            "censoring target {} outside [0, 1)",
            spec.censoring_rate_target
        )));
    }
    spec.hazard_model.validate(spec.d)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut features = Vec::with_capacity(spec.n);
    let mut death_times = Vec::with_capacity(spec.n);
    let mut unit_censor = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mut x: Vec<f64> = (0..spec.d).map(|_| rng.sample(StandardNormal)).collect();
        let e: f64 = rng.sample(Exp1);
        let t = match &spec.hazard_model {
            HazardModel::Exponential { beta } => {
                let eta: f64 = beta.iter().zip(&x).map(|(b, v)| b * v).sum();
                e / eta.exp()
            }
            HazardModel::TwoCluster {
                separation,
                shape,
                scales,
            } => {
                let cluster = usize::from(rng.random_bool(0.5));
                x[0] += if cluster == 1 { separation / 2.0 } else { -separation / 2.0 };
                scales[cluster] * e.powf(1.0 / shape)
            }
        };
        features.push(x);
        death_times.push(t);
        unit_censor.push(rng.sample::<f64, _>(Exp1));
    }

    let censored_at = |rate: f64| -> f64 {
        death_times
            .iter()
            .zip(&unit_censor)
            .filter(|(t, e)| rate * **t > **e)
            .count() as f64
            / spec.n as f64
    };

    let censoring_rate = if spec.censoring_rate_target == 0.0 {
        None
    } else {
        let target = spec.censoring_rate_target;
        let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for _ in 0..TUNING_STEPS {
            let mid = 0.5 * (lo + hi);
            let realized = censored_at(mid.exp());
            let gap = (realized - target).abs();
            if gap < best.0 {
                best = (gap, mid.exp(), realized);
            }
            if gap < 0.5 / spec.n as f64 {
                break;
            }
            if realized < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if best.0 > TUNING_TOLERANCE {
            return Err(Error::CensoringTuning {
                target,
                realized: best.2,
                steps: TUNING_STEPS,
            });
        }
        Some(best.1)
    };

    let subjects = features
        .into_iter()
        .zip(death_times.iter().zip(&unit_censor))
        .map(|(x, (&t, &e))| {
            let c = censoring_rate.map_or(f64::INFINITY, |r| e / r);
            Subject::new(x, t.min(c), t <= c)
        })
        .collect();
    let names = (1..=spec.d).map(|k| format!("x{k}")).collect();
    let dataset = SurvivalDataset::new(subjects, spec.d)?.with_feature_names(names)?;
    Ok((
        dataset,
        GroundTruth {
            hazard_model: spec.hazard_model.clone(),
            censoring_rate,
        },
    ))
}
