//! Split conformal prediction sets for censored survival times, marginal and
//! kernel-weighted.
//!
//! A calibration score is the error of the estimated survival time against
//! the label, counting a censored label as an error only when the estimate
//! falls short of the censoring time. The radius is the `1 - alpha` quantile
//! of the scores with an extra score of `+inf` appended; the weighted version
//! gives calibration score `i` weight `K(X'_i, x0)` and the `+inf` score
//! weight `K(x, x0)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::estimator::SurvivalTimeEstimator;
use crate::kernel::{Kernel, KernelPoint};

/// Nonconformity of label `(y, event)` against the estimate `t_hat`.
pub fn nonconformity(y: f64, event: bool, t_hat: f64) -> Result<f64> {
    if t_hat.is_infinite() {
        return Err(Error::InfiniteEstimate);
    }
    if !(y >= 0.0) || !(t_hat >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "times must be nonnegative, got y = {y}, estimate = {t_hat}"
        )));
    }
    Ok(if event { (y - t_hat).abs() } else { (y - t_hat).max(0.0) })
}

/// Scores of a calibration set, with the features they were computed at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationScores {
    scores: Vec<f64>,
    features: Vec<Vec<f64>>,
    tie_seed: u64,
}

impl CalibrationScores {
    pub fn new(scores: Vec<f64>, features: Vec<Vec<f64>>) -> Result<Self> {
        if scores.len() != features.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                actual: features.len(),
            });
        }
        if let Some(s) = scores.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::InvalidArgument(format!("score {s} is not nonnegative")));
        }
        Ok(Self {
            scores,
            features,
            tie_seed: 0,
        })
    }

    /// Scores without features; usable for marginal quantiles only.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        let n = scores.len();
        Self::new(scores, vec![Vec::new(); n])
    }

    /// Seed of the random order among tied scores.
    pub fn with_tie_seed(mut self, seed: u64) -> Self {
        self.tie_seed = seed;
        self
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Indices in ascending score order, ties in seeded random order.
    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(self.tie_seed));
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        idx
    }

    /// Kernel weights `K(X'_i, x0)` of the calibration points.
    pub fn weights_at(&self, kernel: &Kernel, x0: &[f64]) -> Result<Vec<f64>> {
        let points: Vec<&[f64]> = self.features.iter().map(Vec::as_slice).collect();
        let reps = kernel.represent_all(&points)?;
        kernel.weights(x0, &reps)
    }
}

/// Scores the calibration set with `estimator`.
pub fn calibrate(estimator: &dyn SurvivalTimeEstimator, calib: &SurvivalDataset) -> Result<CalibrationScores> {
    if calib.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let estimates = estimator.estimate_all(&calib.features())?;
    scores_from_estimates(&estimates, calib)
}

/// Scores from precomputed estimates, one per calibration subject.
pub fn scores_from_estimates(estimates: &[f64], calib: &SurvivalDataset) -> Result<CalibrationScores> {
    if estimates.len() != calib.len() {
        return Err(Error::DimensionMismatch {
            expected: calib.len(),
            actual: estimates.len(),
        });
    }
    let scores = calib
        .subjects()
        .iter()
        .zip(estimates)
        .map(|(s, &t)| nonconformity(s.observed_time, s.event, t))
        .collect::<Result<Vec<_>>>()?;
    CalibrationScores::new(scores, calib.subjects().iter().map(|s| s.features.clone()).collect())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Order statistic of rank `ceil((1 - alpha)(n + 1))` among the scores and `+inf`.
pub fn marginal_quantile(scores: &CalibrationScores, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let n = scores.len();
    let rank = ((1.0 - alpha) * (n as f64 + 1.0)).ceil() as usize;
    if rank > n {
        return Ok(f64::INFINITY);
    }
    let order = scores.order();
    Ok(scores.scores[order[rank.max(1) - 1]])
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Weighted score distribution for one center `x0`: answers quantile queries
/// for any `x` given `K(x, x0)`.
#[derive(Debug, Clone)]
pub struct LocalQuantiler {
    sorted_scores: Vec<f64>,
    sorted_weights: Vec<f64>,
    /// Compensated prefix sums of the sorted weights.
    cumulative: Vec<f64>,
    total: Neumaier,
}

impl LocalQuantiler {
    /// `weights[i]` is the weight of `scores[i]`.
    pub fn new(scores: &CalibrationScores, weights: &[f64]) -> Result<Self> {
        if weights.len() != scores.len() {
            return Err(Error::DimensionMismatch {
                expected: scores.len(),
                actual: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || w.is_infinite()) {
            return Err(Error::InvalidArgument(format!("weight {w} is not finite and nonnegative")));
        }
        let order = scores.order();
        let mut total = Neumaier::default();
        let mut cumulative = Vec::with_capacity(order.len());
        for &i in &order {
            total.add(weights[i]);
            cumulative.push(total.value());
        }
        Ok(Self {
            sorted_scores: order.iter().map(|&i| scores.scores[i]).collect(),
            sorted_weights: order.iter().map(|&i| weights[i]).collect(),
            cumulative,
            total,
        })
    }

    fn grand_total(&self, weight_inf: f64) -> f64 {
        let mut t = self.total;
        t.add(weight_inf);
        t.value()
    }

    /// Radius at level `1 - alpha` when the appended `+inf` score has weight
    /// `weight_inf`. All-zero weights give `+inf`.
    pub fn quantile(&self, weight_inf: f64, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        let total = self.grand_total(weight_inf);
        if !(total > 0.0) {
            log::debug!("all conformal weights are zero; radius is infinite");
            return Ok(f64::INFINITY);
        }
        let threshold = (1.0 - alpha) * total;
        Ok(self
            .cumulative
            .iter()
            .position(|&c| c >= threshold)
            .map_or(f64::INFINITY, |j| self.sorted_scores[j]))
    }

    /// Normalized probabilities of the sorted scores followed by `+inf`.
    pub fn probabilities(&self, weight_inf: f64) -> Vec<f64> {
        let total = self.grand_total(weight_inf);
        self.sorted_weights
            .iter()
            .chain(std::iter::once(&weight_inf))
            .map(|w| w / total)
            .collect()
    }

    pub fn sorted_scores(&self) -> &[f64] {
        &self.sorted_scores
    }
}

/// Weighted quantile with explicit weights for the scores and for `+inf`.
pub fn weighted_quantile(scores: &CalibrationScores, weights: &[f64], weight_inf: f64, alpha: f64) -> Result<f64> {
    LocalQuantiler::new(scores, weights)?.quantile(weight_inf, alpha)
}

/// Radius of the prediction set at `x` localized around `x0`.
pub fn local_quantile(scores: &CalibrationScores, kernel: &Kernel, x: &[f64], x0: &[f64], alpha: f64) -> Result<f64> {
    let weights = scores.weights_at(kernel, x0)?;
    let weight_inf = kernel.evaluate(x, x0)?;
    weighted_quantile(scores, &weights, weight_inf, alpha)
}

/// Quantilers for several centers sharing one kernel representation of the
/// calibration points.
pub fn local_quantilers(scores: &CalibrationScores, kernel: &Kernel, centers: &[&[f64]]) -> Result<Vec<LocalQuantiler>> {
    let points: Vec<&[f64]> = scores.features.iter().map(Vec::as_slice).collect();
    let reps: Vec<KernelPoint> = kernel.represent_all(&points)?;
    let center_reps = kernel.represent_all(centers)?;
    center_reps
        .iter()
        .map(|c| {
            let w = reps.iter().map(|p| kernel.between(p, c)).collect::<Result<Vec<_>>>()?;
            LocalQuantiler::new(scores, &w)
        })
        .collect()
}

/// Observed-label interval `[max(T - q, 0), T + q]` and censored-label
/// interval `[0, T + q]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionSet {
    pub center: f64,
    pub radius: f64,
    pub observed: (f64, f64),
    pub censored: (f64, f64),
}

impl PredictionSet {
    pub fn new(center: f64, radius: f64) -> Result<Self> {
        if !(center >= 0.0) || center.is_infinite() {
            return Err(Error::InvalidArgument(format!("center {center} must be finite and nonnegative")));
        }
        if !(radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("radius {radius} must be nonnegative")));
        }
        let hi = center + radius;
        Ok(Self {
            center,
            radius,
            observed: ((center - radius).max(0.0), hi),
            censored: (0.0, hi),
        })
    }

    pub fn contains(&self, y: f64, event: bool) -> bool {
        let (lo, hi) = if event { self.observed } else { self.censored };
        lo <= y && y <= hi
    }

    pub fn record(&self, alpha: f64) -> IntervalRecord {
        IntervalRecord {
            center: Extended(self.center),
            radius: Extended(self.radius),
            observed: [Extended(self.observed.0), Extended(self.observed.1)],
            censored: [Extended(0.0), Extended(self.censored.1)],
            alpha,
        }
    }
}

pub fn prediction_set(center: f64, radius: f64) -> Result<PredictionSet> {
    PredictionSet::new(center, radius)
}

/// A real that serializes `+inf` as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Extended(pub f64);

impl Serialize for Extended {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else if self.0.is_nan() {
            s.serialize_str("nan")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Extended {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Extended(v)),
            Raw::Text(t) => t
                .parse::<f64>()
                .map(Extended)
                .map_err(|_| serde::de::Error::custom(format!("invalid number `{t}`"))),
        }
    }
}

impl std::fmt::Display for Extended {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_infinite() && self.0 > 0.0 {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// One interval query as written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub center: Extended,
    pub radius: Extended,
    pub observed: [Extended; 2],
    pub censored: [Extended; 2],
    pub alpha: f64,
}
