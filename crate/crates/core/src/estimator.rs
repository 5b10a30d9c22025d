//! Kaplan-Meier, Beran's conditional Kaplan-Meier, the discrete kernel hazard
//! and survival-time summaries of survival curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_time_grid, snap_to_grid, SurvivalDataset, TimeGrid};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelPoint};

/// Denominator guard of the conditional estimator.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Right-continuous step function with `S(t) = 1` before the first time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
}

impl SurvivalCurve {
    pub fn new(times: Vec<f64>, survival: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != survival.len() {
            return Err(Error::InvalidArgument(format!(
                "curve needs equal nonempty times and values, got {} and {}",
                times.len(),
                survival.len()
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("curve times must be strictly increasing".into()));
        }
        if survival.iter().any(|s| !(0.0..=1.0).contains(s)) || survival.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("curve values must be non-increasing in [0, 1]".into()));
        }
        Ok(Self { times, survival })
    }

    /// Survival probability at `t` by right-continuous step lookup.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&g| g <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    /// Half the sum of the first time the curve is at most 1/2 and the
    /// supremum of times where it is at least 1/2; `+inf` if the curve stays
    /// above 1/2.
    pub fn median(&self) -> f64 {
        let Some(first_le) = self.survival.iter().position(|&s| s <= 0.5) else {
            return f64::INFINITY;
        };
        let sup_ge = match self.survival.iter().position(|&s| s < 0.5) {
            Some(k) => self.times[k],
            None => self.last_time(),
        };
        0.5 * (self.times[first_le] + sup_ge)
    }

    /// Exact integral of the curve over `[0, horizon]`.
    pub fn mean(&self, horizon: f64) -> Result<f64> {
        if horizon < self.last_time() {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} is below the last curve time {}",
                self.last_time()
            )));
        }
        let mut area = self.times[0];
        for k in 0..self.times.len() {
            let end = self.times.get(k + 1).copied().unwrap_or(horizon);
            area += self.survival[k] * (end - self.times[k]);
        }
        Ok(area)
    }

    pub fn last_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }
}

/// Product-limit estimate over the unique observed times.
pub fn kaplan_meier(dataset: &SurvivalDataset) -> Result<SurvivalCurve> {
    let grid = build_time_grid(dataset, None)?;
    let m = grid.len();
    let mut deaths = vec![0.0; m];
    let mut at_time = vec![0.0; m];
    for s in dataset.subjects() {
        let k = grid.index_of(s.observed_time).expect("grid built from these times");
        at_time[k] += 1.0;
        if s.event {
            deaths[k] += 1.0;
        }
    }
    let mut at_risk: f64 = at_time.iter().sum();
    let mut surv = 1.0;
    let mut values = Vec::with_capacity(m);
    for k in 0..m {
        surv *= 1.0 - deaths[k] / at_risk;
        values.push(surv);
        at_risk -= at_time[k];
    }
    SurvivalCurve::new(grid.times().to_vec(), values)
}

/// Beran's estimator fitted to a training set: kernel-weighted death and
/// at-risk counts on a time grid.
#[derive(Debug, Clone)]
pub struct FittedConditionalKM {
    train: SurvivalDataset,
    kernel: Kernel,
    grid: TimeGrid,
    epsilon: f64,
    points: Vec<KernelPoint>,
    grid_index: Vec<usize>,
}

impl FittedConditionalKM {
    /// Snaps the training times onto `grid` and caches the kernel
    /// representation of every training point.
    pub fn new(train: SurvivalDataset, kernel: Kernel, grid: TimeGrid) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(d) = kernel.input_dim() {
            if d != train.feature_dim() {
                return Err(Error::DimensionMismatch {
                    expected: train.feature_dim(),
                    actual: d,
                });
            }
        }
        let train = snap_to_grid(&train, &grid)?;
        let grid_index = train
            .subjects()
            .iter()
            .map(|s| grid.index_of(s.observed_time).expect("snapped"))
            .collect();
        let points = kernel.represent_all(&train.features())?;
        Ok(Self {
            train,
            kernel,
            grid,
            epsilon: DEFAULT_EPSILON,
            points,
            grid_index,
        })
    }

    /// Fits on the grid of unique observed training times.
    pub fn on_observed_times(train: SurvivalDataset, kernel: Kernel) -> Result<Self> {
        let grid = build_time_grid(&train, None)?;
        Self::new(train, kernel, grid)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn train(&self) -> &SurvivalDataset {
        &self.train
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `K(x, X_j)` for every training subject.
    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.train.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.train.feature_dim(),
                actual: x.len(),
            });
        }
        self.kernel.weights(x, &self.points)
    }

    /// Discrete hazard on the grid from explicit training weights.
    pub fn hazard_from_weights(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.train.len() {
            return Err(Error::DimensionMismatch {
                expected: self.train.len(),
                actual: weights.len(),
            });
        }
        let m = self.grid.len();
        let mut deaths = vec![0.0; m];
        let mut at_time = vec![0.0; m];
        for ((&w, &k), s) in weights.iter().zip(&self.grid_index).zip(self.train.subjects()) {
            at_time[k] += w;
            if s.event {
                deaths[k] += w;
            }
        }
        let mut hazard = vec![0.0; m];
        let mut at_risk = 0.0;
        for k in (0..m).rev() {
            at_risk += at_time[k];
            hazard[k] = deaths[k] / (at_risk + self.epsilon);
        }
        Ok(hazard)
    }

    /// Kernel hazard at `x`, optionally leaving training subject `exclude` out.
    pub fn kernel_hazard(&self, x: &[f64], exclude: Option<usize>) -> Result<Vec<f64>> {
        let mut w = self.weights(x)?;
        if let Some(i) = exclude {
            if i >= w.len() {
                return Err(Error::IndexOutOfRange { index: i, len: w.len() });
            }
            w[i] = 0.0;
        }
        self.hazard_from_weights(&w)
    }

    pub fn curve_from_weights(&self, weights: &[f64]) -> Result<SurvivalCurve> {
        Ok(self.curve_from_hazard(&self.hazard_from_weights(weights)?))
    }

    fn curve_from_hazard(&self, hazard: &[f64]) -> SurvivalCurve {
        let mut surv = 1.0;
        let values = hazard
            .iter()
            .map(|h| {
                surv *= 1.0 - h;
                surv
            })
            .collect();
        SurvivalCurve {
            times: self.grid.times().to_vec(),
            survival: values,
        }
    }

    /// Conditional survival curve at `x`.
    pub fn conditional_km(&self, x: &[f64]) -> Result<SurvivalCurve> {
        Ok(self.curve_from_hazard(&self.kernel_hazard(x, None)?))
    }

    /// Curves for many query points, evaluated in parallel.
    pub fn curves(&self, xs: &[&[f64]]) -> Result<Vec<SurvivalCurve>> {
        xs.par_iter().map(|x| self.conditional_km(x)).collect()
    }
}

/// Maps a survival curve to a point estimate of the survival time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeStatistic {
    Median,
    /// Integral of the curve up to `horizon` (default: the last grid time).
    Mean { horizon: Option<f64> },
}

impl TimeStatistic {
    pub fn apply(&self, curve: &SurvivalCurve) -> Result<f64> {
        match self {
            TimeStatistic::Median => Ok(curve.median()),
            TimeStatistic::Mean { horizon } => curve.mean(horizon.unwrap_or(curve.last_time())),
        }
    }
}

/// A survival-time predictor `T(x)`.
pub trait SurvivalTimeEstimator: Sync {
    fn estimate(&self, x: &[f64]) -> Result<f64>;

    fn estimate_all(&self, xs: &[&[f64]]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.estimate(x)).collect()
    }
}

impl<F> SurvivalTimeEstimator for F
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    fn estimate(&self, x: &[f64]) -> Result<f64> {
        self(x)
    }
}

/// Conditional Kaplan-Meier survival time. A median that never occurs on the
/// grid is reported as the last grid time so that it can be scored.
#[derive(Debug, Clone)]
pub struct KernelTimeEstimator {
    pub fit: FittedConditionalKM,
    pub statistic: TimeStatistic,
}

impl KernelTimeEstimator {
    pub fn new(fit: FittedConditionalKM, statistic: TimeStatistic) -> Self {
        Self { fit, statistic }
    }
}

impl SurvivalTimeEstimator for KernelTimeEstimator {
    fn estimate(&self, x: &[f64]) -> Result<f64> {
        let t = self.statistic.apply(&self.fit.conditional_km(x)?)?;
        Ok(if t.is_finite() { t } else { self.fit.grid().last() })
    }
}
