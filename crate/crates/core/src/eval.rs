//! Time-dependent concordance, bootstrap intervals and the marginal and local
//! coverage experiments.

use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{marginal_quantile, scores_from_estimates, CalibrationScores, Extended, LocalQuantiler, PredictionSet};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::estimator::{SurvivalCurve, SurvivalTimeEstimator};
use crate::kernel::Kernel;

/// Antolini's time-dependent concordance over comparable pairs, with its
/// pair count. Pair `(i, j)` is comparable when `Y_i < Y_j` and `delta_i = 1`;
/// it is concordant when `S(Y_i | X_i) < S(Y_i | X_j)`, and ties count 1/2.
pub fn ctd_value(curves: &[&SurvivalCurve], times: &[f64], events: &[bool]) -> Result<(f64, usize)> {
    if curves.len() != times.len() || times.len() != events.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            actual: curves.len(),
        });
    }
    let mut score = 0.0;
    let mut pairs = 0usize;
    for i in 0..times.len() {
        if !events[i] {
            continue;
        }
        let own = curves[i].at(times[i]);
        for j in 0..times.len() {
            if times[i] < times[j] {
                pairs += 1;
                let other = curves[j].at(times[i]);
                if own < other {
                    score += 1.0;
                } else if own == other {
                    score += 0.5;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok((score / pairs as f64, pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub lo: f64,
    pub hi: f64,
    /// Resamples on which the statistic was defined.
    pub used: usize,
    pub skipped: usize,
}

/// Linear-interpolation percentile of sorted values, `p` in `[0, 100]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        return sorted[lo.min(sorted.len() - 1)];
    }
    let (a, b) = (sorted[lo], sorted[lo + 1]);
    if a == b {
        a
    } else if b.is_infinite() {
        b
    } else {
        a + (b - a) * frac
    }
}

/// Percentile bootstrap at 95%: the statistic is evaluated on `reps` resamples
/// (indices drawn with replacement from `0..n`). Resample `r` uses seed
/// `seed + r`; resamples where the statistic fails are skipped.
pub fn bootstrap_ci<F>(n: usize, reps: usize, seed: u64, statistic: F) -> Result<BootstrapInterval>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if reps < 2 {
        return Err(Error::InvalidArgument(format!("bootstrap needs at least 2 resamples, got {reps}")));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let values: Vec<Option<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            statistic(&idx).ok().filter(|v| !v.is_nan())
        })
        .collect();
    let mut ok: Vec<f64> = values.iter().flatten().copied().collect();
    let skipped = reps - ok.len();
    if skipped > 0 {
        log::warn!("bootstrap: statistic undefined on {skipped} of {reps} resamples");
    }
    if ok.is_empty() {
        return Err(Error::InvalidArgument("statistic undefined on every resample".into()));
    }
    ok.sort_by(f64::total_cmp);
    Ok(BootstrapInterval {
        lo: percentile(&ok, 2.5),
        hi: percentile(&ok, 97.5),
        used: ok.len(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceReport {
    pub ctd: f64,
    pub comparable_pair_count: usize,
    pub bootstrap_interval: Option<BootstrapInterval>,
}

/// C^td of per-subject curves on a test set, with an optional bootstrap interval.
pub fn ctd_index(curves: &[SurvivalCurve], test: &SurvivalDataset, bootstrap: Option<(usize, u64)>) -> Result<ConcordanceReport> {
    if curves.len() != test.len() {
        return Err(Error::DimensionMismatch {
            expected: test.len(),
            actual: curves.len(),
        });
    }
    let times = test.times();
    let events = test.events();
    let all: Vec<&SurvivalCurve> = curves.iter().collect();
    let (ctd, pairs) = ctd_value(&all, &times, &events)?;
    let bootstrap_interval = match bootstrap {
        Some((reps, seed)) => Some(bootstrap_ci(test.len(), reps, seed, |idx| {
            let c: Vec<&SurvivalCurve> = idx.iter().map(|&i| &curves[i]).collect();
            let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
            let e: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
            Ok(ctd_value(&c, &t, &e)?.0)
        })?),
        None => None,
    };
    Ok(ConcordanceReport {
        ctd,
        comparable_pair_count: pairs,
        bootstrap_interval,
    })
}

impl ConcordanceReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let (lo, hi) = self
            .bootstrap_interval
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |b| (b.lo, b.hi));
        write_text(
            path.as_ref(),
            &format!("ctd,comparable_pairs,ci_lo,ci_hi\n{},{},{},{}\n", self.ctd, self.comparable_pair_count, lo, hi),
        )
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

/// Settings shared by both coverage experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub alpha: f64,
    pub reps: usize,
    /// Fraction of the calibration half actually used (marginal experiment).
    pub calib_fraction: f64,
    pub seed: u64,
    /// Local experiment: centers per repetition.
    pub centers: usize,
    /// Local experiment: kernel-weighted draws per center.
    pub points_per_center: usize,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            reps: 100,
            calib_fraction: 1.0,
            seed: 0,
            centers: 100,
            points_per_center: 100,
        }
    }
}

impl CoverageConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.calib_fraction > 0.0 && self.calib_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "calibration fraction must lie in (0, 1], got {}",
                self.calib_fraction
            )));
        }
        if self.reps == 0 {
            return Err(Error::InvalidArgument("at least one repetition is required".into()));
        }
        if n - n / 2 < 2 {
            return Err(Error::InvalidArgument(format!(
                "a test set of {n} subjects leaves fewer than 2 proper test points"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub rep: usize,
    pub seed: u64,
    pub coverage: f64,
    /// Marginal: `2 q`. Local: median over all drawn points.
    pub width: Extended,
    /// Local only: quartile deviation over all drawn points.
    pub width_quartile_deviation: Option<Extended>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterRecord {
    pub rep: usize,
    /// Index of the center in the test set.
    pub center: usize,
    pub coverage: f64,
    pub median_width: Extended,
    pub quartile_deviation: Extended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub experiment: String,
    pub target: f64,
    pub alpha: f64,
    pub calib_fraction: f64,
    /// One entry per repetition (marginal) or per evaluated center (local).
    pub empirical_coverages: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub repetitions: Vec<RepetitionRecord>,
    pub centers: Vec<CenterRecord>,
    pub skipped_centers: usize,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Median and quartile deviation (half the interquartile range). Equal
/// quartiles, including two infinite ones, give a deviation of 0.
pub fn median_and_quartile_deviation(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, q2, q3) = (percentile(&v, 25.0), percentile(&v, 50.0), percentile(&v, 75.0));
    let qd = if q1 == q3 { 0.0 } else { (q3 - q1) / 2.0 };
    (q2, qd)
}

impl CoverageReport {
    fn new(experiment: &str, config: &CoverageConfig, repetitions: Vec<RepetitionRecord>, centers: Vec<CenterRecord>, skipped: usize) -> Self {
        let empirical_coverages: Vec<f64> = if experiment == "local" {
            centers.iter().map(|c| c.coverage).collect()
        } else {
            repetitions.iter().map(|r| r.coverage).collect()
        };
        let (mean, std) = mean_std(&empirical_coverages);
        Self {
            experiment: experiment.to_string(),
            target: 1.0 - config.alpha,
            alpha: config.alpha,
            calib_fraction: config.calib_fraction,
            empirical_coverages,
            mean,
            std,
            repetitions,
            centers,
            skipped_centers: skipped,
        }
    }

    /// Flat CSV: one row per repetition (marginal) or per center (local).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.experiment == "local" {
            out.push_str("rep,center,alpha,coverage,median_width,quartile_deviation\n");
            for c in &self.centers {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    c.rep, c.center, self.alpha, c.coverage, c.median_width, c.quartile_deviation
                ));
            }
        } else {
            out.push_str("rep,seed,alpha,calib_fraction,coverage,width\n");
            for r in &self.repetitions {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.rep, r.seed, self.alpha, self.calib_fraction, r.coverage, r.width
                ));
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_csv())
    }
}

/// Random 50/50 split of `0..n` into calibration and proper-test indices.
fn halves(rng: &mut ChaCha8Rng, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let proper = idx.split_off(n / 2);
    (idx, proper)
}

fn check_estimates(estimates: &[f64], test: &SurvivalDataset) -> Result<()> {
    if estimates.len() != test.len() {
        return Err(Error::DimensionMismatch {
            expected: test.len(),
            actual: estimates.len(),
        });
    }
    Ok(())
}

/// Marginal protocol on precomputed estimates `T(X_i)` of the test subjects.
pub fn marginal_coverage_from_estimates(estimates: &[f64], test: &SurvivalDataset, config: &CoverageConfig) -> Result<CoverageReport> {
    config.validate(test.len())?;
    check_estimates(estimates, test)?;
    let reps = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = config.seed.wrapping_add(rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut calib, proper) = halves(&mut rng, test.len());
            calib.shuffle(&mut rng);
            let keep = ((config.calib_fraction * calib.len() as f64).round() as usize).min(calib.len());
            calib.truncate(keep);
            let scores = scores_for(estimates, test, &calib)?.with_tie_seed(seed);
            let q = marginal_quantile(&scores, config.alpha)?;
            let covered = proper
                .iter()
                .map(|&i| {
                    let s = test.get(i);
                    Ok(PredictionSet::new(estimates[i], q)?.contains(s.observed_time, s.event))
                })
                .collect::<Result<Vec<bool>>>()?;
            Ok(RepetitionRecord {
                rep,
                seed,
                coverage: covered.iter().filter(|&&c| c).count() as f64 / proper.len() as f64,
                width: Extended(2.0 * q),
                width_quartile_deviation: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverageReport::new("marginal", config, reps, Vec::new(), 0))
}

fn scores_for(estimates: &[f64], test: &SurvivalDataset, idx: &[usize]) -> Result<CalibrationScores> {
    let subset = test.subset(idx);
    let est: Vec<f64> = idx.iter().map(|&i| estimates[i]).collect();
    scores_from_estimates(&est, &subset)
}

/// Marginal protocol: estimates every test subject once, then runs
/// [`marginal_coverage_from_estimates`].
pub fn marginal_coverage_experiment(
    estimator: &dyn SurvivalTimeEstimator,
    test: &SurvivalDataset,
    config: &CoverageConfig,
) -> Result<CoverageReport> {
    let estimates = estimator.estimate_all(&test.features())?;
    marginal_coverage_from_estimates(&estimates, test, config)
}

/// Local protocol on precomputed estimates.
pub fn local_coverage_from_estimates(
    estimates: &[f64],
    kernel: &Kernel,
    test: &SurvivalDataset,
    config: &CoverageConfig,
) -> Result<CoverageReport> {
    config.validate(test.len())?;
    check_estimates(estimates, test)?;
    let points = kernel.represent_all(&test.features())?;
    let per_rep = (0..config.reps)
        .into_par_iter()
        .map(|rep| -> Result<(RepetitionRecord, Vec<CenterRecord>, usize)> {
            let seed = config.seed.wrapping_add(rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (calib, proper) = halves(&mut rng, test.len());
            let scores = scores_for(estimates, test, &calib)?.with_tie_seed(seed);
            let centers: Vec<usize> = (0..config.centers).map(|_| proper[rng.random_range(0..proper.len())]).collect();
            let mut records = Vec::with_capacity(centers.len());
            let mut all_widths = Vec::new();
            let mut skipped = 0;
            for &c in &centers {
                let to_center = proper
                    .iter()
                    .map(|&i| kernel.between(&points[i], &points[c]))
                    .collect::<Result<Vec<f64>>>()?;
                let Ok(sampler) = WeightedIndex::new(&to_center) else {
                    skipped += 1;
                    continue;
                };
                let calib_weights = calib
                    .iter()
                    .map(|&i| kernel.between(&points[i], &points[c]))
                    .collect::<Result<Vec<f64>>>()?;
                let quantiler = LocalQuantiler::new(&scores, &calib_weights)?;
                let mut hits = 0usize;
                let mut widths = Vec::with_capacity(config.points_per_center);
                for _ in 0..config.points_per_center {
                    let k = sampler.sample(&mut rng);
                    let i = proper[k];
                    let q = quantiler.quantile(to_center[k], config.alpha)?;
                    let s = test.get(i);
                    if PredictionSet::new(estimates[i], q)?.contains(s.observed_time, s.event) {
                        hits += 1;
                    }
                    widths.push(2.0 * q);
                }
                let (median, qd) = median_and_quartile_deviation(&widths);
                all_widths.extend(widths);
                records.push(CenterRecord {
                    rep,
                    center: c,
                    coverage: hits as f64 / config.points_per_center as f64,
                    median_width: Extended(median),
                    quartile_deviation: Extended(qd),
                });
            }
            if skipped > 0 {
                log::warn!("rep {rep}: {skipped} centers had zero kernel weight on every proper test point");
            }
            let cov: Vec<f64> = records.iter().map(|r| r.coverage).collect();
            let (median, qd) = median_and_quartile_deviation(&all_widths);
            let record = RepetitionRecord {
                rep,
                seed,
                coverage: if cov.is_empty() { f64::NAN } else { mean_std(&cov).0 },
                width: Extended(median),
                width_quartile_deviation: Some(Extended(qd)),
            };
            Ok((record, records, skipped))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut reps = Vec::with_capacity(per_rep.len());
    let mut centers = Vec::new();
    let mut skipped = 0;
    for (r, c, s) in per_rep {
        reps.push(r);
        centers.extend(c);
        skipped += s;
    }
    if centers.is_empty() {
        return Err(Error::InvalidArgument("every local center had zero kernel weight".into()));
    }
    Ok(CoverageReport::new("local", config, reps, centers, skipped))
}

/// Local protocol: estimates every test subject once, then runs
/// [`local_coverage_from_estimates`].
pub fn local_coverage_experiment(
    estimator: &dyn SurvivalTimeEstimator,
    kernel: &Kernel,
    test: &SurvivalDataset,
    config: &CoverageConfig,
) -> Result<CoverageReport> {
    let estimates = estimator.estimate_all(&test.features())?;
    local_coverage_from_estimates(&estimates, kernel, test, config)
}
