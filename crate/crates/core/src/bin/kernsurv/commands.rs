use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::{json, Value};

use kernsurv::conformal::{calibrate, marginal_quantile, Extended, LocalQuantiler, PredictionSet};
use kernsurv::data::{generate_synthetic, load_csv, write_csv, CsvSchema, HazardModel, Standardize, SurvivalDataset, SyntheticSpec};
use kernsurv::estimator::{KernelTimeEstimator, SurvivalCurve, SurvivalTimeEstimator, TimeStatistic};
use kernsurv::eval::{ctd_index, local_coverage_from_estimates, marginal_coverage_from_estimates, CoverageConfig};
use kernsurv::kernel::{load_kernel_matrix, Kernel, KernelMatrix};
use kernsurv::neural::{mds_embed, ModelFile};
use kernsurv::Error;

use crate::args::*;
use crate::cv;

/// Output directory bookkeeping; every file written is listed in the manifest.
pub struct Run {
    out: PathBuf,
    outputs: Vec<String>,
    results: serde_json::Map<String, Value>,
}

impl Run {
    pub fn new(out: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            outputs: Vec::new(),
            results: serde_json::Map::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> anyhow::Result<()> {
        let path = self.path(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn result(&mut self, key: &str, value: Value) {
        self.results.insert(key.to_string(), value);
    }

    pub fn finish(mut self, command: &Command, argv: &[String]) -> anyhow::Result<()> {
        let manifest = json!({
            "tool": "kernsurv",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command.name(),
            "argv": argv,
            "config": command,
            "outputs": self.outputs,
            "results": self.results,
        });
        self.outputs.clear();
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let path = self.out.join("manifest.json");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn load_model(path: &Path) -> anyhow::Result<ModelFile> {
    ModelFile::load(path).with_context(|| format!("loading model {}", path.display()))
}

/// Reads a calibration, test or query file with the model's feature columns
/// and training standardization.
fn load_for_model(path: &Path, schema: &Schema, model: &ModelFile) -> anyhow::Result<SurvivalDataset> {
    let mut csv = CsvSchema::new(&schema.time_col, &schema.event_col);
    if let Some(f) = schema.features.clone().or_else(|| model.training.feature_names().map(<[String]>::to_vec)) {
        csv = csv.with_features(f);
    }
    if let Some(stats) = model.training.standardization() {
        csv = csv.with_standardize(Standardize::Apply(stats.clone()));
    }
    let data = load_csv(path, &csv).with_context(|| format!("reading {}", path.display()))?;
    if data.feature_dim() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            actual: data.feature_dim(),
        })
        .with_context(|| format!("{} does not match the model's features", path.display()));
    }
    Ok(data)
}

fn statistic(args: &EstimatorArgs) -> TimeStatistic {
    match args.time_estimator {
        TimeEstimatorKind::Median => TimeStatistic::Median,
        TimeEstimatorKind::Mean => TimeStatistic::Mean { horizon: args.horizon },
    }
}

fn time_estimator(model: &ModelFile, args: &EstimatorArgs) -> anyhow::Result<KernelTimeEstimator> {
    Ok(KernelTimeEstimator::new(model.predictor()?, statistic(args)))
}

/// Kernel for a choice; a precomputed matrix is bound to the rows of `points`.
fn kernel_for(choice: &KernelChoice, model: &ModelFile, points: &SurvivalDataset) -> anyhow::Result<Kernel> {
    Ok(match choice {
        KernelChoice::Learned => Kernel::GaussianEmbedding(model.net()?),
        KernelChoice::Constant => Kernel::Constant,
        KernelChoice::Box(sigma) => Kernel::Box { sigma: *sigma },
        KernelChoice::Precomputed(path) => load_kernel_matrix(path, Some(points))
            .with_context(|| format!("loading kernel matrix {}", path.display()))?,
    })
}

fn concat(a: &SurvivalDataset, b: &SurvivalDataset) -> anyhow::Result<SurvivalDataset> {
    let features: Vec<Vec<f64>> = a.features().into_iter().chain(b.features()).map(<[f64]>::to_vec).collect();
    let times: Vec<f64> = a.times().into_iter().chain(b.times()).collect();
    let events: Vec<bool> = a.events().into_iter().chain(b.events()).collect();
    Ok(SurvivalDataset::from_parts(features, &times, &events)?)
}

fn fmt_alpha(a: f64) -> String {
    format!("{a}")
}

pub fn synth(args: &SynthArgs, run: &mut Run) -> anyhow::Result<()> {
    let hazard_model = match args.model {
        SynthModel::Exp => HazardModel::Exponential { beta: args.beta.clone() },
        SynthModel::Clusters => {
            let [a, b] = args.scales[..] else {
                bail!("--scales needs exactly two values, got {}", args.scales.len());
            };
            HazardModel::TwoCluster {
                separation: args.separation,
                shape: args.shape,
                scales: [a, b],
            }
        }
    };
    let spec = SyntheticSpec {
        n: args.n,
        d: args.d,
        hazard_model,
        censoring_rate_target: args.censor,
        seed: args.common.seed,
    };
    let (data, truth) = generate_synthetic(&spec)?;
    write_csv(&data, run.path("data.csv"))?;
    run.write_json("ground_truth.json", &json!({ "spec": spec, "truth": truth }))?;
    run.result("n", json!(data.len()));
    run.result("censored_fraction", json!(data.censored_fraction()));
    Ok(())
}

pub fn fit(args: &FitArgs, run: &mut Run) -> anyhow::Result<()> {
    let mut csv = CsvSchema::new(&args.schema.time_col, &args.schema.event_col);
    if let Some(f) = &args.schema.features {
        csv = csv.with_features(f.clone());
    }
    if args.standardize {
        csv = csv.with_standardize(Standardize::Fit);
    }
    let data = load_csv(&args.train, &csv).with_context(|| format!("reading {}", args.train.display()))?;

    let targets = match &args.warm_start {
        Some(path) => {
            let Kernel::Precomputed(k) = load_kernel_matrix(path, None)
                .with_context(|| format!("loading kernel matrix {}", path.display()))?
            else {
                unreachable!("load_kernel_matrix returns a precomputed kernel")
            };
            if k.len() != data.len() {
                bail!("warm-start matrix has {} rows for {} training subjects", k.len(), data.len());
            }
            let embedding = mds_embed(&KernelMatrix::from(&k), data.feature_dim())?;
            log::info!("MDS stress {:.4}", embedding.stress);
            run.result("mds_stress", json!(embedding.stress));
            Some(embedding.points)
        }
        None => None,
    };

    let hyper = if args.no_cv {
        cv::default_hyper(args)
    } else {
        let sweep = cv::sweep(args, &data, targets.as_deref())?;
        run.write_text("cv.csv", &cv::scores_csv(&sweep))?;
        run.result("cv_candidates", json!(sweep.candidates.len()));
        run.result("cv_selected_score", json!(sweep.means[sweep.selected]));
        sweep.candidates[sweep.selected]
    };
    run.result("hyperparameters", serde_json::to_value(hyper)?);

    let fitted = cv::fit_one(args, &hyper, &data, targets.as_deref())?;
    let mut history = String::from("epoch,loss\n");
    for (e, l) in fitted.history.iter().enumerate() {
        history.push_str(&format!("{},{}\n", e + 1, l));
    }
    run.write_text("history.csv", &history)?;
    let model = ModelFile::new(&fitted.net, fitted.grid, data, Some(hyper.train_config(args.common.seed)));
    model.save(run.path("model.json"))?;
    Ok(())
}

#[derive(Serialize)]
struct Prediction {
    row: usize,
    time: Extended,
    curve: SurvivalCurve,
}

pub fn predict(args: &PredictArgs, run: &mut Run) -> anyhow::Result<()> {
    let model = load_model(&args.model)?;
    let query = load_for_model(&args.query, &args.schema, &model)?;
    let kernel = kernel_for(&args.kernel, &model, &model.training)?;
    let fit = model.predictor_with(kernel)?;
    let curves = fit.curves(&query.features())?;
    let stat = statistic(&args.estimator);
    let predictions = curves
        .into_iter()
        .enumerate()
        .map(|(row, curve)| {
            Ok(Prediction {
                row,
                time: Extended(stat.apply(&curve)?),
                curve,
            })
        })
        .collect::<kernsurv::Result<Vec<_>>>()?;
    run.write_json("predictions.json", &predictions)?;
    run.result("rows", json!(predictions.len()));
    Ok(())
}

pub fn calibrate_cmd(args: &CalibrateArgs, run: &mut Run) -> anyhow::Result<()> {
    let model = load_model(&args.model)?;
    let calib = load_for_model(&args.calib, &args.schema, &model)?;
    if calib.is_empty() {
        bail!("calibration file {} has no rows", args.calib.display());
    }
    let estimator = time_estimator(&model, &args.estimator)?;
    let estimates = estimator.estimate_all(&calib.features())?;
    let scores = kernsurv::conformal::scores_from_estimates(&estimates, &calib)?;
    run.write_json(
        "calibration.json",
        &json!({ "estimates": estimates, "scores": scores.scores(), "events": calib.events() }),
    )?;
    run.result("n", json!(scores.len()));
    Ok(())
}

#[derive(Serialize)]
struct IntervalRow {
    query: usize,
    center: Option<usize>,
    quantile: Extended,
    interval: kernsurv::conformal::IntervalRecord,
}

pub fn intervals(args: &IntervalsArgs, run: &mut Run) -> anyhow::Result<()> {
    let model = load_model(&args.model)?;
    let calib = load_for_model(&args.calib, &args.schema, &model)?;
    if calib.is_empty() {
        bail!("calibration file {} has no rows", args.calib.display());
    }
    let query = load_for_model(&args.query, &args.schema, &model)?;
    for &a in &args.alpha {
        if !(a > 0.0 && a < 1.0) {
            bail!("alpha must lie in (0, 1), got {a}");
        }
    }
    let estimator = time_estimator(&model, &args.estimator)?;
    let scores = calibrate(&estimator, &calib)?.with_tie_seed(args.common.seed);
    let t_hat = estimator.estimate_all(&query.features())?;

    let mut rows = Vec::new();
    match args.mode {
        IntervalMode::Marginal => {
            let mut quantiles = Vec::new();
            for &alpha in &args.alpha {
                let q = marginal_quantile(&scores, alpha)?;
                quantiles.push(json!({ "alpha": alpha, "quantile": Extended(q) }));
                for (i, &t) in t_hat.iter().enumerate() {
                    rows.push(IntervalRow {
                        query: i,
                        center: None,
                        quantile: Extended(q),
                        interval: PredictionSet::new(t, q)?.record(alpha),
                    });
                }
            }
            run.result("quantiles", Value::Array(quantiles));
        }
        IntervalMode::Local => {
            let points = concat(&calib, &query)?;
            let kernel = kernel_for(&args.kernel, &model, &points)?;
            let n_cal = calib.len();
            let (center_row, shared) = match &args.center {
                None => (None, None),
                Some(CenterSpec::Index(i)) => {
                    if *i >= query.len() {
                        bail!("center index {i} out of range for {} query rows", query.len());
                    }
                    (Some(*i), Some(query.get(*i).features.clone()))
                }
                Some(CenterSpec::Vector(v)) => {
                    let mut x = v.clone();
                    if x.len() != model.input_dim {
                        return Err(Error::DimensionMismatch {
                            expected: model.input_dim,
                            actual: x.len(),
                        })
                        .context("center vector");
                    }
                    if let Some(stats) = model.training.standardization() {
                        stats.apply(&mut x);
                    }
                    (None, Some(x))
                }
            };
            let reps = kernel.represent_all(&points.features())?;
            let shared_rep = match (&shared, center_row) {
                (_, Some(i)) => Some(reps[n_cal + i].clone()),
                (Some(x), None) => Some(kernel.represent(x)?),
                (None, None) => None,
            };
            let shared_quantiler = match &shared_rep {
                Some(c) => {
                    let w = reps[..n_cal].iter().map(|p| kernel.between(p, c)).collect::<kernsurv::Result<Vec<_>>>()?;
                    Some(LocalQuantiler::new(&scores, &w)?)
                }
                None => None,
            };
            for &alpha in &args.alpha {
                for (i, &t) in t_hat.iter().enumerate() {
                    let x_rep = &reps[n_cal + i];
                    let (q, center) = match (&shared_quantiler, &shared_rep) {
                        (Some(lq), Some(c)) => (lq.quantile(kernel.between(x_rep, c)?, alpha)?, center_row),
                        _ => {
                            let w = reps[..n_cal]
                                .iter()
                                .map(|p| kernel.between(p, x_rep))
                                .collect::<kernsurv::Result<Vec<_>>>()?;
                            (LocalQuantiler::new(&scores, &w)?.quantile(kernel.between(x_rep, x_rep)?, alpha)?, Some(i))
                        }
                    };
                    rows.push(IntervalRow {
                        query: i,
                        center,
                        quantile: Extended(q),
                        interval: PredictionSet::new(t, q)?.record(alpha),
                    });
                }
            }
        }
    }

    let mut table = String::from("query,alpha,center,quantile,estimate,observed_lo,observed_hi,censored_lo,censored_hi\n");
    for r in &rows {
        let i = &r.interval;
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.query,
            fmt_alpha(i.alpha),
            r.center.map_or(String::new(), |c| c.to_string()),
            r.quantile,
            i.center,
            i.observed[0],
            i.observed[1],
            i.censored[0],
            i.censored[1]
        ));
    }
    run.write_json(
        "intervals.json",
        &json!({ "mode": args.mode, "alphas": args.alpha, "intervals": rows }),
    )?;
    run.write_text("intervals.csv", &table)?;
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs, run: &mut Run) -> anyhow::Result<()> {
    let model = load_model(&args.model)?;
    let test = load_for_model(&args.test, &args.schema, &model)?;
    let seed = args.common.seed;
    let needs_estimates = args.metric.iter().any(|m| *m != Metric::Ctd);
    let estimates = if needs_estimates {
        Some(time_estimator(&model, &args.estimator)?.estimate_all(&test.features())?)
    } else {
        None
    };
    for metric in &args.metric {
        match metric {
            Metric::Ctd => {
                let curves = model.predictor()?.curves(&test.features())?;
                let bootstrap = (args.reps > 0).then_some((args.reps, seed));
                let report = ctd_index(&curves, &test, bootstrap)?;
                report.write_csv(run.path("ctd.csv"))?;
                run.write_json("ctd.json", &report)?;
                run.result("ctd", json!(report.ctd));
            }
            Metric::MarginalCoverage => {
                let est = estimates.as_deref().expect("estimates computed for coverage metrics");
                for &alpha in &args.alpha {
                    for &fraction in &args.calib_fraction {
                        let config = CoverageConfig {
                            alpha,
                            reps: args.reps,
                            calib_fraction: fraction,
                            seed,
                            ..CoverageConfig::default()
                        };
                        let report = marginal_coverage_from_estimates(est, &test, &config)?;
                        let stem = format!("marginal_coverage_alpha{}_frac{}", fmt_alpha(alpha), fraction);
                        report.write_csv(run.path(&format!("{stem}.csv")))?;
                        run.write_json(&format!("{stem}.json"), &report)?;
                        run.result(&stem, json!({ "mean": report.mean, "std": report.std }));
                    }
                }
            }
            Metric::LocalCoverage => {
                let est = estimates.as_deref().expect("estimates computed for coverage metrics");
                let kernel = kernel_for(&args.kernel, &model, &test)?;
                for &alpha in &args.alpha {
                    let config = CoverageConfig {
                        alpha,
                        reps: args.reps,
                        seed,
                        centers: args.centers,
                        points_per_center: args.points_per_center,
                        ..CoverageConfig::default()
                    };
                    let report = local_coverage_from_estimates(est, &kernel, &test, &config)?;
                    let stem = format!("local_coverage_alpha{}", fmt_alpha(alpha));
                    report.write_csv(run.path(&format!("{stem}.csv")))?;
                    run.write_json(&format!("{stem}.json"), &report)?;
                    run.result(
                        &stem,
                        json!({ "mean": report.mean, "std": report.std, "skipped_centers": report.skipped_centers }),
                    );
                }
            }
        }
    }
    Ok(())
}
