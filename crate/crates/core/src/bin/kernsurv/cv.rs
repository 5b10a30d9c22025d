//! Hyperparameter sweep with k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use kernsurv::data::{SurvivalDataset, TimeGrid};
use kernsurv::estimator::FittedConditionalKM;
use kernsurv::eval::ctd_value;
use kernsurv::kernel::Kernel;
use kernsurv::neural::{evaluate_loss, train, warm_start, Architecture, EmbeddingNet, Mode, TrainConfig};
use kernsurv::{Error, Result};

use crate::args::{CvMetric, FitArgs, GridSize};

const EPOCHS: [usize; 2] = [10, 20];
const BATCH_SIZES: [usize; 2] = [64, 128];
const LEARNING_RATES: [f64; 2] = [0.001, 0.01];
const GRID_SIZES: [GridSize; 3] = [GridSize::All, GridSize::Points(64), GridSize::Points(128)];
const HIDDEN_LAYERS: [usize; 3] = [1, 2, 4];
const HIDDEN_WIDTHS: [usize; 3] = [16, 32, 64];

/// One point of the search grid. Field order is the tie-breaking order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grid: GridSize,
    pub hidden_layers: Option<usize>,
    pub hidden_width: Option<usize>,
}

impl Hyper {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            grid_points: self.grid.points(),
            ..TrainConfig::default()
        }
    }
}

fn uses_mlp(arch: Architecture) -> bool {
    matches!(arch, Architecture::ResBasic | Architecture::ResDiag | Architecture::Mlp)
}

fn axis<T: Copy>(fixed: Option<T>, grid: &[T]) -> Vec<T> {
    fixed.map_or_else(|| grid.to_vec(), |v| vec![v])
}

/// Candidates in ascending lexicographic order. Flags given on the command
/// line pin their axis.
pub fn search_grid(args: &FitArgs) -> Vec<Hyper> {
    let mlp = uses_mlp(args.arch);
    let layers: Vec<Option<usize>> = if mlp {
        axis(args.layers, &HIDDEN_LAYERS).into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    let widths: Vec<Option<usize>> = if mlp {
        axis(args.width, &HIDDEN_WIDTHS).into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    let mut out = Vec::new();
    for &epochs in &axis(args.epochs, &EPOCHS) {
        for &batch_size in &axis(args.batch, &BATCH_SIZES) {
            for &learning_rate in &axis(args.lr, &LEARNING_RATES) {
                for &grid in &axis(args.m_times, &GRID_SIZES) {
                    for &hidden_layers in &layers {
                        for &hidden_width in &widths {
                            out.push(Hyper {
                                epochs,
                                batch_size,
                                learning_rate,
                                grid,
                                hidden_layers,
                                hidden_width,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Hyperparameters used without cross-validation.
pub fn default_hyper(args: &FitArgs) -> Hyper {
    let mlp = uses_mlp(args.arch);
    Hyper {
        epochs: args.epochs.unwrap_or(20),
        batch_size: args.batch.unwrap_or(128),
        learning_rate: args.lr.unwrap_or(0.01),
        grid: args.m_times.unwrap_or(GridSize::All),
        hidden_layers: mlp.then(|| args.layers.unwrap_or(2)),
        hidden_width: mlp.then(|| args.width.unwrap_or(32)),
    }
}

pub struct Fitted {
    pub net: EmbeddingNet,
    pub history: Vec<f64>,
    pub grid: TimeGrid,
}

/// Builds, optionally warm-starts, and trains one network.
pub fn fit_one(args: &FitArgs, hyper: &Hyper, data: &SurvivalDataset, targets: Option<&[Vec<f64>]>) -> Result<Fitted> {
    let seed = args.common.seed;
    let config = hyper.train_config(seed);
    let mut net = EmbeddingNet::build(
        args.arch,
        data.feature_dim(),
        hyper.hidden_layers.unwrap_or(0),
        hyper.hidden_width.unwrap_or(0),
        args.lambda,
        seed,
    );
    if let Some(t) = targets {
        net = warm_start(net, data, t, &config)?;
    }
    let trained = train(net, data, &config)?;
    Ok(Fitted {
        net: trained.net,
        history: trained.history,
        grid: trained.grid,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldScore {
    pub candidate: usize,
    pub fold: usize,
    pub ctd: f64,
    pub loss: f64,
}

/// Validation C^td and survival loss. Validation times are snapped to the
/// nearest training-grid point for the loss.
fn score_fold(args: &FitArgs, hyper: &Hyper, train_part: &SurvivalDataset, val: &SurvivalDataset, targets: Option<&[Vec<f64>]>) -> Result<(f64, f64)> {
    let fitted = fit_one(args, hyper, train_part, targets)?;
    let predictor = FittedConditionalKM::new(
        train_part.clone(),
        Kernel::GaussianEmbedding(fitted.net.clone()),
        fitted.grid.clone(),
    )?;
    let curves = predictor.curves(&val.features())?;
    let refs: Vec<_> = curves.iter().collect();
    let ctd = ctd_value(&refs, &val.times(), &val.events()).map_or(f64::NAN, |(c, _)| c);
    let snapped_times: Vec<f64> = val.times().iter().map(|&t| fitted.grid.snap(t)).collect();
    let snapped = SurvivalDataset::from_parts(
        val.features().iter().map(|x| x.to_vec()).collect(),
        &snapped_times,
        &val.events(),
    )?;
    let loss = evaluate_loss(&fitted.net, &snapped, &fitted.grid, hyper.batch_size, Mode::Eval)
        .map_or(f64::NAN, |r| r.value);
    Ok((ctd, loss))
}

/// Fold assignment from one seeded permutation; fold `k` validates on
/// positions `[k n / folds, (k + 1) n / folds)`.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..folds)
        .map(|k| {
            let (lo, hi) = (k * n / folds, (k + 1) * n / folds);
            let val = order[lo..hi].to_vec();
            let train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
            if val.len() < 2 || train.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "cross-validation fold {k} has fewer than 2 subjects ({n} subjects, {folds} folds)"
                )));
            }
            Ok((train, val))
        })
        .collect()
}

pub struct Sweep {
    pub candidates: Vec<Hyper>,
    pub scores: Vec<FoldScore>,
    /// Mean validation score per candidate in the selection metric.
    pub means: Vec<f64>,
    pub selected: usize,
}

pub fn sweep(args: &FitArgs, data: &SurvivalDataset, targets: Option<&[Vec<f64>]>) -> Result<Sweep> {
    let candidates = search_grid(args);
    let folds = fold_indices(data.len(), args.folds, args.common.seed)?;
    let jobs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(c, f)| -> Result<FoldScore> {
            let (tr, va) = &folds[f];
            let fold_targets: Option<Vec<Vec<f64>>> = targets.map(|t| tr.iter().map(|&i| t[i].clone()).collect());
            let start = std::time::Instant::now();
            let (ctd, loss) = score_fold(args, &candidates[c], &data.subset(tr), &data.subset(va), fold_targets.as_deref())?;
            log::info!(
                "candidate {c} fold {f}: ctd {ctd:.4} loss {loss:.4} ({:.2}s)",
                start.elapsed().as_secs_f64()
            );
            Ok(FoldScore {
                candidate: c,
                fold: f,
                ctd,
                loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let means: Vec<f64> = (0..candidates.len())
        .map(|c| {
            let v: Vec<f64> = scores
                .iter()
                .filter(|s| s.candidate == c)
                .map(|s| match args.cv_metric {
                    CvMetric::Ctd => s.ctd,
                    CvMetric::Loss => s.loss,
                })
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    let selected = select(&means, args.cv_metric);
    Ok(Sweep {
        candidates,
        scores,
        means,
        selected,
    })
}

/// Index of the best mean score; NaN never wins and ties keep the earliest
/// (lexicographically smallest) candidate.
pub fn select(means: &[f64], metric: CvMetric) -> usize {
    let mut best: Option<usize> = None;
    for (i, &m) in means.iter().enumerate() {
        if m.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => match metric {
                CvMetric::Ctd => m > means[b],
                CvMetric::Loss => m < means[b],
            },
        };
        if better {
            best = Some(i);
        }
    }
    best.unwrap_or(0)
}

pub fn scores_csv(sweep: &Sweep) -> String {
    let mut out = String::from("candidate,epochs,batch_size,learning_rate,m_times,hidden_layers,hidden_width,fold,ctd,loss\n");
    let opt = |v: Option<usize>| v.map_or(String::new(), |x| x.to_string());
    for s in &sweep.scores {
        let h = &sweep.candidates[s.candidate];
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            s.candidate,
            h.epochs,
            h.batch_size,
            h.learning_rate,
            h.grid,
            opt(h.hidden_layers),
            opt(h.hidden_width),
            s.fold,
            s.ctd,
            s.loss
        ));
    }
    out
}
