//! Leave-one-out kernel-hazard survival loss and its gradient.
//!
//! For a batch of `b` subjects with embeddings `z_i` and grid indices `g_i`,
//! the hazard of subject `i` at grid time `t_l` uses only the other batch
//! members:
//!
//! ```text
//! h_il = sum_{j != i} delta_j K_ij 1{Y_j = t_l} / (sum_{j != i} K_ij 1{Y_j >= t_l} + eps)
//! ```
//!
//! and the loss is the mean negative log-likelihood over the grid points up to
//! and including each subject's own time. Grid points that carry no batch
//! event have `h = 0`, which the clamp maps to a constant term.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{SurvivalDataset, TimeGrid};
use crate::error::{Error, Result};
use crate::neural::net::{batch_matrix, EmbeddingNet, ForwardCache, Mode};

/// Hazards are clamped to `[HAZARD_CLAMP, 1 - HAZARD_CLAMP]` before logarithms.
pub const HAZARD_CLAMP: f64 = 1e-7;
/// Denominator guard of the kernel hazard.
pub const DENOM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Mean negative log-likelihood.
    pub value: f64,
    pub batch_values: Vec<f64>,
    pub grad_norm: f64,
}

/// Batch labels reduced to grid positions.
#[derive(Debug, Clone)]
pub(crate) struct BatchLabels {
    /// Grid index of each subject's observed time.
    grid_index: Vec<usize>,
    /// Rank of each subject's time among the distinct batch times.
    level: Vec<usize>,
    events: Vec<bool>,
    levels: usize,
}

impl BatchLabels {
    pub(crate) fn new(batch: &SurvivalDataset, grid: &TimeGrid) -> Result<Self> {
        if batch.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "survival loss needs a batch of at least 2 subjects, got {}",
                batch.len()
            )));
        }
        let grid_index = batch
            .subjects()
            .iter()
            .map(|s| grid.index_of(s.observed_time).ok_or(Error::OffGrid(s.observed_time)))
            .collect::<Result<Vec<_>>>()?;
        let mut distinct = grid_index.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let level = grid_index
            .iter()
            .map(|g| distinct.binary_search(g).expect("present"))
            .collect();
        Ok(Self {
            grid_index,
            level,
            events: batch.events(),
            levels: distinct.len(),
        })
    }
}

/// Loss and `d loss / d z` for a batch of embeddings `z` (`b x p`).
pub(crate) fn embedding_loss(z: &DMatrix<f64>, labels: &BatchLabels, with_grad: bool) -> (f64, DMatrix<f64>) {
    let b = z.nrows();
    let r = labels.levels;
    let bf = b as f64;

    let mut kmat = DMatrix::zeros(b, b);
    for i in 0..b {
        for j in (i + 1)..b {
            let d2: f64 = z.row(i).iter().zip(z.row(j).iter()).map(|(u, v)| (u - v) * (u - v)).sum();
            let k = (-d2).exp();
            kmat[(i, j)] = k;
            kmat[(j, i)] = k;
        }
    }

    let log_floor = (-HAZARD_CLAMP).ln_1p();
    let mut total = 0.0;
    // coef[i][k] = (d loss / d h_ik) / (n_ik + eps); hz[i][k] = h_ik
    let mut coef = vec![vec![0.0; r]; if with_grad { b } else { 0 }];
    let mut hz = vec![vec![0.0; r]; if with_grad { b } else { 0 }];
    // kernel mass at each level, split by event indicator
    let mut deaths = vec![0.0; r];
    let mut censored = vec![0.0; r];
    for i in 0..b {
        deaths.iter_mut().for_each(|v| *v = 0.0);
        censored.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..b {
            if j == i {
                continue;
            }
            let k = kmat[(i, j)];
            if labels.events[j] {
                deaths[labels.level[j]] += k;
            } else {
                censored[labels.level[j]] += k;
            }
        }
        let li = labels.level[i];
        // mass strictly after level k, for k = li down to 0
        let mut later: f64 = deaths[li + 1..].iter().chain(&censored[li + 1..]).sum();
        let mut own = 0.0;
        for k in (0..=li).rev() {
            // 1 - h is formed from the surviving mass so that it keeps its
            // precision when h is close to 1
            let survivors = later + censored[k];
            let denom = survivors + deaths[k] + DENOM_EPS;
            let h = deaths[k] / denom;
            let one_minus_h = (survivors + DENOM_EPS) / denom;
            later = survivors + deaths[k];
            let death_term = k == li && labels.events[i];
            let (term, dterm, clamped) = if h < HAZARD_CLAMP {
                (if death_term { HAZARD_CLAMP.ln() } else { log_floor }, 0.0, true)
            } else if one_minus_h < HAZARD_CLAMP {
                (if death_term { log_floor } else { HAZARD_CLAMP.ln() }, 0.0, true)
            } else if death_term {
                (h.ln(), 1.0 / h, false)
            } else {
                (one_minus_h.ln(), -1.0 / one_minus_h, false)
            };
            own += term;
            if with_grad {
                hz[i][k] = h;
                coef[i][k] = if clamped { 0.0 } else { -dterm / (bf * denom) };
            }
        }
        let empty_points = labels.grid_index[i] - li;
        own += empty_points as f64 * log_floor;
        total += own;
    }
    let value = -total / bf;

    let mut dz = DMatrix::zeros(b, z.ncols());
    if !with_grad {
        return (value, dz);
    }
    // prefix[i][k] = sum_{k' <= k} coef_ik' h_ik'
    let prefix: Vec<Vec<f64>> = (0..b)
        .map(|i| {
            let mut acc = 0.0;
            coef[i]
                .iter()
                .zip(&hz[i])
                .map(|(c, h)| {
                    acc += c * h;
                    acc
                })
                .collect()
        })
        .collect();
    let g = |i: usize, j: usize| -> f64 {
        let (li, lj) = (labels.level[i], labels.level[j]);
        let death = if labels.events[j] && lj <= li { coef[i][lj] } else { 0.0 };
        death - prefix[i][lj.min(li)]
    };
    for i in 0..b {
        for j in (i + 1)..b {
            let k = kmat[(i, j)];
            if k == 0.0 {
                continue;
            }
            let s = (g(i, j) + g(j, i)) * k * -2.0;
            for c in 0..z.ncols() {
                let diff = s * (z[(i, c)] - z[(j, c)]);
                dz[(i, c)] += diff;
                dz[(j, c)] -= diff;
            }
        }
    }
    (value, dz)
}

fn forward(net: &EmbeddingNet, batch: &SurvivalDataset, mode: Mode) -> Result<(DMatrix<f64>, ForwardCache)> {
    net.forward_cached(&batch_matrix(&batch.features()), mode)
}

/// Loss and parameter gradient, plus the forward cache so the caller can fold
/// batch-normalization statistics into the running averages.
pub fn loss_and_gradient(
    net: &EmbeddingNet,
    batch: &SurvivalDataset,
    grid: &TimeGrid,
    mode: Mode,
) -> Result<(f64, Vec<f64>, ForwardCache)> {
    let labels = BatchLabels::new(batch, grid)?;
    let (z, cache) = forward(net, batch, mode)?;
    let (value, dz) = embedding_loss(&z, &labels, true);
    let grad = net.backward(&cache, &dz);
    Ok((value, grad, cache))
}

/// Loss value only.
pub fn loss_value(net: &EmbeddingNet, batch: &SurvivalDataset, grid: &TimeGrid, mode: Mode) -> Result<f64> {
    let labels = BatchLabels::new(batch, grid)?;
    let (z, _) = forward(net, batch, mode)?;
    Ok(embedding_loss(&z, &labels, false).0)
}

pub fn survival_loss(net: &EmbeddingNet, batch: &SurvivalDataset, grid: &TimeGrid, mode: Mode) -> Result<LossReport> {
    let (value, grad, _) = loss_and_gradient(net, batch, grid, mode)?;
    Ok(LossReport {
        value,
        batch_values: vec![value],
        grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
    })
}

pub fn loss_gradient(net: &EmbeddingNet, batch: &SurvivalDataset, grid: &TimeGrid, mode: Mode) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(net, batch, grid, mode)?.1)
}
