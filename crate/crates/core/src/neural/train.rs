//! Mini-batch training of embedding networks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_time_grid, snap_to_grid, SurvivalDataset, TimeGrid};
use crate::error::{Error, Result};
use crate::neural::adam::Adam;
use crate::neural::loss::{loss_and_gradient, loss_value, LossReport};
use crate::neural::net::{batch_matrix, EmbeddingNet, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Number of evenly spaced grid points; `None` uses the unique observed times.
    pub grid_points: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            learning_rate: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            grid_points: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate >= 0.0) || self.grid_points == Some(0) {
            return Err(Error::InvalidArgument(
                "batch size and grid points must be positive and the learning rate nonnegative".into(),
            ));
        }
        Ok(())
    }

    fn optimizer(&self, num_params: usize) -> Adam {
        Adam::new(num_params, self.learning_rate, self.adam_beta1, self.adam_beta2, self.adam_eps)
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct Trained {
    pub net: EmbeddingNet,
    /// Mean batch loss of each epoch.
    pub history: Vec<f64>,
    pub grid: TimeGrid,
}

/// Per-epoch batches of indices. A trailing batch smaller than `min_batch` is dropped.
fn epoch_batches(rng: &mut ChaCha8Rng, n: usize, batch_size: usize, min_batch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.min(n))
        .filter(|c| c.len() >= min_batch)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Builds the grid from `config.grid_points`, snaps the data to it and trains.
pub fn train(net: EmbeddingNet, data: &SurvivalDataset, config: &TrainConfig) -> Result<Trained> {
    let grid = build_time_grid(data, config.grid_points)?;
    let snapped = snap_to_grid(data, &grid)?;
    let (net, history) = train_on_grid(net, &snapped, &grid, config)?;
    Ok(Trained { net, history, grid })
}

/// Trains on data whose observed times already lie on `grid`.
pub fn train_on_grid(
    mut net: EmbeddingNet,
    data: &SurvivalDataset,
    grid: &TimeGrid,
    config: &TrainConfig,
) -> Result<(EmbeddingNet, Vec<f64>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.len() < 2 {
        return Err(Error::InvalidArgument("training needs at least 2 subjects".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = config.optimizer(net.num_params());
    let mut params = net.params();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut losses = Vec::new();
        for idx in epoch_batches(&mut rng, data.len(), config.batch_size, 2) {
            let batch = data.subset(&idx);
            let (value, grad, cache) = loss_and_gradient(&net, &batch, grid, Mode::Train)?;
            net.update_running_stats(&cache);
            opt.step(&mut params, &grad);
            net.set_params(&params)?;
            losses.push(value);
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        log::debug!("epoch {}: loss {mean:.6}", epoch + 1);
        history.push(mean);
    }
    Ok((net, history))
}

/// Loss over fixed consecutive batches of `data`; no parameter updates.
pub fn evaluate_loss(
    net: &EmbeddingNet,
    data: &SurvivalDataset,
    grid: &TimeGrid,
    batch_size: usize,
    mode: Mode,
) -> Result<LossReport> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument("loss needs at least 2 subjects".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let batch_values = idx
        .chunks(batch_size.max(2).min(data.len()))
        .filter(|c| c.len() >= 2)
        .map(|c| loss_value(net, &data.subset(c), grid, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossReport {
        value: batch_values.iter().sum::<f64>() / batch_values.len() as f64,
        batch_values,
        grad_norm: f64::NAN,
    })
}

fn mse_and_grad(net: &EmbeddingNet, rows: &[&[f64]], targets: &[&[f64]]) -> Result<(f64, Vec<f64>, crate::neural::net::ForwardCache)> {
    let (z, cache) = net.forward_cached(&batch_matrix(rows), Mode::Train)?;
    let b = rows.len() as f64;
    let mut loss = 0.0;
    let dz = nalgebra::DMatrix::from_fn(z.nrows(), z.ncols(), |i, c| {
        let r = z[(i, c)] - targets[i][c];
        loss += r * r;
        2.0 * r / b
    });
    Ok((loss / b, net.backward(&cache, &dz), cache))
}

/// Mean squared embedding error `(1/n) sum_i |psi(X_i) - target_i|^2` in train mode.
pub fn embedding_mse(net: &EmbeddingNet, data: &SurvivalDataset, targets: &[Vec<f64>]) -> Result<f64> {
    check_targets(net, data, targets)?;
    let t: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
    Ok(mse_and_grad(net, &data.features(), &t)?.0)
}

fn check_targets(net: &EmbeddingNet, data: &SurvivalDataset, targets: &[Vec<f64>]) -> Result<()> {
    if targets.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            actual: targets.len(),
        });
    }
    if let Some(t) = targets.iter().find(|t| t.len() != net.output_dim()) {
        return Err(Error::DimensionMismatch {
            expected: net.output_dim(),
            actual: t.len(),
        });
    }
    Ok(())
}

/// Fits `psi(X_i)` to the target embeddings by mini-batch Adam on the mean
/// squared error.
pub fn warm_start(mut net: EmbeddingNet, data: &SurvivalDataset, targets: &[Vec<f64>], config: &TrainConfig) -> Result<EmbeddingNet> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_targets(&net, data, targets)?;
    let min_batch = if data.len() >= 2 { 2 } else { 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = config.optimizer(net.num_params());
    let mut params = net.params();
    for _ in 0..config.epochs {
        for idx in epoch_batches(&mut rng, data.len(), config.batch_size, min_batch) {
            let rows: Vec<&[f64]> = idx.iter().map(|&i| data.get(i).features.as_slice()).collect();
            let t: Vec<&[f64]> = idx.iter().map(|&i| targets[i].as_slice()).collect();
            let (_, grad, cache) = mse_and_grad(&net, &rows, &t)?;
            net.update_running_stats(&cache);
            opt.step(&mut params, &grad);
            net.set_params(&params)?;
        }
    }
    Ok(net)
}
