//! Embedding networks, the leave-one-out survival loss, training and
//! MDS warm-starting.

mod adam;
mod loss;
mod mds;
mod model;
mod net;
mod train;

pub use adam::Adam;
pub use loss::{loss_and_gradient, loss_gradient, loss_value, survival_loss, LossReport, DENOM_EPS, HAZARD_CLAMP};
pub use mds::{mds_embed, target_squared_distances, MdsEmbedding, MDS_GUARD};
pub use model::ModelFile;
pub use net::{batch_matrix, Architecture, EmbeddingNet, ForwardCache, Mlp, MlpSpec, Mode, RunningStats, Scaling};
pub use train::{embedding_mse, evaluate_loss, train, train_on_grid, warm_start, TrainConfig, Trained};
