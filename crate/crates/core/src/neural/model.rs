//! JSON model file: the learned embedding plus everything needed to rebuild
//! the conditional Kaplan-Meier predictor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{SurvivalDataset, TimeGrid};
use crate::error::{Error, Result};
use crate::estimator::FittedConditionalKM;
use crate::kernel::Kernel;
use crate::neural::net::{Architecture, EmbeddingNet, RunningStats};
use crate::neural::train::TrainConfig;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub architecture: Architecture,
    pub input_dim: usize,
    pub output_dim: usize,
    pub lambda: Option<f64>,
    pub hidden_layers: Option<usize>,
    pub hidden_width: Option<usize>,
    pub params: Vec<f64>,
    pub running_stats: Vec<RunningStats>,
    pub grid: TimeGrid,
    pub train_config: Option<TrainConfig>,
    /// Training subjects (after any standardization) used as kernel neighbors.
    pub training: SurvivalDataset,
}

impl ModelFile {
    pub fn new(net: &EmbeddingNet, grid: TimeGrid, training: SurvivalDataset, train_config: Option<TrainConfig>) -> Self {
        let spec = net.mlp_spec();
        Self {
            format_version: FORMAT_VERSION,
            architecture: net.architecture(),
            input_dim: net.input_dim(),
            output_dim: net.output_dim(),
            lambda: net.lambda(),
            hidden_layers: spec.map(|s| s.hidden_layers),
            hidden_width: spec.map(|s| s.hidden_width),
            params: net.params(),
            running_stats: net.running_stats(),
            grid,
            train_config,
            training,
        }
    }

    /// Rebuilds the network described by the file.
    pub fn net(&self) -> Result<EmbeddingNet> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported format version {}", self.format_version)));
        }
        let needs_mlp = matches!(self.architecture, Architecture::ResBasic | Architecture::ResDiag | Architecture::Mlp);
        let (layers, width) = match (self.hidden_layers, self.hidden_width) {
            (Some(l), Some(w)) => (l, w),
            _ if needs_mlp => return Err(Error::Model("missing hidden layer shape".into())),
            _ => (0, 0),
        };
        let mut net = EmbeddingNet::build(self.architecture, self.input_dim, layers, width, self.lambda.unwrap_or(0.1), 0);
        net.set_params(&self.params).map_err(|e| Error::Model(format!("parameters: {e}")))?;
        net.set_running_stats(&self.running_stats)
            .map_err(|e| Error::Model(format!("running statistics: {e}")))?;
        if net.output_dim() != self.output_dim {
            return Err(Error::Model("output dimension does not match the architecture".into()));
        }
        Ok(net)
    }

    /// Conditional Kaplan-Meier predictor with the learned kernel.
    pub fn predictor(&self) -> Result<FittedConditionalKM> {
        self.predictor_with(Kernel::GaussianEmbedding(self.net()?))
    }

    /// Conditional Kaplan-Meier predictor over the stored training data with
    /// another kernel.
    pub fn predictor_with(&self, kernel: Kernel) -> Result<FittedConditionalKM> {
        FittedConditionalKM::new(self.training.clone(), kernel, self.grid.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let model: Self = serde_json::from_str(&text)?;
        model.net()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let training = SurvivalDataset::from_parts(vec![vec![0.0, 1.0], vec![1.0, 0.0]], &[1.0, 2.0], &[true, false]).unwrap();
        let grid = TimeGrid::new(vec![1.0, 2.0], false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for arch in [Architecture::Basic, Architecture::Diag, Architecture::ResBasic, Architecture::ResDiag, Architecture::Mlp] {
            let net = EmbeddingNet::build(arch, 2, 2, 4, 0.1, 5);
            let model = ModelFile::new(&net, grid.clone(), training.clone(), None);
            let path = dir.path().join(format!("{arch}.json"));
            model.save(&path).unwrap();
            let back = ModelFile::load(&path).unwrap();
            assert_eq!(back, model);
            assert_eq!(back.net().unwrap(), net);
        }
    }

    #[test]
    fn corrupt_parameters() {
        let training = SurvivalDataset::from_parts(vec![vec![0.0], vec![1.0]], &[1.0, 2.0], &[true, false]).unwrap();
        let grid = TimeGrid::new(vec![1.0, 2.0], false).unwrap();
        let mut model = ModelFile::new(&EmbeddingNet::basic(1), grid, training, None);
        model.params.push(1.0);
        assert!(matches!(model.net(), Err(Error::Model(_))));
    }
}
