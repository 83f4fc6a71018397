//! Discriminative prediction module trained on soft labels.

mod checkpoint;
mod module;
mod train;

pub use checkpoint::load_word_vectors;
pub use module::{cosine, gradient_check, EmbedMode, ModuleConfig, PredictionModule, PredictorKind};
pub use train::{mean_loss, train, Adam, SoftLabelSet, TrainConfig};

use crate::corpus::Dataset;

impl PredictionModule {
    /// Predictions for the given dataset instances.
    pub fn predict_many(&self, dataset: &Dataset, indices: &[usize]) -> Vec<Vec<f64>> {
        indices.iter().map(|&i| self.predict(dataset.instance(i))).collect()
    }
}
