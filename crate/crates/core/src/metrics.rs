//! Test-split evaluation of a prediction module.

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::factor_graph::argmax;
use crate::predictor::PredictionModule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// Recall per gold label; `None` for labels absent from the split.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub labels: Vec<String>,
}

/// Argmax accuracy on the test split. Exact ties go to the lower label id.
pub fn evaluate(module: &PredictionModule, dataset: &Dataset) -> Result<Metrics> {
    let preds = module.predict_many(dataset, dataset.test_indices());
    evaluate_predictions(dataset, dataset.test_indices(), &preds)
}

/// Scores label distributions against gold labels of `indices`.
pub fn evaluate_predictions(dataset: &Dataset, indices: &[usize], preds: &[Vec<f64>]) -> Result<Metrics> {
    if indices.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let l = dataset.num_labels();
    let mut confusion = vec![vec![0; l]; l];
    for (&i, p) in indices.iter().zip(preds) {
        let inst = dataset.instance(i);
        let gold = inst.gold_label.ok_or_else(|| Error::Data(format!("instance `{}` has no gold label", inst.id)))?;
        confusion[gold][argmax(p)] += 1;
    }
    let correct: usize = (0..l).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    Ok(Metrics {
        n: indices.len(),
        accuracy: correct as f64 / indices.len() as f64,
        per_class_accuracy,
        confusion,
        labels: dataset.label_set().to_vec(),
    })
}

/// Test accuracy when the test split is non-empty and fully labelled.
pub fn test_accuracy(module: &PredictionModule, dataset: &Dataset) -> Option<f64> {
    evaluate(module, dataset).ok().map(|m| m.accuracy)
}
