use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::module::PredictionModule;
use crate::corpus::Dataset;
use crate::error::{Error, Result};

/// Target distribution and loss weight per training instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelSet {
    /// Dataset instance indices.
    pub instances: Vec<usize>,
    pub targets: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl SoftLabelSet {
    pub fn new(instances: Vec<usize>, targets: Vec<Vec<f64>>) -> Self {
        let weights = vec![1.0; instances.len()];
        SoftLabelSet {
            instances,
            targets,
            weights,
        }
    }

    /// One-hot targets from gold labels of the given instances.
    pub fn from_gold(dataset: &Dataset, instances: &[usize]) -> Result<Self> {
        let l = dataset.num_labels();
        let targets = instances
            .iter()
            .map(|&i| {
                let y = dataset.instance(i).gold_label.ok_or_else(|| Error::Data(format!("instance `{}` has no gold label", dataset.instance(i).id)))?;
                let mut t = vec![0.0; l];
                t[y] = 1.0;
                Ok(t)
            })
            .collect::<Result<_>>()?;
        Ok(Self::new(instances.to_vec(), targets))
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.len() != self.instances.len() || self.weights.len() != self.instances.len() {
            return Err(Error::Data("soft label set has ragged fields".into()));
        }
        for (t, w) in self.targets.iter().zip(&self.weights) {
            let s: f64 = t.iter().sum();
            if (s - 1.0).abs() > 1e-6 || t.iter().any(|x| *x < 0.0) {
                return Err(Error::Data(format!("soft label {t:?} is not a distribution")));
            }
            if !(*w > 0.0) {
                return Err(Error::Data(format!("loss weight {w} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 penalty on predictor parameters; off by default.
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            epochs: 5,
            batch_size: 32,
            l2: 0.0,
            seed: 0,
        }
    }
}

/// Adam moments. A fresh optimizer has no history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        if self.m.len() != params.len() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            if g == 0.0 && self.m[i] == 0.0 && self.v[i] == 0.0 {
                continue;
            }
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Mean weighted soft cross-entropy over the label set.
pub fn mean_loss(module: &PredictionModule, dataset: &Dataset, labels: &SoftLabelSet) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let total: f64 = labels
        .instances
        .iter()
        .zip(&labels.targets)
        .zip(&labels.weights)
        .map(|((&i, t), &w)| module.loss_and_grad(&dataset.instance(i).tokens, t, w, None))
        .sum();
    total / labels.len() as f64
}

/// Mini-batch Adam on the weighted soft cross-entropy. Returns the full-pass
/// mean loss after each epoch.
pub fn train(
    module: &mut PredictionModule,
    dataset: &Dataset,
    labels: &SoftLabelSet,
    config: &TrainConfig,
    optimizer: &mut Adam,
) -> Result<Vec<f64>> {
    labels.validate()?;
    if config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::Config("training needs batch_size > 0 and lr > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut grad = vec![0.0; module.params.len()];
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &k in batch {
                let inst = dataset.instance(labels.instances[k]);
                loss += module.loss_and_grad(&inst.tokens, &labels.targets[k], labels.weights[k], Some(&mut grad));
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let n = batch.len() as f64;
            for (g, p) in grad.iter_mut().zip(&module.params) {
                *g = *g / n + config.l2 * p;
            }
            optimizer.step(&mut module.params, &grad, config.lr);
        }
        let loss = mean_loss(module, dataset, labels);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        trace.push(loss);
    }
    Ok(trace)
}
