//! Variational EM over the supervision and prediction modules.

mod weights;

use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

pub use weights::{m_step_weights, weight_gradient, weight_objective, ExpectationSource, WeightLearning};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::evidence::{ground_all, EvidenceSet, Grounding};
use crate::factor_graph::{run_bp, BeliefState, BpConfig, FactorGraph};
use crate::metrics::test_accuracy;
use crate::predictor::{mean_loss, train, Adam, PredictionModule, SoftLabelSet, TrainConfig};

pub const DEFAULT_LR_GRID: [f64; 3] = [0.1, 0.01, 0.001];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DplConfig {
    pub em_iterations: usize,
    pub epochs_per_m_step: usize,
    pub batch_size: usize,
    pub bp: BpConfig,
    pub weights: WeightLearning,
    pub hard_em_imbalance: bool,
    pub label_threshold: f64,
    pub lr_grid: Vec<f64>,
    /// Predictor learning rate. `None` selects one from `lr_grid`.
    pub lr: Option<f64>,
    pub warm_start: bool,
    /// L2 penalty on predictor parameters.
    pub predictor_l2: f64,
    pub seed: u64,
}

impl Default for DplConfig {
    fn default() -> Self {
        DplConfig {
            em_iterations: 3,
            epochs_per_m_step: 5,
            batch_size: 32,
            bp: BpConfig::default(),
            weights: WeightLearning::default(),
            hard_em_imbalance: false,
            label_threshold: 0.5,
            lr_grid: DEFAULT_LR_GRID.to_vec(),
            lr: None,
            warm_start: true,
            predictor_l2: 0.0,
            seed: 0,
        }
    }
}

impl DplConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if self.em_iterations == 0 {
            return err("em_iterations must be at least 1");
        }
        if !(self.label_threshold > 0.0 && self.label_threshold < 1.0) {
            return err("label_threshold must lie in (0, 1)");
        }
        if self.lr.is_none() && self.lr_grid.is_empty() {
            return err("learning-rate grid is empty");
        }
        if self.lr.into_iter().chain(self.lr_grid.iter().copied()).any(|lr| !(lr > 0.0)) {
            return err("learning rates must be positive");
        }
        if !(self.predictor_l2 >= 0.0) {
            return err("predictor_l2 must be non-negative");
        }
        if !(self.weights.lr > 0.0) {
            return err("weight learning rate must be positive");
        }
        self.bp.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub q_entropy: f64,
    pub weights: Vec<f64>,
    /// Full-pass training loss after each epoch of the predictor M-step.
    pub train_loss: Vec<f64>,
    pub test_accuracy: Option<f64>,
    pub bp_iterations: usize,
    pub bp_converged: bool,
}

/// Evidence, predictor and latest posteriors of one DPL run. Owned by the
/// caller so partial results survive an aborted run.
#[derive(Clone, Debug)]
pub struct DplState {
    pub evidence: EvidenceSet,
    pub module: PredictionModule,
    pub belief: Option<BeliefState>,
    pub metrics: Vec<IterationMetrics>,
    pub warnings: Vec<String>,
    /// Learning rate used by the predictor M-step.
    pub lr: Option<f64>,
    grounding: Grounding,
}

impl DplState {
    pub fn new(evidence: EvidenceSet, module: PredictionModule, dataset: &Dataset) -> Result<Self> {
        let grounding = ground_all(&evidence, dataset)?;
        for w in &grounding.warnings {
            warn!("{w}");
        }
        Ok(DplState {
            evidence,
            module,
            belief: None,
            metrics: Vec::new(),
            warnings: grounding.warnings.clone(),
            lr: None,
            grounding,
        })
    }

    /// Full graph with the current weights and predictor potentials.
    pub fn graph(&self, dataset: &Dataset) -> FactorGraph {
        let preds = self.module.predict_many(dataset, dataset.train_indices());
        FactorGraph::from_grounding(&self.grounding, &self.evidence.weights(), dataset, Some(&preds))
    }

    pub fn grounding(&self) -> &Grounding {
        &self.grounding
    }

    /// Writes `evidence.json`, `predictor/`, `belief.json` and
    /// `metrics.jsonl` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.evidence.save(dir.join("evidence.json"))?;
        self.module.save(dir.join("predictor"))?;
        if let Some(b) = &self.belief {
            let p = dir.join("belief.json");
            fs::write(&p, serde_json::to_vec(b)?).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join("metrics.jsonl");
        let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        for m in &self.metrics {
            writeln!(f, "{}", serde_json::to_string(m)?).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// E-step: BP on evidence plus predictor potentials.
pub fn e_step(graph: &FactorGraph, config: &BpConfig) -> Result<BeliefState> {
    run_bp(graph, config)
}

/// Loss weights for hard-EM imbalance correction on binary tasks: label 1
/// is positive when `q(1) > threshold`, and positive instances get weight
/// `#neg / #pos`. Returns `None` (with the reason) when a class is empty.
pub fn imbalance_weights(q: &[Vec<f64>], threshold: f64) -> std::result::Result<(Vec<bool>, Vec<f64>), String> {
    let positive: Vec<bool> = q.iter().map(|m| m[1] > threshold).collect();
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(format!("imbalance weighting skipped: {n_pos} positive, {n_neg} negative instances"));
    }
    let w = n_neg as f64 / n_pos as f64;
    Ok((positive.clone(), positive.iter().map(|&p| if p { w } else { 1.0 }).collect()))
}

/// Soft labels for the predictor M-step from the E-step posteriors.
pub fn soft_labels(belief: &BeliefState, num_labels: usize, config: &DplConfig, warnings: &mut Vec<String>) -> SoftLabelSet {
    let mut labels = SoftLabelSet::new(belief.instances.clone(), belief.marginals.clone());
    if config.hard_em_imbalance && num_labels == 2 {
        match imbalance_weights(&belief.marginals, config.label_threshold) {
            Ok((positive, weights)) => {
                labels.targets = positive.iter().map(|&p| if p { vec![0.0, 1.0] } else { vec![1.0, 0.0] }).collect();
                labels.weights = weights;
            }
            Err(msg) => {
                warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    labels
}

/// Predictor M-step. The optimizer history is reset before training.
pub fn m_step_predictor(
    module: &mut PredictionModule,
    labels: &SoftLabelSet,
    dataset: &Dataset,
    train_config: &TrainConfig,
    optimizer: &mut Adam,
) -> Result<Vec<f64>> {
    optimizer.reset();
    train(module, dataset, labels, train_config, optimizer)
}

fn iteration_seed(base: u64, iteration: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(iteration as u64 + 1)
}

/// Runs `em_iterations` rounds of E-step, weight M-step and predictor
/// M-step, then a final E-step so `state.belief` reflects the returned
/// parameters. Selects the predictor learning rate from the grid when
/// `config.lr` is unset, by lowest final training cross-entropy against q.
pub fn dpl_learn(state: &mut DplState, dataset: &Dataset, config: &DplConfig) -> Result<()> {
    config.validate()?;
    if state.evidence.is_empty() {
        let msg = "no evidence: the predictor trains on its own predictions".to_string();
        warn!("{msg}");
        state.warnings.push(msg);
    }
    let lr = match config.lr.or(state.lr) {
        Some(lr) => lr,
        None => {
            let mut best: Option<(f64, DplState)> = None;
            for &lr in &config.lr_grid {
                let mut trial = state.clone();
                trial.lr = Some(lr);
                run_em(&mut trial, dataset, config, lr)?;
                let loss = trial.metrics.last().and_then(|m| m.train_loss.last().copied()).unwrap_or(f64::INFINITY);
                if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                    best = Some((loss, trial));
                }
            }
            *state = best.unwrap().1;
            return Ok(());
        }
    };
    state.lr = Some(lr);
    run_em(state, dataset, config, lr)
}

fn run_em(state: &mut DplState, dataset: &Dataset, config: &DplConfig, lr: f64) -> Result<()> {
    let initial_weights = state.evidence.weights();
    let initial_module = state.module.clone();
    let mut optimizer = Adam::new();
    let source = ExpectationSource::Bp(config.bp.clone());
    let start = state.metrics.len();
    for it in 0..config.em_iterations {
        if !config.warm_start && it > 0 {
            for (t, w) in initial_weights.iter().enumerate() {
                state.evidence.set_weight(t, *w);
            }
            state.module = initial_module.clone();
        }
        let mut graph = state.graph(dataset);
        let q = e_step(&graph, &config.bp)?;
        m_step_weights(&mut graph, &mut state.evidence, &q.expectations, &config.weights, &source)?;
        let labels = soft_labels(&q, dataset.num_labels(), config, &mut state.warnings);
        let train_config = TrainConfig {
            lr,
            epochs: config.epochs_per_m_step,
            batch_size: config.batch_size,
            l2: config.predictor_l2,
            seed: iteration_seed(config.seed, start + it),
        };
        let train_loss = m_step_predictor(&mut state.module, &labels, dataset, &train_config, &mut optimizer)?;
        state.metrics.push(IterationMetrics {
            iteration: start + it,
            q_entropy: q.mean_entropy(),
            weights: state.evidence.weights(),
            train_loss,
            test_accuracy: test_accuracy(&state.module, dataset),
            bp_iterations: q.iterations,
            bp_converged: q.converged,
        });
        state.belief = Some(q);
    }
    let graph = state.graph(dataset);
    state.belief = Some(e_step(&graph, &config.bp)?);
    Ok(())
}

/// Mean soft cross-entropy of the module against the current posteriors.
pub fn train_objective(state: &DplState, dataset: &Dataset) -> Option<f64> {
    let b = state.belief.as_ref()?;
    Some(mean_loss(&state.module, dataset, &SoftLabelSet::new(b.instances.clone(), b.marginals.clone())))
}
