use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{EvidenceSet, Prior};
use crate::factor_graph::{enumerate_exact, supervision_only_expectations, BpConfig, Expectation, FactorGraph};

/// Gradient descent on tied template weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightLearning {
    pub lr: f64,
    pub steps: usize,
    /// Divide each template's step by its grounding count. The reported
    /// gradient is always the summed one.
    pub per_grounding_step: bool,
    /// Abort once any weight leaves `[-limit, limit]`.
    pub divergence_limit: f64,
}

impl Default for WeightLearning {
    fn default() -> Self {
        WeightLearning {
            lr: 0.1,
            steps: 25,
            per_grounding_step: true,
            divergence_limit: 50.0,
        }
    }
}

/// Where supervision-module expectations come from.
#[derive(Clone, Debug, PartialEq)]
pub enum ExpectationSource {
    Bp(BpConfig),
    Exact,
}

impl ExpectationSource {
    fn expectations(&self, graph: &FactorGraph) -> Result<Vec<Option<Expectation>>> {
        match self {
            ExpectationSource::Bp(cfg) => supervision_only_expectations(graph, cfg),
            ExpectationSource::Exact => Ok(enumerate_exact(&graph.supervision_only())?.expectations),
        }
    }
}

/// Gradient of `KL(q || Phi)` in each template weight: the summed
/// `E_Phi[f] - E_q[f]` over groundings plus the prior term. Fixed templates
/// and templates without groundings get zero.
pub fn weight_gradient(
    graph: &FactorGraph,
    evidence: &EvidenceSet,
    e_q: &[Option<Expectation>],
    source: &ExpectationSource,
) -> Result<Vec<f64>> {
    let e_phi = source.expectations(graph)?;
    Ok(evidence
        .iter()
        .enumerate()
        .map(|(t, tpl)| {
            let Prior::Gaussian { mean, penalty } = tpl.prior else {
                return 0.0;
            };
            let data = match (e_phi.get(t).copied().flatten(), e_q.get(t).copied().flatten()) {
                (Some(p), Some(q)) => p.sum - q.sum,
                _ => 0.0,
            };
            data + penalty * (tpl.weight - mean)
        })
        .collect())
}

/// `KL(q || Phi)` up to a q-only constant: `ln Z(w) - sum_t w_t S_q,t` plus
/// the prior, with `ln Z` computed exactly. For finite-difference checks.
pub fn weight_objective(graph: &FactorGraph, evidence: &EvidenceSet, e_q: &[Option<Expectation>]) -> Result<f64> {
    let mut g = graph.supervision_only();
    g.set_template_weights(&evidence.weights());
    let mut obj = crate::factor_graph::log_partition(&g)?;
    for (t, tpl) in evidence.iter().enumerate() {
        if let Some(q) = e_q.get(t).copied().flatten() {
            obj -= tpl.weight * q.sum;
        }
        if let Prior::Gaussian { mean, penalty } = tpl.prior {
            obj += 0.5 * penalty * (tpl.weight - mean).powi(2);
        }
    }
    Ok(obj)
}

/// Runs `config.steps` descent steps on the non-fixed template weights of
/// `evidence`, holding `e_q` fixed. `graph` supplies the groundings; its
/// weights are overwritten. Returns the gradient of the last step.
pub fn m_step_weights(
    graph: &mut FactorGraph,
    evidence: &mut EvidenceSet,
    e_q: &[Option<Expectation>],
    config: &WeightLearning,
    source: &ExpectationSource,
) -> Result<Vec<f64>> {
    let counts = graph.grounding_counts();
    let mut sup = graph.supervision_only();
    let mut last = vec![0.0; evidence.len()];
    for _ in 0..config.steps {
        sup.set_template_weights(&evidence.weights());
        last = weight_gradient(&sup, evidence, e_q, source)?;
        for (t, g) in last.iter().enumerate() {
            let tpl = evidence.get(t).unwrap();
            if tpl.prior.is_fixed() {
                continue;
            }
            let n = counts.get(t).copied().unwrap_or(0).max(1) as f64;
            let step = if config.per_grounding_step { g / n } else { *g };
            let w = tpl.weight - config.lr * step;
            if !w.is_finite() || w.abs() > config.divergence_limit {
                return Err(Error::Divergence { template: t, weight: w });
            }
            evidence.set_weight(t, w);
        }
    }
    graph.set_template_weights(&evidence.weights());
    Ok(last)
}
