use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::BeliefState;
use crate::corpus::{Dataset, LabelId};
use crate::error::Result;
use crate::evidence::{ground_all, EvidenceSet, Formula, Grounding};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FactorKind {
    /// `w * I[y = label]`
    Unary { label: LabelId },
    /// `w * I[y_i = y_j]`
    Equal,
    /// `w * I[some y = label]`
    AtLeastOne { label: LabelId },
    /// Fixed local log-potential; carries the predictor's distribution.
    Fixed { log_potential: Vec<f64> },
}

impl FactorKind {
    fn from_formula(f: Formula) -> Self {
        match f {
            Formula::LabelIs { label } => FactorKind::Unary { label },
            Formula::Equal => FactorKind::Equal,
            Formula::AtLeastOne { label } => FactorKind::AtLeastOne { label },
        }
    }

    /// Formula value on the scoped labels; `None` for fixed factors.
    pub fn eval(&self, labels: &[LabelId]) -> Option<bool> {
        match self {
            FactorKind::Unary { label } => Some(labels[0] == *label),
            FactorKind::Equal => Some(labels[0] == labels[1]),
            FactorKind::AtLeastOne { label } => Some(labels.contains(label)),
            FactorKind::Fixed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub kind: FactorKind,
    /// Variable indices.
    pub scope: Vec<usize>,
    pub weight: f64,
    /// Owning evidence template; `None` for predictor factors.
    pub template: Option<usize>,
}

impl Factor {
    /// `log phi(assignment)` where `labels` are the scoped labels.
    pub fn log_potential(&self, labels: &[LabelId]) -> f64 {
        match &self.kind {
            FactorKind::Fixed { log_potential } => log_potential[labels[0]],
            k => indicator_log(self.weight, k.eval(labels) == Some(true)),
        }
    }

    pub fn is_predictor(&self) -> bool {
        self.template.is_none()
    }
}

/// `log exp(w * f)` up to a per-factor constant; infinite weights become
/// hard constraints (`0` when satisfied, `-inf` when violated for `+inf`).
pub fn indicator_log(weight: f64, satisfied: bool) -> f64 {
    if weight == f64::INFINITY {
        if satisfied { 0.0 } else { f64::NEG_INFINITY }
    } else if weight == f64::NEG_INFINITY {
        if satisfied { f64::NEG_INFINITY } else { 0.0 }
    } else if satisfied {
        weight
    } else {
        0.0
    }
}

/// Bipartite graph of label variables (one per training instance) and
/// factors.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorGraph {
    num_labels: usize,
    instances: Vec<usize>,
    factors: Vec<Factor>,
    adjacency: Vec<Vec<(usize, usize)>>,
    n_templates: usize,
}

impl FactorGraph {
    /// Empty graph over variables that stand for the given dataset
    /// instances.
    pub fn new(num_labels: usize, instances: Vec<usize>) -> Self {
        let n = instances.len();
        FactorGraph {
            num_labels,
            instances,
            factors: Vec::new(),
            adjacency: vec![Vec::new(); n],
            n_templates: 0,
        }
    }

    /// Adds a factor over variable indices. Panics on an out-of-range
    /// variable or an empty scope.
    pub fn add_factor(&mut self, kind: FactorKind, scope: Vec<usize>, weight: f64, template: Option<usize>) -> usize {
        assert!(!scope.is_empty(), "factor scope must be non-empty");
        let id = self.factors.len();
        for (slot, &v) in scope.iter().enumerate() {
            self.adjacency[v].push((id, slot));
        }
        if let Some(t) = template {
            self.n_templates = self.n_templates.max(t + 1);
        }
        self.factors.push(Factor {
            kind,
            scope,
            weight,
            template,
        });
        id
    }

    /// Attaches one fixed factor per variable carrying `dist[v]`, a strictly
    /// positive distribution over labels.
    pub fn attach_predictor(&mut self, dists: &[Vec<f64>]) {
        assert_eq!(dists.len(), self.instances.len());
        for (v, d) in dists.iter().enumerate() {
            let log_potential = d.iter().map(|p| p.ln()).collect();
            self.add_factor(FactorKind::Fixed { log_potential }, vec![v], 0.0, None);
        }
    }

    /// Graph over the training split from already-grounded evidence.
    pub fn from_grounding(
        grounding: &Grounding,
        weights: &[f64],
        dataset: &Dataset,
        predictor: Option<&[Vec<f64>]>,
    ) -> Self {
        let train = dataset.train_indices().to_vec();
        let var_of: HashMap<usize, usize> = train.iter().enumerate().map(|(v, &i)| (i, v)).collect();
        let mut g = FactorGraph::new(dataset.num_labels(), train);
        g.n_templates = weights.len();
        for f in &grounding.factors {
            let scope = f.scope.iter().map(|i| var_of[i]).collect();
            g.add_factor(FactorKind::from_formula(f.formula), scope, weights[f.template], Some(f.template));
        }
        if let Some(p) = predictor {
            g.attach_predictor(p);
        }
        g
    }

    /// Grounds `evidence` over `dataset` and builds the joint graph,
    /// optionally with predictor factors. Returns grounding warnings too.
    pub fn build(
        evidence: &EvidenceSet,
        dataset: &Dataset,
        predictor: Option<&[Vec<f64>]>,
    ) -> Result<(Self, Vec<String>)> {
        let grounding = ground_all(evidence, dataset)?;
        let g = Self::from_grounding(&grounding, &evidence.weights(), dataset, predictor);
        Ok((g, grounding.warnings))
    }

    /// Updates the tied weight of every grounding of each template.
    pub fn set_template_weights(&mut self, weights: &[f64]) {
        for f in &mut self.factors {
            if let Some(t) = f.template {
                f.weight = weights[t];
            }
        }
    }

    /// Copy without predictor factors.
    pub fn supervision_only(&self) -> Self {
        let mut g = FactorGraph::new(self.num_labels, self.instances.clone());
        g.n_templates = self.n_templates;
        for f in self.factors.iter().filter(|f| !f.is_predictor()) {
            g.add_factor(f.kind.clone(), f.scope.clone(), f.weight, f.template);
        }
        g
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_variables(&self) -> usize {
        self.instances.len()
    }

    /// Dataset instance index of each variable.
    pub fn instances(&self) -> &[usize] {
        &self.instances
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// `(factor, slot)` pairs touching variable `v`.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    /// Number of template ids the graph knows about.
    pub fn num_templates(&self) -> usize {
        self.n_templates
    }

    pub fn grounding_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_templates];
        for f in &self.factors {
            if let Some(t) = f.template {
                c[t] += 1;
            }
        }
        c
    }

    /// Unnormalized log-probability of a full assignment.
    pub fn log_score(&self, assignment: &[LabelId]) -> f64 {
        let mut buf = Vec::new();
        self.factors
            .iter()
            .map(|f| {
                buf.clear();
                buf.extend(f.scope.iter().map(|&v| assignment[v]));
                f.log_potential(&buf)
            })
            .sum()
    }

    /// Diagnostic dump keyed by instance ids.
    pub fn dump(&self, dataset: &Dataset, belief: Option<&BeliefState>) -> GraphDump {
        let variables = self
            .instances
            .iter()
            .enumerate()
            .map(|(v, &i)| VariableDump {
                instance: dataset.instance(i).id.clone(),
                marginal: belief.map(|b| b.marginals[v].clone()),
            })
            .collect();
        let factors = self
            .factors
            .iter()
            .map(|f| FactorDump {
                template: f.template,
                kind: f.kind.clone(),
                scope: f
                    .scope
                    .iter()
                    .map(|&v| dataset.instance(self.instances[v]).id.clone())
                    .collect(),
                weight: f.weight,
            })
            .collect();
        GraphDump {
            labels: dataset.label_set().to_vec(),
            variables,
            factors,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub labels: Vec<String>,
    pub variables: Vec<VariableDump>,
    pub factors: Vec<FactorDump>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableDump {
    pub instance: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marginal: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorDump {
    pub template: Option<usize>,
    #[serde(flatten)]
    pub kind: FactorKind,
    pub scope: Vec<String>,
    pub weight: f64,
}
