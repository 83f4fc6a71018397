use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::template::{EvidenceKind, EvidenceSet, EvidenceTemplate, PairPredicate};
use crate::corpus::{Dataset, LabelId, Split};
use crate::error::{Error, Result};

/// Binary formula over the labels in a factor's scope.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Formula {
    LabelIs { label: LabelId },
    Equal,
    AtLeastOne { label: LabelId },
}

impl Formula {
    pub fn eval(&self, labels: &[LabelId]) -> bool {
        match *self {
            Formula::LabelIs { label } => labels[0] == label,
            Formula::Equal => labels[0] == labels[1],
            Formula::AtLeastOne { label } => labels.contains(&label),
        }
    }
}

/// One grounding of a template; `scope` holds dataset instance indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundedFactor {
    pub template: usize,
    pub scope: Vec<usize>,
    pub formula: Formula,
}

impl GroundedFactor {
    /// `exp(w * f(assignment))`.
    pub fn potential(&self, weight: f64, assignment: &[LabelId]) -> f64 {
        if self.formula.eval(assignment) {
            weight.exp()
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grounding {
    pub factors: Vec<GroundedFactor>,
    pub warnings: Vec<String>,
}

impl Grounding {
    /// Number of groundings per template id.
    pub fn counts(&self, n_templates: usize) -> Vec<usize> {
        let mut c = vec![0; n_templates];
        for f in &self.factors {
            c[f.template] += 1;
        }
        c
    }
}

fn unary(template: usize, instances: impl IntoIterator<Item = usize>, label: LabelId) -> Vec<GroundedFactor> {
    instances
        .into_iter()
        .map(|i| GroundedFactor {
            template,
            scope: vec![i],
            formula: Formula::LabelIs { label },
        })
        .collect()
}

/// Instantiates `template` over the training split of `dataset`.
/// Test-split instances are never grounded.
pub fn ground(template_id: usize, template: &EvidenceTemplate, dataset: &Dataset) -> Result<Grounding> {
    let mut out = Grounding::default();
    let train = dataset.train_indices();
    match &template.kind {
        EvidenceKind::TokenUnary { token, label } => {
            let label = dataset.label_id(label)?;
            match dataset.vocabulary().id(token) {
                Some(t) => out.factors = unary(template_id, dataset.postings(t).iter().copied(), label),
                None => out
                    .warnings
                    .push(format!("token `{token}` is not in the vocabulary; no groundings")),
            }
        }
        EvidenceKind::FeatureUnary { feature: pred, label }
        | EvidenceKind::LabelingFunction { when: pred, label, .. } => {
            let label = dataset.label_id(label)?;
            let compiled = pred.compile(dataset.vocabulary())?;
            out.factors = unary(
                template_id,
                train.iter().copied().filter(|&i| compiled.eval(dataset.instance(i))),
                label,
            );
        }
        EvidenceKind::DistantSupervision { kb_facts, label } => {
            let label = dataset.label_id(label)?;
            let facts: HashSet<&str> = kb_facts.iter().map(String::as_str).collect();
            out.factors = unary(
                template_id,
                train.iter().copied().filter(|&i| {
                    dataset
                        .instance(i)
                        .tuple_key
                        .as_deref()
                        .is_some_and(|k| facts.contains(k))
                }),
                label,
            );
        }
        EvidenceKind::CorefJoint {
            predicate: PairPredicate::SameTuple,
        } => {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for &i in train {
                if let Some(k) = dataset.instance(i).tuple_key.as_deref() {
                    groups.entry(k).or_default().push(i);
                }
            }
            for members in groups.values() {
                for (a, &i) in members.iter().enumerate() {
                    for &j in &members[a + 1..] {
                        out.factors.push(GroundedFactor {
                            template: template_id,
                            scope: vec![i, j],
                            formula: Formula::Equal,
                        });
                    }
                }
            }
        }
        EvidenceKind::CorefJoint {
            predicate: PairPredicate::Pairs { pairs },
        }
        | EvidenceKind::SimilarityJoint { pairs } => {
            for (a, b) in pairs {
                let i = dataset
                    .index_of(a)
                    .ok_or_else(|| Error::Grounding(format!("unknown instance id `{a}`")))?;
                let j = dataset
                    .index_of(b)
                    .ok_or_else(|| Error::Grounding(format!("unknown instance id `{b}`")))?;
                if dataset.instance(i).split != Split::Train || dataset.instance(j).split != Split::Train {
                    out.warnings
                        .push(format!("pair ({a}, {b}) touches the test split; skipped"));
                    continue;
                }
                if i == j {
                    out.warnings.push(format!("self pair ({a}, {b}) skipped"));
                    continue;
                }
                out.factors.push(GroundedFactor {
                    template: template_id,
                    scope: vec![i, j],
                    formula: Formula::Equal,
                });
            }
        }
        EvidenceKind::AtLeastOne { tuple, label } => {
            let label = dataset.label_id(label)?;
            let scope: Vec<usize> = train
                .iter()
                .copied()
                .filter(|&i| dataset.instance(i).tuple_key.as_deref() == Some(tuple.as_str()))
                .collect();
            if scope.is_empty() {
                out.warnings
                    .push(format!("tuple `{tuple}` has no training mentions; no groundings"));
            } else {
                out.factors.push(GroundedFactor {
                    template: template_id,
                    scope,
                    formula: Formula::AtLeastOne { label },
                });
            }
        }
    }
    Ok(out)
}

/// Grounds every template of `set`, concatenating factors in template order.
pub fn ground_all(set: &EvidenceSet, dataset: &Dataset) -> Result<Grounding> {
    let mut all = Grounding::default();
    for (id, t) in set.iter().enumerate() {
        let g = ground(id, t, dataset)?;
        all.factors.extend(g.factors);
        all.warnings.extend(g.warnings);
    }
    Ok(all)
}
