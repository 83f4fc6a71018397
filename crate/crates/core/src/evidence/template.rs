use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::predicate::Predicate;
use crate::error::{Error, Result};

/// Weight given to seed and proposed evidence: the log-odds of 90%.
pub const DEFAULT_WEIGHT: f64 = 2.2;
/// Weight standing in for an infinite (hard) constraint.
pub const W_HARD: f64 = 10.0;
/// L2 penalty of the default zero-mean gaussian weight prior.
pub const DEFAULT_PENALTY: f64 = 5e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Prior {
    /// Weight is never learned.
    Fixed,
    Gaussian { mean: f64, penalty: f64 },
}

impl Prior {
    pub fn is_fixed(&self) -> bool {
        matches!(self, Prior::Fixed)
    }
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Gaussian {
            mean: 0.0,
            penalty: DEFAULT_PENALTY,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Seed,
    Sst,
    Fal,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PairPredicate {
    /// Every pair of training instances mentioning the same entity tuple.
    SameTuple,
    Pairs { pairs: Vec<(String, String)> },
}

/// First-order formula template over label variables.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvidenceKind {
    /// `I[t in X_i and Y_i = l]`
    TokenUnary { token: String, label: String },
    /// `I[b(X_i) and Y_i = l]` for an arbitrary binary input feature `b`.
    FeatureUnary { feature: Predicate, label: String },
    /// Mentions of a known fact tuple are labelled with the fact's relation.
    DistantSupervision { kb_facts: Vec<String>, label: String },
    /// Votes `label` wherever `when` holds, abstains elsewhere.
    LabelingFunction {
        name: String,
        when: Predicate,
        label: String,
    },
    /// `Coref(X_i, X_j) and Y_i = Y_j`
    CorefJoint { predicate: PairPredicate },
    /// `I[Y_i = Y_j]` for each listed similar pair.
    SimilarityJoint { pairs: Vec<(String, String)> },
    /// `Y_i = label` for at least one mention of `tuple`.
    AtLeastOne { tuple: String, label: String },
}

fn canonical_pairs(pairs: &mut Vec<(String, String)>) {
    for p in pairs.iter_mut() {
        if p.1 < p.0 {
            std::mem::swap(&mut p.0, &mut p.1);
        }
    }
    pairs.sort();
    pairs.dedup();
}

impl EvidenceKind {
    pub fn token_unary(token: impl Into<String>, label: impl Into<String>) -> Self {
        EvidenceKind::TokenUnary {
            token: token.into(),
            label: label.into(),
        }
    }

    /// Normal form used for identity: pair lists ordered and deduplicated,
    /// fact lists sorted.
    pub fn canonical(mut self) -> Self {
        match &mut self {
            EvidenceKind::DistantSupervision { kb_facts, .. } => {
                kb_facts.sort();
                kb_facts.dedup();
            }
            EvidenceKind::CorefJoint {
                predicate: PairPredicate::Pairs { pairs },
            }
            | EvidenceKind::SimilarityJoint { pairs } => canonical_pairs(pairs),
            _ => {}
        }
        self
    }

    /// Identity key over `(kind, parameters)`.
    pub fn key(&self) -> String {
        serde_json::to_string(&self.clone().canonical()).expect("evidence kinds serialize")
    }

    /// The token a unary token-presence template is about, if any.
    pub fn token(&self) -> Option<&str> {
        match self {
            EvidenceKind::TokenUnary { token, .. } => Some(token),
            EvidenceKind::FeatureUnary { feature, .. } => feature.as_token(),
            _ => None,
        }
    }

    pub fn is_joint(&self) -> bool {
        matches!(
            self,
            EvidenceKind::CorefJoint { .. }
                | EvidenceKind::SimilarityJoint { .. }
                | EvidenceKind::AtLeastOne { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalScore {
    pub method: String,
    pub score: f64,
    pub support: u64,
}

fn default_weight() -> f64 {
    DEFAULT_WEIGHT
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceTemplate {
    #[serde(flatten)]
    pub kind: EvidenceKind,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default)]
    pub prior: Prior,
    #[serde(default)]
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<ProposalScore>,
}

impl EvidenceTemplate {
    /// Learnable template at the default weight and prior.
    pub fn soft(kind: EvidenceKind, origin: Origin) -> Self {
        EvidenceTemplate {
            kind: kind.canonical(),
            weight: DEFAULT_WEIGHT,
            prior: Prior::default(),
            origin,
            proposal: None,
        }
    }

    /// Hard constraint: fixed weight [`W_HARD`].
    pub fn hard(kind: EvidenceKind) -> Self {
        Self::fixed(kind, W_HARD)
    }

    pub fn fixed(kind: EvidenceKind, weight: f64) -> Self {
        EvidenceTemplate {
            kind: kind.canonical(),
            weight,
            prior: Prior::Fixed,
            origin: Origin::Seed,
            proposal: None,
        }
    }

    pub fn with_proposal(mut self, proposal: ProposalScore) -> Self {
        self.proposal = Some(proposal);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Insertion {
    Added(usize),
    /// A template with the same `(kind, parameters)` already exists.
    Duplicate(usize),
}

/// Evidence templates keyed by `(kind, parameters)`. Template ids are
/// positions and stay stable; the set only grows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<EvidenceTemplate>", into = "Vec<EvidenceTemplate>")]
pub struct EvidenceSet {
    templates: Vec<EvidenceTemplate>,
    keys: HashMap<String, usize>,
}

impl TryFrom<Vec<EvidenceTemplate>> for EvidenceSet {
    type Error = String;

    fn try_from(templates: Vec<EvidenceTemplate>) -> std::result::Result<Self, String> {
        let mut set = EvidenceSet::default();
        for t in templates {
            if let Insertion::Duplicate(_) = set.insert(t) {
                return Err("duplicate evidence template".into());
            }
        }
        Ok(set)
    }
}

impl From<EvidenceSet> for Vec<EvidenceTemplate> {
    fn from(s: EvidenceSet) -> Self {
        s.templates
    }
}

impl EvidenceSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, mut template: EvidenceTemplate) -> Insertion {
        template.kind = template.kind.canonical();
        let key = template.kind.key();
        if let Some(&id) = self.keys.get(&key) {
            return Insertion::Duplicate(id);
        }
        let id = self.templates.len();
        self.keys.insert(key, id);
        self.templates.push(template);
        Insertion::Added(id)
    }

    pub fn contains(&self, kind: &EvidenceKind) -> bool {
        self.keys.contains_key(&kind.key())
    }

    /// Whether any unary template is about `token`.
    pub fn mentions_token(&self, token: &str) -> bool {
        self.templates.iter().any(|t| t.kind.token() == Some(token))
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&EvidenceTemplate> {
        self.templates.get(id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EvidenceTemplate> {
        self.templates.iter()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.templates.iter().map(|t| t.weight).collect()
    }

    /// Sets a template's weight. Fixed-prior templates keep theirs.
    pub fn set_weight(&mut self, id: usize, weight: f64) {
        if let Some(t) = self.templates.get_mut(id) {
            if !t.prior.is_fixed() {
                t.weight = weight;
            }
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let templates: Vec<EvidenceTemplate> = serde_json::from_str(&text)?;
        EvidenceSet::try_from(templates)
            .map_err(|m| Error::Data(format!("{}: {m}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.templates)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
