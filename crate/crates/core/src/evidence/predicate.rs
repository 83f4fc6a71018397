use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, Vocabulary};
use crate::error::{Error, Result};

/// Declarative instance predicate used by labeling functions and binary
/// input features.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Predicate {
    HasToken { token: String },
    /// Matched against the raw (untokenized) text.
    Regex { pattern: String },
    MinTokens { n: usize },
    MaxTokens { n: usize },
    All { of: Vec<Predicate> },
    Any { of: Vec<Predicate> },
    Not { of: Box<Predicate> },
}

impl Predicate {
    pub fn has_token(token: impl Into<String>) -> Self {
        Predicate::HasToken {
            token: token.into(),
        }
    }

    /// The token of a bare `HasToken` predicate.
    pub fn as_token(&self) -> Option<&str> {
        match self {
            Predicate::HasToken { token } => Some(token),
            _ => None,
        }
    }

    pub fn compile(&self, vocab: &Vocabulary) -> Result<CompiledPredicate> {
        Ok(match self {
            Predicate::HasToken { token } => CompiledPredicate::HasToken(vocab.id(token)),
            Predicate::Regex { pattern } => CompiledPredicate::Regex(
                Regex::new(pattern)
                    .map_err(|e| Error::Grounding(format!("bad regex `{pattern}`: {e}")))?,
            ),
            Predicate::MinTokens { n } => CompiledPredicate::MinTokens(*n),
            Predicate::MaxTokens { n } => CompiledPredicate::MaxTokens(*n),
            Predicate::All { of } => CompiledPredicate::All(
                of.iter().map(|p| p.compile(vocab)).collect::<Result<_>>()?,
            ),
            Predicate::Any { of } => CompiledPredicate::Any(
                of.iter().map(|p| p.compile(vocab)).collect::<Result<_>>()?,
            ),
            Predicate::Not { of } => CompiledPredicate::Not(Box::new(of.compile(vocab)?)),
        })
    }
}

pub enum CompiledPredicate {
    /// `None` when the token is outside the vocabulary; never matches.
    HasToken(Option<u32>),
    Regex(Regex),
    MinTokens(usize),
    MaxTokens(usize),
    All(Vec<CompiledPredicate>),
    Any(Vec<CompiledPredicate>),
    Not(Box<CompiledPredicate>),
}

impl CompiledPredicate {
    pub fn eval(&self, inst: &Instance) -> bool {
        match self {
            CompiledPredicate::HasToken(id) => id.is_some_and(|t| inst.tokens.contains(&t)),
            CompiledPredicate::Regex(re) => re.is_match(&inst.raw_text),
            CompiledPredicate::MinTokens(n) => inst.tokens.len() >= *n,
            CompiledPredicate::MaxTokens(n) => inst.tokens.len() <= *n,
            CompiledPredicate::All(ps) => ps.iter().all(|p| p.eval(inst)),
            CompiledPredicate::Any(ps) => ps.iter().any(|p| p.eval(inst)),
            CompiledPredicate::Not(p) => !p.eval(inst),
        }
    }
}
