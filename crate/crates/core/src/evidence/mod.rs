//! Virtual-evidence templates, the evidence set, and grounding into
//! factors over label variables.

mod ground;
mod predicate;
mod template;

pub use ground::{ground, ground_all, Formula, GroundedFactor, Grounding};
pub use predicate::{CompiledPredicate, Predicate};
pub use template::{
    EvidenceKind, EvidenceSet, EvidenceTemplate, Insertion, Origin, PairPredicate, Prior,
    ProposalScore, DEFAULT_PENALTY, DEFAULT_WEIGHT, W_HARD,
};
