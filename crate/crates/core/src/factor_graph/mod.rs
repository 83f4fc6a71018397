//! Grounded factor graphs and inference: loopy belief propagation with
//! linear-time at-least-one messages, and exact enumeration for small
//! graphs.

mod graph;
mod inference;

pub use graph::{Factor, FactorDump, FactorGraph, FactorKind, GraphDump, VariableDump};
pub use inference::{
    argmax, at_least_one_messages, entropy, enumerate_exact, log_partition, run_bp, supervision_only_beliefs,
    supervision_only_expectations, AtLeastOneMode, BeliefState, BpConfig, Expectation,
    ENUMERATION_LIMIT,
};

#[cfg(test)]
mod tests;
