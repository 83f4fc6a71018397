//! Self-supervised self-supervision: proposal scoring, candidate pools and
//! the interleaved SST / FAL session.

mod pool;
mod scores;
mod session;

pub use pool::{
    best_attention, best_high_entropy, best_low_entropy, best_pairs, candidate_pool, entropy_table, PairCandidate, PoolConfig,
    TokenCandidate,
};
pub use scores::{
    argmax_flip_fraction, attention_from_occurrences, attention_scores, entropy_from_posteriors, score_entropy, score_joint,
    sst_converged, AttentionScore, EntropyScore, JointScore, PairEmbeddings, Posteriors, MAX_ENTROPY_SCORE,
};
pub use session::{
    Answer, ConvergenceSource, FalQuery, InteractiveOracle, Oracle, Outcome, PredictorInit, S4Config, S4Session, ScriptedOracle, SessionEvent,
    SessionMetrics, SstMode, Status, SupportInstance,
};

#[cfg(test)]
mod tests;
