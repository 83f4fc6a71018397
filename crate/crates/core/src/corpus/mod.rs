//! Dataset ingestion, tokenization, vocabulary, oracle rule sets and the
//! planted synthetic generator.

mod dataset;
mod oracle;
mod synthetic;
mod tokenize;
mod vocab;

pub use dataset::{
    load_dataset, Dataset, DatasetSchema, Instance, LabelId, Record, Split, DEFAULT_MAX_LEN,
};
pub use oracle::{generate_oracle, LabelRules, OracleConfig, OracleRuleSet, ScoredToken};
pub(crate) use oracle::softmax_in_place;
pub use synthetic::{
    generate_synthetic, planted_seed_evidence, LengthRange, SignalToken, SyntheticConfig, TupleFixture,
};
pub use tokenize::tokenize;
pub use vocab::{TokenId, Vocabulary, OOV};
