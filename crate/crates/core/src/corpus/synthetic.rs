use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetSchema, Record, Split, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::evidence::{EvidenceKind, EvidenceSet, EvidenceTemplate, Origin};

/// Planted generative model for text-classification fixtures.
///
/// Each document draws a label (classes are balanced exactly), a length, a
/// number of "signal" positions and fills the remaining positions from a
/// Zipf-distributed background vocabulary `w0 .. w{n-1}`. Signal tokens are
/// drawn with weight `odds` in documents of their own label and weight 1
/// elsewhere; infinite odds make a token exclusive to its label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub labels: Vec<String>,
    pub background_vocab: usize,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    /// Extra vocabulary entries usable as signal tokens.
    #[serde(default)]
    pub named_tokens: Vec<String>,
    pub signal: Vec<SignalToken>,
    /// Per-position probability of emitting a signal token.
    pub signal_rate: f64,
    #[serde(default)]
    pub min_signal: usize,
    pub doc_len: LengthRange,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default)]
    pub tuples: Option<TupleFixture>,
}

fn default_zipf() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalToken {
    pub token: String,
    pub label: String,
    /// Emission odds in favour of `label`; `null` in JSON means exclusive.
    #[serde(with = "odds_serde")]
    pub odds: f64,
}

mod odds_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

/// Entity-tuple fixture for at-least-one experiments (binary tasks only;
/// `labels[1]` is the positive relation). The first `positive_tuples`
/// tuples are known facts; each of their mentions is a true positive with
/// probability `positive_rate`, and at least one always is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TupleFixture {
    pub n_tuples: usize,
    pub per_tuple: usize,
    pub positive_tuples: usize,
    pub positive_rate: f64,
}

impl TupleFixture {
    pub fn tuple_key(k: usize) -> String {
        format!("t{k}")
    }

    /// Tuple keys of the known (positive) facts.
    pub fn kb_facts(&self) -> Vec<String> {
        (0..self.positive_tuples).map(Self::tuple_key).collect()
    }
}

impl SyntheticConfig {
    /// Binary planted corpus with `per_class` exclusive signal tokens per
    /// class: `p0 ..` for `pos` and `n0 ..` for `neg`.
    pub fn planted(per_class: usize) -> Self {
        let named: Vec<String> = (0..per_class)
            .map(|i| format!("p{i}"))
            .chain((0..per_class).map(|i| format!("n{i}")))
            .collect();
        SyntheticConfig {
            labels: vec!["neg".into(), "pos".into()],
            background_vocab: 3000,
            zipf_exponent: 1.2,
            signal: named
                .iter()
                .map(|t| SignalToken {
                    token: t.clone(),
                    label: if t.starts_with('p') { "pos" } else { "neg" }.into(),
                    odds: f64::INFINITY,
                })
                .collect(),
            named_tokens: named,
            signal_rate: 0.06,
            min_signal: 1,
            doc_len: LengthRange { min: 20, max: 30 },
            n_train: 1000,
            n_test: 1000,
            tuples: None,
        }
    }

    /// Labels are fully determined by three exclusive tokens per class.
    pub fn separable() -> Self {
        SyntheticConfig {
            background_vocab: 2000,
            zipf_exponent: 1.0,
            signal_rate: 0.05,
            doc_len: LengthRange { min: 20, max: 40 },
            n_train: 2000,
            n_test: 1000,
            ..Self::planted(3)
        }
    }

    /// Ten exclusive tokens per class, so three seed tokens per class cover
    /// 30% of the signal.
    pub fn noisy() -> Self {
        Self::planted(10)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "separable" => Some(Self::separable()),
            "noisy" => Some(Self::noisy()),
            _ => None,
        }
    }

    fn vocabulary(&self) -> Vec<String> {
        (0..self.background_vocab)
            .map(|i| format!("w{i}"))
            .chain(self.named_tokens.iter().cloned())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let labels: HashSet<&str> = self.labels.iter().map(String::as_str).collect();
        if self.labels.len() < 2 || labels.len() != self.labels.len() {
            return err("need at least 2 distinct labels".into());
        }
        if self.background_vocab == 0 {
            return err("background_vocab must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.signal_rate) {
            return err(format!("signal_rate {} outside [0, 1]", self.signal_rate));
        }
        if self.doc_len.min == 0 || self.doc_len.min > self.doc_len.max {
            return err(format!("bad doc_len {:?}", self.doc_len));
        }
        if self.min_signal > self.doc_len.min {
            return err("min_signal exceeds the minimum document length".into());
        }
        if !self.zipf_exponent.is_finite() || self.zipf_exponent < 0.0 {
            return err("zipf_exponent must be finite and nonnegative".into());
        }
        let vocab: HashSet<String> = self.vocabulary().into_iter().collect();
        for s in &self.signal {
            if !vocab.contains(&s.token) {
                return err(format!("signal token `{}` is outside the vocabulary", s.token));
            }
            if !labels.contains(s.label.as_str()) {
                return err(format!("signal token `{}` has unknown label `{}`", s.token, s.label));
            }
            if !(s.odds > 0.0) {
                return err(format!("signal token `{}` needs positive odds", s.token));
            }
        }
        let emits_signal = self.signal_rate > 0.0 || self.min_signal > 0;
        if emits_signal && self.signal.is_empty() {
            return err("signal_rate > 0 without signal tokens".into());
        }
        if let Some(t) = &self.tuples {
            if self.labels.len() != 2 {
                return err("tuple fixtures need a binary label set".into());
            }
            if t.n_tuples * t.per_tuple > self.n_train {
                return err("tuple instances exceed n_train".into());
            }
            if t.positive_tuples > t.n_tuples || t.per_tuple == 0 {
                return err("bad tuple fixture sizes".into());
            }
            if !(0.0..=1.0).contains(&t.positive_rate) {
                return err("positive_rate outside [0, 1]".into());
            }
        }
        Ok(())
    }

    /// Per-label weights over the signal token list.
    fn signal_weights(&self, label: &str) -> Vec<f64> {
        self.signal
            .iter()
            .map(|s| match (s.label == label, s.odds.is_infinite()) {
                (true, true) => 1.0,
                (true, false) => s.odds,
                (false, true) => 0.0,
                (false, false) => 1.0,
            })
            .collect()
    }
}

/// Generates a dataset from the planted model. Identical `(config, seed)`
/// always yields an identical dataset.
/// Seed evidence for the planted presets: `p0 .. => pos` and `n0 .. => neg`,
/// `per_class` of each.
pub fn planted_seed_evidence(per_class: usize) -> EvidenceSet {
    let mut k = EvidenceSet::new();
    for (prefix, label) in [("p", "pos"), ("n", "neg")] {
        for i in 0..per_class {
            k.insert(EvidenceTemplate::soft(EvidenceKind::token_unary(format!("{prefix}{i}"), label), Origin::Seed));
        }
    }
    k
}

pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = WeightedIndex::new(
        (0..config.background_vocab).map(|r| 1.0 / ((r + 1) as f64).powf(config.zipf_exponent)),
    )
    .map_err(|e| Error::Config(e.to_string()))?;
    let signal_dists: Vec<Option<WeightedIndex<f64>>> = config
        .labels
        .iter()
        .map(|l| WeightedIndex::new(config.signal_weights(l)).ok())
        .collect();
    let emits_signal = config.signal_rate > 0.0 || config.min_signal > 0;
    if emits_signal && signal_dists.iter().any(Option::is_none) {
        return Err(Error::Config(
            "every label needs at least one signal token it can emit".into(),
        ));
    }

    let mut records = Vec::with_capacity(config.n_train + config.n_test);
    let n_labels = config.labels.len();
    let gen_doc = |label: usize, rng: &mut ChaCha8Rng| -> String {
        let len = rng.random_range(config.doc_len.min..=config.doc_len.max);
        let mut n_signal = (0..len).filter(|_| rng.random_bool(config.signal_rate)).count();
        n_signal = n_signal.max(config.min_signal);
        let mut words: Vec<String> = Vec::with_capacity(len);
        if let Some(dist) = &signal_dists[label] {
            for _ in 0..n_signal {
                words.push(config.signal[dist.sample(rng)].token.clone());
            }
        }
        while words.len() < len {
            words.push(format!("w{}", background.sample(rng)));
        }
        words.shuffle(rng);
        words.join(" ")
    };

    let mut tuple_slots: Vec<(String, usize)> = Vec::new();
    if let Some(t) = &config.tuples {
        for k in 0..t.n_tuples {
            let positive = k < t.positive_tuples;
            let mut labels: Vec<usize> = (0..t.per_tuple)
                .map(|_| usize::from(positive && rng.random_bool(t.positive_rate)))
                .collect();
            if positive && !labels.contains(&1) {
                let pick = rng.random_range(0..t.per_tuple);
                labels[pick] = 1;
            }
            for l in labels {
                tuple_slots.push((TupleFixture::tuple_key(k), l));
            }
        }
    }

    for i in 0..config.n_train {
        let (label, tuple) = match tuple_slots.get(i) {
            Some((key, l)) => (*l, Some(key.clone())),
            None => (i % n_labels, None),
        };
        records.push(Record {
            id: format!("train-{i:05}"),
            text: gen_doc(label, &mut rng),
            label: Some(config.labels[label].clone()),
            tuple,
            split: Split::Train,
        });
    }
    for i in 0..config.n_test {
        let label = i % n_labels;
        records.push(Record {
            id: format!("test-{i:05}"),
            text: gen_doc(label, &mut rng),
            label: Some(config.labels[label].clone()),
            tuple: None,
            split: Split::Test,
        });
    }

    let schema = DatasetSchema {
        labels: Some(config.labels.clone()),
        max_len: DEFAULT_MAX_LEN,
    };
    Dataset::from_records(records, &schema)
}
