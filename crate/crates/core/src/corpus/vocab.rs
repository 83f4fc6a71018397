use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

/// Id assigned to tokens that never occur in the training split.
pub const OOV: TokenId = TokenId::MAX;

/// Token/id bijection with per-token training counts.
///
/// Ids are dense in `[0, len)` and assigned in order of first occurrence in
/// the training split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, TokenId>,
    /// `ranks[id]` is the 0-based position of `id` when sorted by count
    /// descending, ties broken by token string.
    ranks: Vec<usize>,
    by_rank: Vec<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_counts(r.tokens, r.counts)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            counts: v.counts,
        }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from token sequences, counting every occurrence.
    pub fn build<'a, I, S>(sequences: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut tokens = Vec::new();
        let mut counts: Vec<u64> = Vec::new();
        let mut index: HashMap<String, TokenId> = HashMap::new();
        for seq in sequences {
            for tok in seq {
                let tok = tok.as_ref();
                match index.get(tok) {
                    Some(&id) => counts[id as usize] += 1,
                    None => {
                        let id = tokens.len() as TokenId;
                        index.insert(tok.to_string(), id);
                        tokens.push(tok.to_string());
                        counts.push(1);
                    }
                }
            }
        }
        Self::from_counts(tokens, counts)
    }

    fn from_counts(tokens: Vec<String>, counts: Vec<u64>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        let mut by_rank: Vec<TokenId> = (0..tokens.len() as TokenId).collect();
        by_rank.sort_by(|&a, &b| {
            counts[b as usize]
                .cmp(&counts[a as usize])
                .then_with(|| tokens[a as usize].cmp(&tokens[b as usize]))
        });
        let mut ranks = vec![0; tokens.len()];
        for (rank, &id) in by_rank.iter().enumerate() {
            ranks[id as usize] = rank;
        }
        Vocabulary {
            tokens,
            counts,
            index,
            ranks,
            by_rank,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Maps a token to its id, or [`OOV`] when unknown.
    pub fn lookup(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(OOV)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Number of occurrences of `id` in the training split (`C_t`).
    pub fn count(&self, id: TokenId) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rank(&self, id: TokenId) -> Option<usize> {
        self.ranks.get(id as usize).copied()
    }

    /// Frequency-rank percentile in `(0, 1]`; the most frequent token has the
    /// smallest value.
    pub fn percentile(&self, id: TokenId) -> Option<f64> {
        self.rank(id)
            .map(|r| (r + 1) as f64 / self.tokens.len() as f64)
    }

    /// Token ids sorted by descending count.
    pub fn by_frequency(&self) -> &[TokenId] {
        &self.by_rank
    }

    /// The `n` most frequent tokens.
    pub fn stop_tokens(&self, n: usize) -> HashSet<TokenId> {
        self.by_rank.iter().take(n).copied().collect()
    }

    /// The most frequent `fraction` of the vocabulary (at least one token
    /// when the vocabulary is non-empty).
    pub fn top_fraction(&self, fraction: f64) -> &[TokenId] {
        let n = ((self.tokens.len() as f64 * fraction).ceil() as usize).min(self.tokens.len());
        &self.by_rank[..n]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}
