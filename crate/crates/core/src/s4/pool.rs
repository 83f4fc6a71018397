use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::scores::{attention_scores, score_entropy, EntropyScore, PairEmbeddings, Posteriors};
use crate::corpus::{Dataset, TokenId};
use crate::error::Result;
use crate::predictor::PredictionModule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    /// Fraction of the training vocabulary, most frequent first.
    pub top_fraction: f64,
    /// Most frequent tokens treated as stop tokens.
    pub stop_tokens: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            top_fraction: 0.025,
            stop_tokens: 25,
        }
    }
}

/// Eligible tokens in frequency order: the top fraction of the training
/// vocabulary minus stop tokens and `excluded`.
pub fn candidate_pool(dataset: &Dataset, excluded: &HashSet<String>, config: &PoolConfig) -> Vec<TokenId> {
    let vocab = dataset.vocabulary();
    let stop = vocab.stop_tokens(config.stop_tokens);
    vocab
        .top_fraction(config.top_fraction)
        .iter()
        .copied()
        .filter(|t| !stop.contains(t))
        .filter(|&t| vocab.token(t).is_some_and(|s| !excluded.contains(s)))
        .filter(|&t| !dataset.postings(t).is_empty())
        .collect()
}

/// A scored `(token, label)` candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenCandidate {
    pub token: TokenId,
    pub label: usize,
    pub score: f64,
    pub count: usize,
}

/// Higher score, then higher count, then lexicographically smaller token,
/// then lower label id.
fn better(a: &TokenCandidate, b: &TokenCandidate, dataset: &Dataset) -> bool {
    let name = |t| dataset.vocabulary().token(t).unwrap_or("");
    match a.score.partial_cmp(&b.score).unwrap_or(Ordering::Equal) {
        Ordering::Greater => return true,
        Ordering::Less => return false,
        Ordering::Equal => {}
    }
    if a.count != b.count {
        return a.count > b.count;
    }
    match name(a.token).cmp(name(b.token)) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.label < b.label,
    }
}

fn best(cands: impl Iterator<Item = TokenCandidate>, dataset: &Dataset) -> Option<TokenCandidate> {
    cands.fold(None, |acc, c| match acc {
        Some(a) if !better(&c, &a, dataset) => Some(a),
        _ => Some(c),
    })
}

/// Top `(t, l)` by relative average weighted attention.
pub fn best_attention(pool: &[TokenId], q: &Posteriors, module: &PredictionModule, dataset: &Dataset) -> Option<TokenCandidate> {
    let scores = attention_scores(pool, q, module, dataset);
    let cands = pool.iter().filter_map(|t| scores.get(t).map(|s| (t, s))).flat_map(|(&t, s)| {
        (0..s.attn.len()).map(move |l| TokenCandidate {
            token: t,
            label: l,
            score: s.relative(l),
            count: s.count,
        })
    });
    best(cands, dataset)
}

/// Entropy score of every pool token with at least one scored instance.
pub fn entropy_table(pool: &[TokenId], q: &Posteriors, dataset: &Dataset) -> Vec<(TokenId, EntropyScore)> {
    pool.iter().filter_map(|&t| score_entropy(dataset.postings(t), q).ok().map(|s| (t, s))).collect()
}

/// Lowest-entropy feature, labelled with its highest average posterior.
pub fn best_low_entropy(table: &[(TokenId, EntropyScore)], dataset: &Dataset) -> Option<(TokenCandidate, EntropyScore)> {
    let c = best(
        table.iter().map(|(t, s)| TokenCandidate {
            token: *t,
            label: s.best_label,
            score: -s.entropy,
            count: s.count,
        }),
        dataset,
    )?;
    let s = table.iter().find(|(t, _)| *t == c.token).unwrap().1.clone();
    Some((TokenCandidate { score: s.score, ..c }, s))
}

/// Highest-entropy feature.
pub fn best_high_entropy(table: &[(TokenId, EntropyScore)], dataset: &Dataset) -> Option<(TokenId, EntropyScore)> {
    let c = best(
        table.iter().map(|(t, s)| TokenCandidate {
            token: *t,
            label: 0,
            score: s.entropy,
            count: s.count,
        }),
        dataset,
    )?;
    table.iter().find(|(t, _)| *t == c.token).cloned()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCandidate {
    pub a: String,
    pub b: String,
    pub sim_psi: f64,
    pub score: f64,
}

/// Up to `limit` training pairs by `S_joint`, keeping only pairs with
/// `Sim_Psi >= floor` and not in `excluded` (ordered id pairs).
pub fn best_pairs(
    module: &PredictionModule,
    dataset: &Dataset,
    excluded: &HashSet<(String, String)>,
    floor: f64,
    limit: usize,
) -> Result<Vec<PairCandidate>> {
    let train = dataset.train_indices();
    let emb = PairEmbeddings::new(module, dataset, train)?;
    let mut cands = Vec::new();
    for a in 0..train.len() {
        for b in a + 1..train.len() {
            let Some(s) = emb.score(a, b) else { continue };
            if s.sim_psi < floor {
                continue;
            }
            let (mut x, mut y) = (dataset.instance(train[a]).id.clone(), dataset.instance(train[b]).id.clone());
            if y < x {
                std::mem::swap(&mut x, &mut y);
            }
            if excluded.contains(&(x.clone(), y.clone())) {
                continue;
            }
            cands.push(PairCandidate {
                a: x,
                b: y,
                sim_psi: s.sim_psi,
                score: s.score,
            });
        }
    }
    cands.sort_by(|p, q| {
        q.score
            .partial_cmp(&p.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| (&p.a, &p.b).cmp(&(&q.a, &q.b)))
    });
    cands.truncate(limit);
    Ok(cands)
}
