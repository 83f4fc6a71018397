use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, TokenId};
use crate::error::{Error, Result};
use crate::factor_graph::{argmax, entropy, BeliefState};
use crate::predictor::{cosine, EmbedMode, PredictionModule};

/// Ceiling on `1 / Ent(b)` when the average posterior is one-hot.
pub const MAX_ENTROPY_SCORE: f64 = 1e9;

/// Posterior lookup by dataset instance index.
pub struct Posteriors<'a> {
    belief: &'a BeliefState,
    var_of: Vec<Option<usize>>,
}

impl<'a> Posteriors<'a> {
    pub fn new(belief: &'a BeliefState, dataset: &Dataset) -> Self {
        let mut var_of = vec![None; dataset.instances().len()];
        for (v, &i) in belief.instances.iter().enumerate() {
            var_of[i] = Some(v);
        }
        Posteriors { belief, var_of }
    }

    pub fn get(&self, instance: usize) -> Option<&'a [f64]> {
        self.var_of.get(instance).copied().flatten().map(|v| self.belief.marginals[v].as_slice())
    }

    pub fn num_labels(&self) -> usize {
        self.belief.marginals.first().map_or(0, Vec::len)
    }
}

/// Average weighted attention per label for one token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionScore {
    pub attn: Vec<f64>,
    /// Number of occurrences `C_t`.
    pub count: usize,
}

impl AttentionScore {
    /// `Attn(t,l) - sum_{l' != l} Attn(t,l')`.
    pub fn relative(&self, label: usize) -> f64 {
        let total: f64 = self.attn.iter().sum();
        2.0 * self.attn[label] - total
    }
}

/// `Attn(t, .)` from `(A_Psi(X_i, j), q_i)` per occurrence.
pub fn attention_from_occurrences(occurrences: &[(f64, &[f64])], num_labels: usize) -> Result<AttentionScore> {
    if occurrences.is_empty() {
        return Err(Error::Data("token has no occurrences".into()));
    }
    let mut attn = vec![0.0; num_labels];
    for (a, q) in occurrences {
        for l in 0..num_labels {
            attn[l] += a * q[l];
        }
    }
    let c = occurrences.len() as f64;
    attn.iter_mut().for_each(|x| *x /= c);
    Ok(AttentionScore {
        attn,
        count: occurrences.len(),
    })
}

/// Attention scores of every token in `tokens` over the training split, in
/// one pass. Tokens without occurrences are omitted.
pub fn attention_scores(
    tokens: &[TokenId],
    q: &Posteriors,
    module: &PredictionModule,
    dataset: &Dataset,
) -> HashMap<TokenId, AttentionScore> {
    let l = q.num_labels();
    let mut wanted: HashMap<TokenId, (Vec<f64>, usize)> = tokens.iter().map(|&t| (t, (vec![0.0; l], 0))).collect();
    let mut instances: Vec<usize> = tokens.iter().flat_map(|&t| dataset.postings(t).iter().copied()).collect();
    instances.sort_unstable();
    instances.dedup();
    for i in instances {
        let Some(qi) = q.get(i) else { continue };
        let inst = dataset.instance(i);
        let a = module.attention_weights(inst);
        for (j, t) in inst.tokens.iter().enumerate() {
            if let Some((sums, count)) = wanted.get_mut(t) {
                for y in 0..l {
                    sums[y] += a[j] * qi[y];
                }
                *count += 1;
            }
        }
    }
    wanted
        .into_iter()
        .filter(|(_, (_, c))| *c > 0)
        .map(|(t, (sums, count))| {
            let attn = sums.into_iter().map(|s| s / count as f64).collect();
            (t, AttentionScore { attn, count })
        })
        .collect()
}

/// Entropy of the average posterior over the instances where a binary
/// feature fires.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyScore {
    /// `Ent(b)` in nats.
    pub entropy: f64,
    /// `1 / Ent(b)`, capped at [`MAX_ENTROPY_SCORE`].
    pub score: f64,
    pub mean_posterior: Vec<f64>,
    pub best_label: usize,
    /// Number of matching instances `C_b`.
    pub count: usize,
}

pub fn entropy_from_posteriors(posteriors: &[&[f64]]) -> Result<EntropyScore> {
    let Some(first) = posteriors.first() else {
        return Err(Error::Data("feature matches no instances".into()));
    };
    let mut mean = vec![0.0; first.len()];
    for p in posteriors {
        for (m, x) in mean.iter_mut().zip(p.iter()) {
            *m += x;
        }
    }
    let c = posteriors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= c);
    let ent = entropy(&mean).max(0.0);
    Ok(EntropyScore {
        entropy: ent,
        score: if ent > 0.0 { (1.0 / ent).min(MAX_ENTROPY_SCORE) } else { MAX_ENTROPY_SCORE },
        best_label: argmax(&mean),
        mean_posterior: mean,
        count: posteriors.len(),
    })
}

/// `Ent(b)` for a feature given the training instances where it fires.
pub fn score_entropy(instances: &[usize], q: &Posteriors) -> Result<EntropyScore> {
    let ps: Vec<&[f64]> = instances.iter().filter_map(|&i| q.get(i)).collect();
    entropy_from_posteriors(&ps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointScore {
    pub sim_psi: f64,
    pub sim_pretrained: f64,
    pub score: f64,
}

/// Cached document embeddings for pair scoring.
pub struct PairEmbeddings {
    current: Vec<Option<Vec<f64>>>,
    pretrained: Vec<Option<Vec<f64>>>,
}

impl PairEmbeddings {
    /// Embeds the given instances; all-OOV instances are marked unusable.
    pub fn new(module: &PredictionModule, dataset: &Dataset, instances: &[usize]) -> Result<Self> {
        let mut current = Vec::with_capacity(instances.len());
        let mut pretrained = Vec::with_capacity(instances.len());
        for &i in instances {
            let inst = dataset.instance(i);
            let (c, flagged) = module.embed(inst, EmbedMode::CurrentPooled)?;
            let (p, _) = module.embed(inst, EmbedMode::PretrainedMean)?;
            current.push((!flagged).then_some(c));
            pretrained.push((!flagged).then_some(p));
        }
        Ok(PairEmbeddings { current, pretrained })
    }

    /// `Sim_Psi - Sim_pretrained` for positions `a`, `b`; `None` when either
    /// embedding is zero.
    pub fn score(&self, a: usize, b: usize) -> Option<JointScore> {
        let sim_psi = cosine(self.current[a].as_ref()?, self.current[b].as_ref()?)?;
        let sim_pretrained = cosine(self.pretrained[a].as_ref()?, self.pretrained[b].as_ref()?)?;
        Some(JointScore {
            sim_psi,
            sim_pretrained,
            score: sim_psi - sim_pretrained,
        })
    }
}

/// `S_joint` of two instances.
pub fn score_joint(module: &PredictionModule, dataset: &Dataset, i: usize, j: usize) -> Result<Option<JointScore>> {
    Ok(PairEmbeddings::new(module, dataset, &[i, j])?.score(0, 1))
}

/// Fraction of instances whose argmax label differs.
pub fn argmax_flip_fraction(prev: &BeliefState, cur: &BeliefState) -> Result<f64> {
    if prev.instances != cur.instances {
        return Err(Error::MismatchedBeliefs);
    }
    if cur.instances.is_empty() {
        return Ok(0.0);
    }
    let flips = prev
        .marginals
        .iter()
        .zip(&cur.marginals)
        .filter(|(a, b)| argmax(a) != argmax(b))
        .count();
    Ok(flips as f64 / cur.instances.len() as f64)
}

/// True iff fewer than `threshold` of the instances changed argmax label.
pub fn sst_converged(prev: &BeliefState, cur: &BeliefState, threshold: f64) -> Result<bool> {
    Ok(argmax_flip_fraction(prev, cur)? < threshold)
}
