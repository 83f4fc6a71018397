use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::vocab::TokenId;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Tokens kept per label.
    pub k: usize,
    /// Number of most frequent training tokens excluded from the lists.
    #[serde(default = "default_stop_tokens")]
    pub stop_tokens: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_search_steps")]
    pub search_steps: usize,
}

fn default_stop_tokens() -> usize {
    25
}
fn default_max_iter() -> usize {
    400
}
fn default_search_steps() -> usize {
    30
}

impl OracleConfig {
    pub fn new(k: usize) -> Self {
        OracleConfig {
            k,
            stop_tokens: default_stop_tokens(),
            max_iter: default_max_iter(),
            search_steps: default_search_steps(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredToken {
    pub token: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRules {
    pub label: String,
    pub tokens: Vec<ScoredToken>,
}

/// Simulated expert: the top-k tokens per label of an L1-regularized
/// unigram model fit on gold labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRuleSet {
    pub k: usize,
    pub penalty: f64,
    pub rules: Vec<LabelRules>,
    /// Instance-id pairs a reviewer would accept as same-label joint factors.
    #[serde(default)]
    pub accept_pairs: Option<Vec<(String, String)>>,
}

impl OracleRuleSet {
    pub fn tokens_for(&self, label: &str) -> Option<&[ScoredToken]> {
        self.rules
            .iter()
            .find(|r| r.label == label)
            .map(|r| r.tokens.as_slice())
    }

    pub fn accepts(&self, token: &str, label: &str) -> bool {
        self.tokens_for(label)
            .is_some_and(|ts| ts.iter().any(|t| t.token == token))
    }

    /// Label whose list contains `token`, if any (first in label order).
    pub fn label_for(&self, token: &str) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| r.tokens.iter().any(|t| t.token == token))
            .map(|r| r.label.as_str())
    }
}

/// Sparse binary bag-of-words design over labelled training instances.
struct Design {
    rows: Vec<Vec<TokenId>>,
    labels: Vec<usize>,
    n_features: usize,
    n_labels: usize,
}

impl Design {
    fn from_dataset(ds: &Dataset) -> Result<Self> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for &i in ds.train_indices() {
            let inst = ds.instance(i);
            let label = inst.gold_label.ok_or_else(|| {
                Error::Data(format!("training instance `{}` has no gold label", inst.id))
            })?;
            let mut toks = inst.tokens.clone();
            toks.sort_unstable();
            toks.dedup();
            rows.push(toks);
            labels.push(label);
        }
        let present: HashSet<usize> = labels.iter().copied().collect();
        if present.len() < 2 {
            return Err(Error::Data(
                "oracle needs at least two classes among training labels".into(),
            ));
        }
        Ok(Design {
            rows,
            labels,
            n_features: ds.vocabulary().len(),
            n_labels: ds.num_labels(),
        })
    }

    /// Largest eigenvalue of `[X 1]^T [X 1] / N` by power iteration.
    fn spectral_bound(&self) -> f64 {
        let n = self.rows.len() as f64;
        let mut v = vec![1.0; self.n_features + 1];
        let mut lambda = 1.0;
        for _ in 0..50 {
            let mut out = vec![0.0; v.len()];
            for row in &self.rows {
                let dot: f64 = row.iter().map(|&t| v[t as usize]).sum::<f64>() + v[self.n_features];
                for &t in row {
                    out[t as usize] += dot / n;
                }
                out[self.n_features] += dot / n;
            }
            let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            lambda = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = out.iter().map(|x| x / norm).collect();
        }
        lambda
    }

    /// Gradient of the mean cross-entropy at `(w, b)`; `w` is label-major.
    fn gradient(&self, w: &[f64], b: &[f64], gw: &mut [f64], gb: &mut [f64]) {
        gw.iter_mut().for_each(|g| *g = 0.0);
        gb.iter_mut().for_each(|g| *g = 0.0);
        let n = self.rows.len() as f64;
        let nf = self.n_features;
        let mut logits = vec![0.0; self.n_labels];
        for (row, &y) in self.rows.iter().zip(&self.labels) {
            for (l, z) in logits.iter_mut().enumerate() {
                *z = b[l] + row.iter().map(|&t| w[l * nf + t as usize]).sum::<f64>();
            }
            softmax_in_place(&mut logits);
            for l in 0..self.n_labels {
                let d = (logits[l] - f64::from(u8::from(l == y))) / n;
                gb[l] += d;
                for &t in row {
                    gw[l * nf + t as usize] += d;
                }
            }
        }
    }

    /// FISTA on `mean CE + penalty * |w|_1`, bias unpenalized. Warm-starts
    /// from `w`, `b`.
    fn fit(&self, penalty: f64, step: f64, max_iter: usize, w: &mut Vec<f64>, b: &mut Vec<f64>) {
        let mut yw = w.clone();
        let mut yb = b.clone();
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; b.len()];
        let mut t = 1.0f64;
        for _ in 0..max_iter {
            self.gradient(&yw, &yb, &mut gw, &mut gb);
            let mut next_w = vec![0.0; w.len()];
            for j in 0..w.len() {
                next_w[j] = soft_threshold(yw[j] - step * gw[j], step * penalty);
            }
            let next_b: Vec<f64> = yb.iter().zip(&gb).map(|(y, g)| y - step * g).collect();
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let momentum = (t - 1.0) / t_next;
            let mut change = 0.0f64;
            for j in 0..w.len() {
                change = change.max((next_w[j] - w[j]).abs());
                yw[j] = next_w[j] + momentum * (next_w[j] - w[j]);
            }
            for l in 0..b.len() {
                change = change.max((next_b[l] - b[l]).abs());
                yb[l] = next_b[l] + momentum * (next_b[l] - b[l]);
            }
            *w = next_w;
            *b = next_b;
            t = t_next;
            if change < 1e-9 {
                break;
            }
        }
    }

    fn support(&self, w: &[f64]) -> (usize, usize) {
        let nf = self.n_features;
        let counts: Vec<usize> = (0..self.n_labels)
            .map(|l| w[l * nf..(l + 1) * nf].iter().filter(|x| **x != 0.0).count())
            .collect();
        (
            *counts.iter().min().unwrap_or(&0),
            *counts.iter().max().unwrap_or(&0),
        )
    }

    /// Smallest penalty that zeroes every weight.
    fn zero_penalty(&self) -> f64 {
        let n = self.rows.len() as f64;
        let mut prior = vec![0.0; self.n_labels];
        for &y in &self.labels {
            prior[y] += 1.0 / n;
        }
        let mut g = vec![0.0; self.n_labels * self.n_features];
        for (row, &y) in self.rows.iter().zip(&self.labels) {
            for l in 0..self.n_labels {
                let d = (prior[l] - f64::from(u8::from(l == y))) / n;
                for &t in row {
                    g[l * self.n_features + t as usize] += d;
                }
            }
        }
        g.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// Fits an L1-regularized multinomial unigram model on the gold training
/// labels and keeps the `k` highest positive-weight tokens per label.
///
/// The penalty is bisected on a log scale until every label has between
/// `2k` and `8k` nonzero weights (or the search budget runs out).
pub fn generate_oracle(dataset: &Dataset, config: &OracleConfig) -> Result<OracleRuleSet> {
    if config.k == 0 {
        return Err(Error::Config("oracle k must be at least 1".into()));
    }
    let design = Design::from_dataset(dataset)?;
    let nf = design.n_features;
    let step = 1.0 / design.spectral_bound().max(1e-12);
    let lo_target = 2 * config.k;
    let hi_target = 8 * config.k;

    let top = design.zero_penalty().max(1e-12);
    let (mut lo, mut hi) = ((top * 1e-5).ln(), top.ln());
    let mut w = vec![0.0; design.n_labels * nf];
    let mut b = vec![0.0; design.n_labels];
    let mut penalty = top;
    for _ in 0..config.search_steps.max(1) {
        penalty = ((lo + hi) / 2.0).exp();
        design.fit(penalty, step, config.max_iter, &mut w, &mut b);
        let (min_s, max_s) = design.support(&w);
        if min_s < lo_target && max_s <= hi_target {
            hi = penalty.ln();
        } else if max_s > hi_target && min_s >= lo_target {
            lo = penalty.ln();
        } else {
            break;
        }
    }

    let stop = dataset.vocabulary().stop_tokens(config.stop_tokens);
    let vocab = dataset.vocabulary();
    let rules = (0..design.n_labels)
        .map(|l| {
            let mut scored: Vec<ScoredToken> = (0..nf)
                .filter(|&t| w[l * nf + t] > 0.0 && !stop.contains(&(t as TokenId)))
                .map(|t| ScoredToken {
                    token: vocab.token(t as TokenId).unwrap_or_default().to_string(),
                    score: w[l * nf + t],
                })
                .collect();
            scored.sort_by(|a, b| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.token.cmp(&b.token))
            });
            scored.truncate(config.k);
            LabelRules {
                label: dataset.label_set()[l].clone(),
                tokens: scored,
            }
        })
        .collect();
    Ok(OracleRuleSet {
        k: config.k,
        penalty,
        rules,
        accept_pairs: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dataset::{DatasetSchema, Record, Split};

    fn records(docs: &[(&str, &str)]) -> Vec<Record> {
        docs.iter()
            .enumerate()
            .map(|(i, (text, label))| Record {
                id: format!("d{i}"),
                text: text.to_string(),
                label: Some(label.to_string()),
                tuple: None,
                split: Split::Train,
            })
            .collect()
    }

    #[test]
    fn single_class_is_degenerate() {
        let ds = Dataset::from_records(
            records(&[("a b", "pos"), ("b c", "pos")]),
            &DatasetSchema::with_labels(["neg", "pos"]),
        )
        .unwrap();
        assert!(matches!(generate_oracle(&ds, &OracleConfig::new(2)), Err(Error::Data(_))));
    }

    #[test]
    fn k_beyond_support_returns_shorter_list() {
        let ds = Dataset::from_records(
            records(&[("a x", "pos"), ("a y", "pos"), ("b x", "neg"), ("b y", "neg")]),
            &DatasetSchema::with_labels(["neg", "pos"]),
        )
        .unwrap();
        let mut cfg = OracleConfig::new(50);
        cfg.stop_tokens = 0;
        let oracle = generate_oracle(&ds, &cfg).unwrap();
        let pos = oracle.tokens_for("pos").unwrap();
        assert!(!pos.is_empty() && pos.len() < 50);
        assert_eq!(pos[0].token, "a");
        assert_eq!(oracle.tokens_for("neg").unwrap()[0].token, "b");
        assert!(oracle.accepts("a", "pos"));
        assert!(!oracle.accepts("a", "neg"));
    }

    #[test]
    fn deterministic() {
        let ds = Dataset::from_records(
            records(&[("a x q", "pos"), ("a y", "pos"), ("b x", "neg"), ("b y q", "neg")]),
            &DatasetSchema::with_labels(["neg", "pos"]),
        )
        .unwrap();
        let mut cfg = OracleConfig::new(2);
        cfg.stop_tokens = 0;
        assert_eq!(generate_oracle(&ds, &cfg).unwrap(), generate_oracle(&ds, &cfg).unwrap());
    }
}
