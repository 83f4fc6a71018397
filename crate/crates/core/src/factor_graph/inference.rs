use serde::{Deserialize, Serialize};

use super::graph::{indicator_log, FactorGraph, FactorKind};
use crate::corpus::LabelId;
use crate::error::{Error, Result};

/// How at-least-one factors read the state of their neighbours.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtLeastOneMode {
    /// Standard sum-product: cavity beliefs (all other messages).
    #[default]
    Exact,
    /// Noisy-or renormalization of the full current marginals.
    NoisyOrMarginals,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BpConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub damping: f64,
    #[serde(default)]
    pub at_least_one_mode: AtLeastOneMode,
}

impl Default for BpConfig {
    fn default() -> Self {
        BpConfig {
            max_iters: 50,
            tol: 1e-6,
            damping: 0.5,
            at_least_one_mode: AtLeastOneMode::Exact,
        }
    }
}

impl BpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("bp tol must be positive, got {}", self.tol)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!("bp damping {} outside [0, 1)", self.damping)));
        }
        Ok(())
    }
}

/// Sum and count of a template's per-grounding expected formula value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub sum: f64,
    pub count: usize,
}

impl Expectation {
    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    /// Dataset instance index of each variable.
    pub instances: Vec<usize>,
    pub marginals: Vec<Vec<f64>>,
    /// Indexed by template id; `None` for templates without groundings.
    pub expectations: Vec<Option<Expectation>>,
    pub iterations: usize,
    pub max_residual: f64,
    pub converged: bool,
}

impl BeliefState {
    /// Mean expected formula value of a template.
    pub fn expectation(&self, template: usize) -> Option<f64> {
        self.expectations.get(template).copied().flatten().map(|e| e.mean())
    }

    /// Argmax label per variable, ties toward the lower label id.
    pub fn argmax_labels(&self) -> Vec<LabelId> {
        self.marginals.iter().map(|m| argmax(m)).collect()
    }

    /// Mean Shannon entropy (nats) of the marginals.
    pub fn mean_entropy(&self) -> f64 {
        if self.marginals.is_empty() {
            return 0.0;
        }
        self.marginals.iter().map(|m| entropy(m)).sum::<f64>() / self.marginals.len() as f64
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn log_normalize(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
    let z = m + s.ln();
    for x in v.iter_mut() {
        *x -= z;
    }
}

/// Message buffers indexed by `(factor, slot)`, each a normalized
/// log-distribution over labels.
struct Messages {
    offsets: Vec<usize>,
    labels: usize,
    data: Vec<f64>,
}

impl Messages {
    fn new(graph: &FactorGraph) -> Self {
        let mut offsets = Vec::with_capacity(graph.factors().len());
        let mut total = 0;
        for f in graph.factors() {
            offsets.push(total);
            total += f.scope.len();
        }
        let l = graph.num_labels();
        Messages {
            offsets,
            labels: l,
            data: vec![-(l as f64).ln(); total * l],
        }
    }

    fn range(&self, factor: usize, slot: usize) -> std::ops::Range<usize> {
        let start = (self.offsets[factor] + slot) * self.labels;
        start..start + self.labels
    }

    fn get(&self, factor: usize, slot: usize) -> &[f64] {
        let r = self.range(factor, slot);
        &self.data[r]
    }

    fn get_mut(&mut self, factor: usize, slot: usize) -> &mut [f64] {
        let r = self.range(factor, slot);
        &mut self.data[r]
    }
}

/// Outgoing at-least-one messages (log-domain, normalized) given each
/// neighbour's probability of taking `label`. Runs in O(n) via prefix and
/// suffix products of the "not label" masses.
pub fn at_least_one_messages(weight: f64, label: LabelId, num_labels: usize, p_label: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = p_label.len();
    if n == 0 {
        return Err(Error::EmptyTuple);
    }
    let not: Vec<f64> = p_label.iter().map(|p| (1.0 - p).max(0.0)).collect();
    let mut prefix = vec![1.0; n + 1];
    for k in 0..n {
        prefix[k + 1] = prefix[k] * not[k];
    }
    let mut suffix = vec![1.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] * not[k];
    }
    // mu(label) = e^W and mu(other) = e^W (1 - P) + P; divide through by e^W.
    let decay = 1.0 - (-weight).exp();
    Ok((0..n)
        .map(|k| {
            let rest_not = prefix[k] * suffix[k + 1];
            let other = (1.0 - rest_not * decay).ln();
            let mut m: Vec<f64> = (0..num_labels).map(|y| if y == label { 0.0 } else { other }).collect();
            log_normalize(&mut m);
            m
        })
        .collect())
}

fn equal_expectation(weight: f64, same: f64) -> f64 {
    if weight >= 0.0 {
        same / (same + (1.0 - same) * (-weight).exp())
    } else {
        let e = weight.exp() * same;
        e / (e + 1.0 - same)
    }
}

fn at_least_one_expectation(weight: f64, none: f64) -> f64 {
    let some = 1.0 - none;
    if weight >= 0.0 {
        some / (some + none * (-weight).exp())
    } else {
        let e = weight.exp() * some;
        e / (e + none)
    }
}

/// Loopy sum-product on a synchronous flooding schedule with damping.
/// Non-convergence is reported in the diagnostics, not as an error.
pub fn run_bp(graph: &FactorGraph, config: &BpConfig) -> Result<BeliefState> {
    run(graph, config, true)
}

/// Per-template expectations under the supervision factors alone
/// (predictor factors ignored).
pub fn supervision_only_expectations(graph: &FactorGraph, config: &BpConfig) -> Result<Vec<Option<Expectation>>> {
    Ok(run(graph, config, false)?.expectations)
}

/// Marginals under the supervision factors alone.
pub fn supervision_only_beliefs(graph: &FactorGraph, config: &BpConfig) -> Result<BeliefState> {
    run(graph, config, false)
}

fn run(graph: &FactorGraph, config: &BpConfig, with_predictor: bool) -> Result<BeliefState> {
    config.validate()?;
    let l = graph.num_labels();
    let n_vars = graph.num_variables();
    let factors = graph.factors();
    let active = |a: usize| with_predictor || !factors[a].is_predictor();

    let mut f2v = Messages::new(graph);
    let mut v2f = Messages::new(graph);
    let mut dynamic = Vec::new();
    for (a, f) in factors.iter().enumerate() {
        match &f.kind {
            FactorKind::Unary { label } => {
                let m = f2v.get_mut(a, 0);
                for (y, x) in m.iter_mut().enumerate() {
                    *x = indicator_log(f.weight, y == *label);
                }
                log_normalize(m);
            }
            FactorKind::Fixed { log_potential } => {
                let m = f2v.get_mut(a, 0);
                if active(a) {
                    m.copy_from_slice(log_potential);
                    log_normalize(m);
                }
            }
            FactorKind::AtLeastOne { .. } if f.scope.is_empty() => return Err(Error::EmptyTuple),
            _ => dynamic.push(a),
        }
    }

    let mut beliefs = vec![vec![0.0; l]; n_vars];
    // Cavities are built from prefix/suffix sums rather than by subtracting
    // from the belief, so -inf entries from hard factors never meet.
    let update_beliefs = |f2v: &Messages, v2f: &mut Messages, beliefs: &mut Vec<Vec<f64>>| {
        let mut prefix: Vec<f64> = Vec::new();
        let mut suffix: Vec<f64> = Vec::new();
        for (v, b) in beliefs.iter_mut().enumerate() {
            let nb = graph.neighbors(v);
            let d = nb.len();
            prefix.clear();
            prefix.resize((d + 1) * l, 0.0);
            suffix.clear();
            suffix.resize((d + 1) * l, 0.0);
            for (k, &(a, slot)) in nb.iter().enumerate() {
                let msg = f2v.get(a, slot);
                for y in 0..l {
                    let add = if active(a) { msg[y] } else { 0.0 };
                    prefix[(k + 1) * l + y] = prefix[k * l + y] + add;
                }
            }
            for (k, &(a, slot)) in nb.iter().enumerate().rev() {
                let msg = f2v.get(a, slot);
                for y in 0..l {
                    let add = if active(a) { msg[y] } else { 0.0 };
                    suffix[k * l + y] = suffix[(k + 1) * l + y] + add;
                }
            }
            b.copy_from_slice(&prefix[d * l..(d + 1) * l]);
            log_normalize(b);
            for (k, &(a, slot)) in nb.iter().enumerate() {
                let out = v2f.get_mut(a, slot);
                for y in 0..l {
                    out[y] = prefix[k * l + y] + suffix[(k + 1) * l + y];
                }
                log_normalize(out);
            }
        }
    };
    update_beliefs(&f2v, &mut v2f, &mut beliefs);

    let mut iterations = 0;
    let mut max_residual = 0.0f64;
    let mut converged = dynamic.is_empty();
    let mut fresh: Vec<f64> = Vec::new();
    while !converged && iterations < config.max_iters {
        iterations += 1;
        max_residual = 0.0;
        let mut next = Vec::with_capacity(dynamic.len());
        for &a in &dynamic {
            let f = &factors[a];
            fresh.clear();
            match &f.kind {
                FactorKind::Equal => {
                    for slot in 0..2 {
                        let other: Vec<f64> = v2f.get(a, 1 - slot).iter().map(|x| x.exp()).collect();
                        let scale = f.weight.exp() - 1.0;
                        let start = fresh.len();
                        if f.weight == f64::INFINITY {
                            fresh.extend(other.iter().map(|p| p.ln()));
                        } else {
                            fresh.extend(other.iter().map(|p| (1.0 + scale * p).ln()));
                        }
                        log_normalize(&mut fresh[start..]);
                    }
                }
                FactorKind::AtLeastOne { label } => {
                    let p: Vec<f64> = f
                        .scope
                        .iter()
                        .enumerate()
                        .map(|(slot, &v)| match config.at_least_one_mode {
                            AtLeastOneMode::Exact => v2f.get(a, slot)[*label].exp(),
                            AtLeastOneMode::NoisyOrMarginals => beliefs[v][*label].exp(),
                        })
                        .collect();
                    for m in at_least_one_messages(f.weight, *label, l, &p)? {
                        fresh.extend(m);
                    }
                }
                FactorKind::Unary { .. } | FactorKind::Fixed { .. } => unreachable!(),
            }
            next.push(fresh.clone());
        }
        for (&a, new) in dynamic.iter().zip(next) {
            for slot in 0..factors[a].scope.len() {
                let old = f2v.get_mut(a, slot);
                let computed = &new[slot * l..(slot + 1) * l];
                for y in 0..l {
                    max_residual = max_residual.max((computed[y].exp() - old[y].exp()).abs());
                    old[y] = (1.0 - config.damping) * computed[y] + config.damping * old[y];
                }
                log_normalize(old);
            }
        }
        update_beliefs(&f2v, &mut v2f, &mut beliefs);
        converged = max_residual < config.tol;
    }

    let mut expectations: Vec<Option<Expectation>> = vec![None; graph.num_templates()];
    for (a, f) in factors.iter().enumerate() {
        let Some(t) = f.template else { continue };
        let value = match &f.kind {
            FactorKind::Unary { label } => beliefs[f.scope[0]][*label].exp(),
            FactorKind::Equal => {
                let same: f64 = v2f
                    .get(a, 0)
                    .iter()
                    .zip(v2f.get(a, 1))
                    .map(|(x, y)| (x + y).exp())
                    .sum();
                equal_expectation(f.weight, same.min(1.0))
            }
            FactorKind::AtLeastOne { label } => {
                let none: f64 = (0..f.scope.len())
                    .map(|slot| 1.0 - v2f.get(a, slot)[*label].exp())
                    .product();
                at_least_one_expectation(f.weight, none.clamp(0.0, 1.0))
            }
            FactorKind::Fixed { .. } => continue,
        };
        let e = expectations[t].get_or_insert(Expectation { sum: 0.0, count: 0 });
        e.sum += value;
        e.count += 1;
    }

    Ok(BeliefState {
        instances: graph.instances().to_vec(),
        marginals: beliefs
            .into_iter()
            .map(|b| b.into_iter().map(f64::exp).collect())
            .collect(),
        expectations,
        iterations,
        max_residual,
        converged,
    })
}

/// Largest joint assignment count [`enumerate_exact`] accepts.
pub const ENUMERATION_LIMIT: usize = 1 << 20;

/// Exact marginals and expectations by summing over every assignment.
pub fn enumerate_exact(graph: &FactorGraph) -> Result<BeliefState> {
    let l = graph.num_labels();
    let n = graph.num_variables();
    let total = (l as f64).powi(n as i32);
    if total > ENUMERATION_LIMIT as f64 {
        return Err(Error::GraphTooLarge {
            assignments: total,
            limit: ENUMERATION_LIMIT,
        });
    }
    let total = total as usize;
    let mut scores = Vec::with_capacity(total);
    let mut assignment = vec![0usize; n];
    for _ in 0..total {
        scores.push(graph.log_score(&assignment));
        increment(&mut assignment, l);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();

    let mut marginals = vec![vec![0.0; l]; n];
    let mut sums = vec![0.0; graph.num_templates()];
    let counts = graph.grounding_counts();
    let mut buf = Vec::new();
    assignment.iter_mut().for_each(|x| *x = 0);
    for s in &scores {
        let p = (s - max).exp() / z;
        for (v, &y) in assignment.iter().enumerate() {
            marginals[v][y] += p;
        }
        for f in graph.factors() {
            let Some(t) = f.template else { continue };
            buf.clear();
            buf.extend(f.scope.iter().map(|&v| assignment[v]));
            if f.kind.eval(&buf) == Some(true) {
                sums[t] += p;
            }
        }
        increment(&mut assignment, l);
    }
    let expectations = sums
        .into_iter()
        .zip(counts)
        .map(|(sum, count)| (count > 0).then_some(Expectation { sum, count }))
        .collect();
    Ok(BeliefState {
        instances: graph.instances().to_vec(),
        marginals,
        expectations,
        iterations: 0,
        max_residual: 0.0,
        converged: true,
    })
}

fn increment(assignment: &mut [usize], l: usize) {
    for x in assignment.iter_mut() {
        *x += 1;
        if *x < l {
            return;
        }
        *x = 0;
    }
}

/// Exact `ln Z` by enumeration, under the same size limit as
/// [`enumerate_exact`].
pub fn log_partition(graph: &FactorGraph) -> Result<f64> {
    let l = graph.num_labels();
    let n = graph.num_variables();
    let total = (l as f64).powi(n as i32);
    if total > ENUMERATION_LIMIT as f64 {
        return Err(Error::GraphTooLarge {
            assignments: total,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut assignment = vec![0usize; n];
    let scores: Vec<f64> = (0..total as usize)
        .map(|_| {
            let s = graph.log_score(&assignment);
            increment(&mut assignment, l);
            s
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln())
}
