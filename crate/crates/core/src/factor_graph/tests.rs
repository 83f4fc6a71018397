use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::evidence::W_HARD;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn tight() -> BpConfig {
    BpConfig {
        max_iters: 1000,
        tol: 1e-14,
        ..BpConfig::default()
    }
}

fn graph(n: usize, labels: usize) -> FactorGraph {
    FactorGraph::new(labels, (0..n).collect())
}

#[test]
fn single_unary() {
    let mut g = graph(1, 2);
    g.add_factor(FactorKind::Unary { label: 1 }, vec![0], 2.2, Some(0));
    let bp = run_bp(&g, &BpConfig::default()).unwrap();
    let ex = enumerate_exact(&g).unwrap();
    assert!((bp.marginals[0][1] - sigmoid(2.2)).abs() < 1e-12);
    assert!((ex.marginals[0][1] - 0.9002495108803148).abs() < 1e-12);
    assert!((bp.expectation(0).unwrap() - sigmoid(2.2)).abs() < 1e-12);
}

#[test]
fn unary_plus_equality_chain() {
    let mut g = graph(2, 2);
    g.add_factor(FactorKind::Unary { label: 1 }, vec![0], 2.2, Some(0));
    g.add_factor(FactorKind::Equal, vec![0, 1], 1.0, Some(1));
    let e = std::f64::consts::E;
    let expected = (1.0 + 3.2f64.exp()) / (1.0 + e + 2.2f64.exp() + 3.2f64.exp());
    assert!((expected - 0.6850).abs() < 1e-4);
    let ex = enumerate_exact(&g).unwrap();
    assert!((ex.marginals[1][1] - expected).abs() < 1e-12);
    let bp = run_bp(&g, &tight()).unwrap();
    assert!(bp.converged);
    assert!((bp.marginals[1][1] - expected).abs() < 1e-10);
    assert!((bp.expectation(1).unwrap() - ex.expectation(1).unwrap()).abs() < 1e-10);
}

#[test]
fn conflicting_unaries_cancel() {
    let mut g = graph(1, 2);
    g.add_factor(FactorKind::Unary { label: 0 }, vec![0], 2.2, Some(0));
    g.add_factor(FactorKind::Unary { label: 1 }, vec![0], 2.2, Some(1));
    let bp = run_bp(&g, &BpConfig::default()).unwrap();
    assert!((bp.marginals[0][0] - 0.5).abs() < 1e-12);
}

#[test]
fn hard_at_least_one_over_three() {
    let mut g = graph(3, 2);
    g.add_factor(FactorKind::AtLeastOne { label: 1 }, vec![0, 1, 2], f64::INFINITY, Some(0));
    let ex = enumerate_exact(&g).unwrap();
    let bp = run_bp(&g, &tight()).unwrap();
    for v in 0..3 {
        assert!((ex.marginals[v][1] - 4.0 / 7.0).abs() < 1e-12);
        assert!((bp.marginals[v][1] - 4.0 / 7.0).abs() < 1e-12);
    }
    assert!((bp.expectation(0).unwrap() - 1.0).abs() < 1e-12);

    // The soft stand-in differs from the hard value by O(e^-10).
    let mut soft = graph(3, 2);
    soft.add_factor(FactorKind::AtLeastOne { label: 1 }, vec![0, 1, 2], W_HARD, Some(0));
    let bp = run_bp(&soft, &tight()).unwrap();
    assert!((bp.marginals[0][1] - 4.0 / 7.0).abs() < 1e-5);
}

#[test]
fn at_least_one_message_cases() {
    let m = at_least_one_messages(3.0, 1, 2, &[0.4]).unwrap();
    assert!(((m[0][1] - m[0][0]) - 3.0).abs() < 1e-12);

    let m = at_least_one_messages(W_HARD, 1, 2, &[1.0, 0.3, 0.5]).unwrap();
    for msg in &m[1..] {
        assert!((msg[0] - msg[1]).abs() < 1e-12);
    }
    assert!(matches!(at_least_one_messages(1.0, 1, 2, &[]), Err(crate::Error::EmptyTuple)));
}

#[test]
fn predictor_only_graph_returns_predictor() {
    let mut g = graph(3, 3);
    let dists = vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.2, 0.2], vec![1.0 / 3.0; 3]];
    g.attach_predictor(&dists);
    assert_eq!(g.factors().len(), 3);
    let bp = run_bp(&g, &BpConfig::default()).unwrap();
    let ex = enumerate_exact(&g).unwrap();
    for v in 0..3 {
        for y in 0..3 {
            assert!((bp.marginals[v][y] - dists[v][y]).abs() < 1e-15);
            assert!((ex.marginals[v][y] - dists[v][y]).abs() < 1e-12);
        }
    }
}

#[test]
fn supervision_only_ignores_predictor() {
    let mut g = graph(2, 2);
    g.add_factor(FactorKind::Unary { label: 1 }, vec![0], 2.2, Some(0));
    g.add_factor(FactorKind::Unary { label: 1 }, vec![1], 0.0, Some(1));
    g.add_factor(FactorKind::Unary { label: 1 }, vec![1], 0.0, Some(3));
    g.attach_predictor(&[vec![0.99, 0.01], vec![0.5, 0.5]]);
    let e = supervision_only_expectations(&g, &BpConfig::default()).unwrap();
    assert!((e[0].unwrap().mean() - 0.9002495108803148).abs() < 1e-12);
    assert!((e[1].unwrap().mean() - 0.5).abs() < 1e-12);
    assert!(e[2].is_none());
    let full = run_bp(&g, &BpConfig::default()).unwrap();
    assert!(full.expectation(0).unwrap() < 0.5);
}

#[test]
fn enumeration_rejects_large_graphs() {
    let g = graph(21, 2);
    assert!(matches!(enumerate_exact(&g), Err(crate::Error::GraphTooLarge { .. })));
}

#[test]
fn bad_config_rejected() {
    let g = graph(1, 2);
    let mut c = BpConfig::default();
    c.damping = 1.0;
    assert!(run_bp(&g, &c).is_err());
    c.damping = 0.0;
    c.tol = 0.0;
    assert!(run_bp(&g, &c).is_err());
}

#[test]
fn tied_weight_update_touches_only_its_groundings() {
    let mut g = graph(3, 2);
    g.add_factor(FactorKind::Unary { label: 1 }, vec![0], 2.2, Some(0));
    g.add_factor(FactorKind::Unary { label: 1 }, vec![1], 2.2, Some(0));
    g.add_factor(FactorKind::Unary { label: 0 }, vec![2], 2.2, Some(1));
    g.set_template_weights(&[0.5, 2.2]);
    assert_eq!(g.factors()[0].log_potential(&[1]), 0.5);
    assert_eq!(g.factors()[1].log_potential(&[1]), 0.5);
    assert_eq!(g.factors()[2].log_potential(&[0]), 2.2);
}

/// Random factor forest: joint factors only ever connect variables from
/// different components, so the factor graph stays acyclic.
pub(crate) fn random_tree(seed: u64) -> FactorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = rng.random_range(2..=3);
    let max_vars = if labels == 2 { 12 } else { 7 };
    let n = rng.random_range(1..=max_vars);
    let mut g = FactorGraph::new(labels, (0..n).collect());
    let mut comp: Vec<usize> = (0..n).collect();
    let find = |comp: &mut Vec<usize>, mut x: usize| {
        while comp[x] != x {
            comp[x] = comp[comp[x]];
            x = comp[x];
        }
        x
    };
    let mut template = 0;
    for _ in 0..rng.random_range(n..=3 * n) {
        let w = rng.random_range(-3.0..3.0);
        match rng.random_range(0..4) {
            0 => {
                let v = rng.random_range(0..n);
                g.add_factor(FactorKind::Unary { label: rng.random_range(0..labels) }, vec![v], w, Some(template));
            }
            1 if n >= 2 => {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                let (ra, rb) = (find(&mut comp, a), find(&mut comp, b));
                if ra == rb {
                    continue;
                }
                comp[ra] = rb;
                g.add_factor(FactorKind::Equal, vec![a, b], w, Some(template));
            }
            2 => {
                let size = rng.random_range(1..=n.min(4));
                let mut scope = Vec::new();
                let mut roots = Vec::new();
                for _ in 0..size * 3 {
                    let v = rng.random_range(0..n);
                    let r = find(&mut comp, v);
                    if !roots.contains(&r) {
                        roots.push(r);
                        scope.push(v);
                    }
                    if scope.len() == size {
                        break;
                    }
                }
                for r in &roots[1..] {
                    comp[*r] = roots[0];
                }
                let w = rng.random_range(0.0..6.0);
                g.add_factor(FactorKind::AtLeastOne { label: rng.random_range(0..labels) }, scope, w, Some(template));
            }
            _ => {
                let v = rng.random_range(0..n);
                let raw: Vec<f64> = (0..labels).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                let d: Vec<f64> = raw.iter().map(|x| x / s).collect();
                g.add_factor(FactorKind::Fixed { log_potential: d.iter().map(|p| p.ln()).collect() }, vec![v], 0.0, None);
                continue;
            }
        }
        template += 1;
    }
    g
}

/// Random graph with cycles: equality factors between arbitrary pairs.
fn random_loopy(seed: u64) -> FactorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=8);
    let mut g = FactorGraph::new(2, (0..n).collect());
    for v in 0..n {
        g.add_factor(FactorKind::Unary { label: rng.random_range(0..2) }, vec![v], rng.random_range(-2.0..2.0), Some(v));
    }
    for k in 0..n {
        let a = k;
        let b = (k + 1) % n;
        g.add_factor(FactorKind::Equal, vec![a, b], rng.random_range(0.0..1.0), Some(n + k));
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_bp_matches_enumeration(seed in any::<u64>()) {
        let g = random_tree(seed);
        let bp = run_bp(&g, &tight()).unwrap();
        let ex = enumerate_exact(&g).unwrap();
        prop_assert!(bp.converged);
        for (a, b) in bp.marginals.iter().zip(&ex.marginals) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
            }
        }
        for (a, b) in bp.expectations.iter().zip(&ex.expectations) {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a.mean() - b.mean()).abs() < 1e-9),
                (None, None) => {}
                _ => prop_assert!(false, "expectation presence differs"),
            }
        }
    }

    #[test]
    fn loopy_bp_is_normalized_and_damping_invariant(seed in any::<u64>()) {
        let g = random_loopy(seed);
        let damped = run_bp(&g, &BpConfig { tol: 1e-12, max_iters: 2000, ..BpConfig::default() }).unwrap();
        let plain = run_bp(&g, &BpConfig { tol: 1e-12, max_iters: 2000, damping: 0.0, ..BpConfig::default() }).unwrap();
        for m in &damped.marginals {
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(m.iter().all(|x| (0.0..=1.0).contains(x)));
        }
        for e in damped.expectations.iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&e.mean()));
        }
        prop_assert!(damped.max_residual >= 0.0);
        if damped.converged && plain.converged {
            for (a, b) in damped.marginals.iter().zip(&plain.marginals) {
                prop_assert!((a[1] - b[1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn raising_a_unary_weight_never_lowers_its_label(seed in any::<u64>(), bump in 0.0f64..3.0) {
        let g = random_tree(seed ^ 0x5eed);
        let Some(a) = g.factors().iter().position(|f| matches!(f.kind, FactorKind::Unary { .. })) else {
            return Ok(());
        };
        let FactorKind::Unary { label } = g.factors()[a].kind else { unreachable!() };
        let v = g.factors()[a].scope[0];
        let before = enumerate_exact(&g).unwrap().marginals[v][label];
        let mut weights: Vec<f64> = vec![0.0; g.num_templates()];
        for f in g.factors() {
            if let Some(t) = f.template {
                weights[t] = f.weight;
            }
        }
        let t = g.factors()[a].template.unwrap();
        weights[t] += bump;
        let mut h = g.clone();
        h.set_template_weights(&weights);
        let after = enumerate_exact(&h).unwrap().marginals[v][label];
        prop_assert!(after >= before - 1e-12);
    }
}

#[test]
fn bp_is_deterministic() {
    let g = random_loopy(11);
    let a = run_bp(&g, &BpConfig::default()).unwrap();
    let b = run_bp(&g, &BpConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn noisy_or_mode_stays_normalized() {
    let mut g = graph(3, 2);
    g.add_factor(FactorKind::AtLeastOne { label: 1 }, vec![0, 1, 2], W_HARD, Some(0));
    g.attach_predictor(&[vec![0.9, 0.1], vec![0.8, 0.2], vec![0.7, 0.3]]);
    let cfg = BpConfig {
        at_least_one_mode: AtLeastOneMode::NoisyOrMarginals,
        ..BpConfig::default()
    };
    let bp = run_bp(&g, &cfg).unwrap();
    for m in &bp.marginals {
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    // At least one mention is pushed toward the relation.
    assert!(bp.marginals.iter().any(|m| m[1] > 0.3));
}
