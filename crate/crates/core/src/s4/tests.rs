use std::collections::HashSet;

use proptest::prelude::*;

use super::*;
use crate::corpus::{
    generate_synthetic, Dataset, DatasetSchema, LabelRules, LengthRange, OracleRuleSet, Record, ScoredToken, SignalToken, Split,
    SyntheticConfig,
};
use crate::dpl::DplConfig;
use crate::error::Error;
use crate::evidence::{EvidenceKind, EvidenceSet, EvidenceTemplate, Origin};
use crate::factor_graph::BeliefState;
use crate::predictor::{ModuleConfig, PredictionModule};

fn shannon(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn belief(instances: Vec<usize>, marginals: Vec<Vec<f64>>) -> BeliefState {
    BeliefState {
        instances,
        marginals,
        expectations: Vec::new(),
        iterations: 0,
        max_residual: 0.0,
        converged: true,
    }
}

fn records(rows: &[(&str, &str, &str, Split)]) -> Dataset {
    Dataset::from_records(
        rows.iter()
            .map(|(id, text, label, split)| Record {
                id: id.to_string(),
                text: text.to_string(),
                label: Some(label.to_string()),
                tuple: None,
                split: *split,
            })
            .collect(),
        &DatasetSchema::with_labels(["neg", "pos"]),
    )
    .unwrap()
}

fn toy() -> Dataset {
    records(&[
        ("a", "good fun plot", "pos", Split::Train),
        ("b", "bad dull plot", "neg", Split::Train),
        ("c", "good plot", "pos", Split::Train),
        ("d", "dull plot", "neg", Split::Train),
        ("e", "fun", "pos", Split::Train),
        ("f", "good", "pos", Split::Test),
        ("g", "bad", "neg", Split::Test),
    ])
}

#[test]
fn attention_worked_example() {
    let occ: [(f64, &[f64]); 2] = [(0.5, &[1.0, 0.0]), (0.25, &[0.8, 0.2])];
    let s = attention_from_occurrences(&occ, 2).unwrap();
    assert!((s.attn[0] - 0.35).abs() < 1e-12);
    assert!((s.attn[1] - 0.025).abs() < 1e-12);
    assert!((s.relative(0) - 0.325).abs() < 1e-12);
    assert!((s.relative(1) + 0.325).abs() < 1e-12);
    assert_eq!(s.count, 2);
    assert!(attention_from_occurrences(&[], 2).is_err());
}

#[test]
fn entropy_worked_example() {
    let ps: [&[f64]; 3] = [&[0.9, 0.1], &[0.9, 0.1], &[0.8, 0.2]];
    let s = entropy_from_posteriors(&ps).unwrap();
    let mean = [2.6 / 3.0, 0.4 / 3.0];
    let expect = shannon(&mean);
    assert!((s.entropy - expect).abs() < 1e-12);
    assert!((s.entropy - 0.3927).abs() < 1e-4);
    assert!((s.score - 2.546).abs() < 1e-3);
    assert_eq!(s.best_label, 0);
    assert_eq!(s.count, 3);
}

#[test]
fn entropy_extremes() {
    let u: [&[f64]; 2] = [&[0.5, 0.5], &[0.5, 0.5]];
    let s = entropy_from_posteriors(&u).unwrap();
    assert!((s.entropy - 2f64.ln()).abs() < 1e-9);

    let hot: [&[f64]; 2] = [&[0.0, 1.0], &[0.0, 1.0]];
    let s = entropy_from_posteriors(&hot).unwrap();
    assert_eq!(s.entropy, 0.0);
    assert_eq!(s.score, MAX_ENTROPY_SCORE);
    assert_eq!(s.best_label, 1);

    assert!(entropy_from_posteriors(&[]).is_err());
}

#[test]
fn uniform_posteriors_zero_every_token_score() {
    let ds = toy();
    let mut m = PredictionModule::new(ModuleConfig { dim: 4, ..ModuleConfig::attn() }, 2, ds.vocabulary().len()).unwrap();
    m.randomize(0.5, 3);
    let train = ds.train_indices().to_vec();
    let b = belief(train.clone(), vec![vec![0.5, 0.5]; train.len()]);
    let q = Posteriors::new(&b, &ds);
    let tokens: Vec<_> = (0..ds.vocabulary().len() as u32).collect();
    let scores = attention_scores(&tokens, &q, &m, &ds);
    assert!(!scores.is_empty());
    for s in scores.values() {
        for l in 0..2 {
            assert!(s.relative(l).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_scores_match_occurrence_form() {
    let ds = toy();
    let mut m = PredictionModule::new(ModuleConfig { dim: 4, ..ModuleConfig::attn() }, 2, ds.vocabulary().len()).unwrap();
    m.randomize(0.5, 9);
    let train = ds.train_indices().to_vec();
    let marg: Vec<Vec<f64>> = (0..train.len()).map(|i| vec![0.2 + 0.1 * i as f64, 0.8 - 0.1 * i as f64]).collect();
    let b = belief(train.clone(), marg);
    let q = Posteriors::new(&b, &ds);
    let plot = ds.vocabulary().id("plot").unwrap();
    let got = &attention_scores(&[plot], &q, &m, &ds)[&plot];
    let mut occ = Vec::new();
    for &i in &train {
        let inst = ds.instance(i);
        let a = m.attention_weights(inst);
        for (j, &t) in inst.tokens.iter().enumerate() {
            if t == plot {
                occ.push((a[j], q.get(i).unwrap()));
            }
        }
    }
    let want = attention_from_occurrences(&occ, 2).unwrap();
    assert_eq!(got.count, 4);
    for l in 0..2 {
        assert!((got.attn[l] - want.attn[l]).abs() < 1e-12);
    }
}

#[test]
fn flip_fraction_examples() {
    let n = 100;
    let prev = belief((0..n).collect(), vec![vec![0.9, 0.1]; n]);
    assert!(sst_converged(&prev, &prev, 0.01).unwrap());
    let mut cur = prev.clone();
    cur.marginals[3] = vec![0.2, 0.8];
    cur.marginals[7] = vec![0.4, 0.6];
    assert!((argmax_flip_fraction(&prev, &cur).unwrap() - 0.02).abs() < 1e-12);
    assert!(!sst_converged(&prev, &cur, 0.01).unwrap());
    let other = belief((1..=n).collect(), vec![vec![0.9, 0.1]; n]);
    assert!(matches!(sst_converged(&prev, &other, 0.01), Err(Error::MismatchedBeliefs)));
}

#[test]
fn pool_drops_stop_and_excluded_tokens() {
    let ds = toy();
    let cfg = PoolConfig {
        top_fraction: 1.0,
        stop_tokens: 1,
    };
    let names = |p: Vec<u32>| p.into_iter().map(|t| ds.vocabulary().token(t).unwrap().to_string()).collect::<Vec<_>>();
    let all = names(candidate_pool(&ds, &HashSet::new(), &cfg));
    // "plot" is the most frequent training token.
    assert!(!all.contains(&"plot".to_string()));
    assert!(all.contains(&"good".to_string()));
    let excluded: HashSet<String> = ["good".to_string()].into();
    let some = names(candidate_pool(&ds, &excluded, &cfg));
    assert!(!some.contains(&"good".to_string()));
    assert_eq!(some.len() + 1, all.len());
}

fn score(ds: &Dataset, token: &str, entropy: f64, count: usize) -> (u32, EntropyScore) {
    (
        ds.vocabulary().id(token).unwrap(),
        EntropyScore {
            entropy,
            score: 1.0 / entropy,
            mean_posterior: vec![0.5, 0.5],
            best_label: 1,
            count,
        },
    )
}

#[test]
fn entropy_selection_tie_breaks() {
    let ds = toy();
    let table = vec![score(&ds, "good", 0.3, 10), score(&ds, "dull", 0.3, 30), score(&ds, "fun", 0.6, 10), score(&ds, "bad", 0.6, 10)];
    let (low, s) = best_low_entropy(&table, &ds).unwrap();
    assert_eq!(ds.vocabulary().token(low.token), Some("dull"));
    assert_eq!(low.label, 1);
    assert!((low.score - 1.0 / 0.3).abs() < 1e-12);
    assert_eq!(s.count, 30);
    // Equal entropy and count: lexicographically smaller token wins.
    let (high, _) = best_high_entropy(&table, &ds).unwrap();
    assert_eq!(ds.vocabulary().token(high), Some("bad"));
    assert!(best_low_entropy(&[], &ds).is_none());
}

#[test]
fn sst_entropy_and_fal_take_opposite_extremes() {
    let ds = toy();
    let train = ds.train_indices().to_vec();
    // a, c, e lean positive; b, d are uniform.
    let marg = vec![vec![0.1, 0.9], vec![0.5, 0.5], vec![0.2, 0.8], vec![0.5, 0.5], vec![0.1, 0.9]];
    let b = belief(train, marg);
    let q = Posteriors::new(&b, &ds);
    let cfg = PoolConfig {
        top_fraction: 1.0,
        stop_tokens: 0,
    };
    let pool = candidate_pool(&ds, &HashSet::new(), &cfg);
    let table = entropy_table(&pool, &q, &ds);
    let (low, _) = best_low_entropy(&table, &ds).unwrap();
    let (high, hs) = best_high_entropy(&table, &ds).unwrap();
    let ents: Vec<f64> = table.iter().map(|(_, s)| s.entropy).collect();
    let min = ents.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(table.iter().find(|(t, _)| *t == low.token).unwrap().1.entropy, min);
    assert_eq!(hs.entropy, max);
    // "bad" and "dull" only occur in uniform instances; "dull" has more support.
    assert_eq!(ds.vocabulary().token(high), Some("dull"));
    assert!((hs.entropy - 2f64.ln()).abs() < 1e-12);
    // "fun" fires on a and e, both 0.9 positive.
    assert_eq!(ds.vocabulary().token(low.token), Some("fun"));
    assert_eq!(low.label, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn attention_score_bounds(occ in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..20)) {
        let qs: Vec<[f64; 2]> = occ.iter().map(|&(_, p)| [p, 1.0 - p]).collect();
        let pairs: Vec<(f64, &[f64])> = occ.iter().zip(&qs).map(|(&(a, _), q)| (a, q.as_slice())).collect();
        let s = attention_from_occurrences(&pairs, 2).unwrap();
        prop_assert!(s.attn.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
        prop_assert!(s.attn.iter().sum::<f64>() <= 1.0 + 1e-12);
        for l in 0..2 {
            prop_assert!(s.relative(l).abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn entropy_bounds(rows in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 1..20)) {
        let norm: Vec<Vec<f64>> = rows.iter().map(|r| { let z: f64 = r.iter().sum(); r.iter().map(|x| x / z).collect() }).collect();
        let refs: Vec<&[f64]> = norm.iter().map(Vec::as_slice).collect();
        let s = entropy_from_posteriors(&refs).unwrap();
        prop_assert!(s.entropy >= 0.0 && s.entropy <= 3f64.ln() + 1e-12);
        prop_assert!((s.mean_posterior.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(s.mean_posterior[s.best_label] >= s.mean_posterior.iter().cloned().fold(0.0, f64::max) - 1e-15);
    }
}

// Small planted corpus for session contracts.

fn planted(seed: u64) -> Dataset {
    let named: Vec<String> = (0..5).map(|i| format!("p{i}")).chain((0..5).map(|i| format!("n{i}"))).collect();
    let cfg = SyntheticConfig {
        labels: vec!["neg".into(), "pos".into()],
        background_vocab: 120,
        zipf_exponent: 1.2,
        named_tokens: named.clone(),
        signal: named
            .iter()
            .map(|t| SignalToken {
                token: t.clone(),
                label: if t.starts_with('p') { "pos" } else { "neg" }.into(),
                odds: f64::INFINITY,
            })
            .collect(),
        signal_rate: 0.1,
        min_signal: 1,
        doc_len: LengthRange { min: 8, max: 12 },
        n_train: 120,
        n_test: 60,
        tuples: None,
    };
    generate_synthetic(&cfg, seed).unwrap()
}

fn seeds() -> EvidenceSet {
    let mut k = EvidenceSet::new();
    k.insert(EvidenceTemplate::soft(EvidenceKind::token_unary("p0", "pos"), Origin::Seed));
    k.insert(EvidenceTemplate::soft(EvidenceKind::token_unary("n0", "neg"), Origin::Seed));
    k
}

fn oracle() -> OracleRuleSet {
    let list = |prefix: &str| (0..5).map(|i| ScoredToken { token: format!("{prefix}{i}"), score: 1.0 }).collect();
    OracleRuleSet {
        k: 5,
        penalty: 0.0,
        rules: vec![
            LabelRules { label: "neg".into(), tokens: list("n") },
            LabelRules { label: "pos".into(), tokens: list("p") },
        ],
        accept_pairs: None,
    }
}

fn config(budget: usize, modes: Vec<SstMode>) -> S4Config {
    S4Config {
        outer_iterations: 3,
        budget,
        modes,
        max_sst_steps: 2,
        pool: PoolConfig {
            top_fraction: 0.25,
            stop_tokens: 5,
        },
        module: ModuleConfig { dim: 8, ..ModuleConfig::attn() },
        dpl: DplConfig {
            em_iterations: 2,
            epochs_per_m_step: 2,
            lr: Some(0.05),
            ..DplConfig::default()
        },
        seed: 11,
        ..S4Config::default()
    }
}

fn events_json(s: &S4Session) -> Vec<String> {
    s.events().iter().map(|e| serde_json::to_string(e).unwrap()).collect()
}

#[test]
fn zero_budget_never_queries() {
    let ds = planted(1);
    let mut s = S4Session::new(config(0, vec![SstMode::Attention]), seeds(), &ds).unwrap();
    assert_eq!(s.run(&ds, &mut InteractiveOracle).unwrap(), Status::Done);
    assert!(s.queries().is_empty());
    assert!(!s.events().iter().any(|e| matches!(e, SessionEvent::FalQuery { .. })));
    assert!(s.proposals().count() > 0);
}

#[test]
fn scripted_run_respects_oracle_and_budget() {
    let ds = planted(2);
    let rules = oracle();
    let mut s = S4Session::new(config(2, vec![SstMode::Attention]), seeds(), &ds).unwrap();
    s.run(&ds, &mut ScriptedOracle { rules: rules.clone() }).unwrap();
    assert_eq!(s.status(), Status::Done);
    assert!(s.answered() <= 2);
    assert!(!s.queries().is_empty());
    for t in s.evidence().iter().filter(|t| t.origin == Origin::Fal) {
        let EvidenceKind::TokenUnary { token, label } = &t.kind else { panic!("unary expected") };
        assert!(rules.accepts(token, label));
    }
    // No template is proposed twice.
    let kinds: Vec<String> = s.proposals().map(|(_, t)| serde_json::to_string(&t.kind).unwrap()).collect();
    let unique: HashSet<&String> = kinds.iter().collect();
    assert_eq!(unique.len(), kinds.len());
    // The evidence set only grows.
    let sizes: Vec<usize> = s.metrics().iter().map(|m| m.evidence_size).collect();
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn fal_queries_the_highest_entropy_pool_token() {
    let ds = planted(3);
    let mut s = S4Session::new(config(1, vec![]), seeds(), &ds).unwrap();
    assert_eq!(s.run(&ds, &mut InteractiveOracle).unwrap(), Status::AwaitingAnswer);
    let query = s.pending_query().unwrap().clone();
    let q = Posteriors::new(s.belief().unwrap(), &ds);
    let excluded: HashSet<String> = s.evidence().iter().filter_map(|t| t.kind.token().map(String::from)).collect();
    let pool = candidate_pool(&ds, &excluded, &s.config().pool);
    let table = entropy_table(&pool, &q, &ds);
    let max = table.iter().map(|(_, e)| e.entropy).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(query.entropy, max);
    assert_eq!(query.candidates.len(), 2);
    assert!(query.support.iter().all(|x| !x.highlight.is_empty()));
}

#[test]
fn answer_contract() {
    let ds = planted(4);
    let mut s = S4Session::new(config(2, vec![]), seeds(), &ds).unwrap();
    s.run(&ds, &mut InteractiveOracle).unwrap();
    let qid = s.pending_query().unwrap().id;
    assert!(matches!(s.step(&ds), Err(Error::AwaitingAnswer(id)) if id == qid));

    let before = s.clone();
    assert!(matches!(s.answer(qid + 7, Answer::Reject, &ds), Err(Error::UnknownQuery(_))));
    assert!(s.answer(qid, Answer::Accept("meh".into()), &ds).is_err());
    assert_eq!(s, before);

    let k = s.evidence().len();
    s.answer(qid, Answer::Reject, &ds).unwrap();
    assert_eq!(s.evidence().len(), k);
    assert_eq!(s.answered(), 1);
    let after = s.clone();
    assert!(matches!(s.answer(qid, Answer::Accept("pos".into()), &ds), Err(Error::AlreadyAnswered(_))));
    assert_eq!(s, after);

    s.run(&ds, &mut InteractiveOracle).unwrap();
    let q2 = s.pending_query().unwrap().clone();
    s.answer(q2.id, Answer::Accept("pos".into()), &ds).unwrap();
    assert_eq!(s.evidence().len(), k + 1);
    let added = s.evidence().iter().last().unwrap();
    assert_eq!(added.kind, EvidenceKind::token_unary(&q2.token, "pos"));
    assert_eq!(added.origin, Origin::Fal);
    assert!(matches!(s.prop_fal(&ds), Err(Error::BudgetExhausted(2))));
}

#[test]
fn answer_json_shape() {
    assert_eq!(serde_json::to_string(&Answer::Accept("pos".into())).unwrap(), r#"{"accept":"pos"}"#);
    assert_eq!(serde_json::to_string(&Answer::Reject).unwrap(), r#"{"reject":true}"#);
    let a: Answer = serde_json::from_str(r#"{"accept":"neg"}"#).unwrap();
    assert_eq!(a, Answer::Accept("neg".into()));
    assert!(serde_json::from_str::<Answer>(r#"{}"#).is_err());
}

#[test]
fn runs_are_deterministic_and_replayable() {
    let ds = planted(5);
    let cfg = config(2, vec![SstMode::Attention, SstMode::Entropy]);
    let run = || {
        let mut s = S4Session::new(cfg.clone(), seeds(), &ds).unwrap();
        s.run(&ds, &mut ScriptedOracle { rules: oracle() }).unwrap();
        s
    };
    let (a, b) = (run(), run());
    assert_eq!(events_json(&a), events_json(&b));
    let r = S4Session::replay(cfg.clone(), seeds(), &ds, a.events()).unwrap();
    assert_eq!(events_json(&r), events_json(&a));
    assert_eq!(r.evidence(), a.evidence());

    let mut forged = a.events().to_vec();
    if let Some(SessionEvent::FalAnswer { answer, .. }) = forged.iter_mut().find(|e| matches!(e, SessionEvent::FalAnswer { .. })) {
        *answer = match answer {
            Answer::Reject => Answer::Accept("pos".into()),
            Answer::Accept(_) => Answer::Reject,
        };
        assert!(matches!(S4Session::replay(cfg, seeds(), &ds, &forged), Err(Error::ReplayDiverged(_))));
    }
}

#[test]
fn joint_mode_requires_attention_predictor() {
    let mut cfg = config(0, vec![SstMode::Joint]);
    cfg.module = ModuleConfig::bow();
    assert!(cfg.validate().is_err());
}

#[test]
fn joint_mode_adds_one_batch_per_outer_iteration() {
    let ds = planted(6);
    let mut cfg = config(0, vec![SstMode::Joint]);
    cfg.outer_iterations = 1;
    cfg.joint_similarity_floor = -1.0;
    cfg.joint_batch = 3;
    let mut s = S4Session::new(cfg, seeds(), &ds).unwrap();
    s.run(&ds, &mut InteractiveOracle).unwrap();
    let joints: Vec<_> = s.proposals().filter(|(_, t)| matches!(t.kind, EvidenceKind::SimilarityJoint { .. })).collect();
    assert_eq!(joints.len(), 1);
    let EvidenceKind::SimilarityJoint { pairs } = &joints[0].1.kind else { unreachable!() };
    assert_eq!(pairs.len(), 3);
}
