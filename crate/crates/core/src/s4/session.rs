use std::collections::HashSet;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::pool::{best_attention, best_high_entropy, best_low_entropy, best_pairs, candidate_pool, entropy_table, PoolConfig};
use super::scores::{argmax_flip_fraction, Posteriors};
use crate::corpus::{Dataset, TokenId};
use crate::dpl::{dpl_learn, DplConfig, DplState, IterationMetrics};
use crate::error::{Error, Result};
use crate::evidence::{EvidenceKind, EvidenceSet, EvidenceTemplate, Insertion, Origin, ProposalScore};
use crate::factor_graph::{supervision_only_beliefs, BeliefState};
use crate::metrics::test_accuracy;
use crate::predictor::{ModuleConfig, PredictionModule, PredictorKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SstMode {
    Attention,
    Entropy,
    Joint,
}

/// Which posteriors the SST convergence test compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceSource {
    #[default]
    Full,
    SupervisionOnly,
}

/// When the prediction module is reset to its initial parameters.
///
/// `PerDplRun` starts every DPL run inside an outer iteration from the same
/// initialization and shuffle seed, so consecutive SST steps differ only in
/// the evidence set. `PerOuter` keeps training one module across the SST
/// steps of an outer iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorInit {
    #[default]
    PerDplRun,
    PerOuter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct S4Config {
    /// Outer iterations `M`.
    pub outer_iterations: usize,
    /// Human query budget `T`.
    pub budget: usize,
    pub modes: Vec<SstMode>,
    /// Cap on SST additions per outer iteration.
    pub max_sst_steps: usize,
    pub sst_threshold: f64,
    pub convergence: ConvergenceSource,
    pub pool: PoolConfig,
    pub joint_batch: usize,
    pub joint_similarity_floor: f64,
    /// Supporting instances shown with a query.
    pub query_support: usize,
    pub module: ModuleConfig,
    pub predictor_init: PredictorInit,
    pub dpl: DplConfig,
    pub seed: u64,
}

impl Default for S4Config {
    fn default() -> Self {
        S4Config {
            outer_iterations: 5,
            budget: 0,
            modes: vec![SstMode::Attention],
            max_sst_steps: 10,
            sst_threshold: 0.01,
            convergence: ConvergenceSource::Full,
            pool: PoolConfig::default(),
            joint_batch: 10,
            joint_similarity_floor: 0.8,
            query_support: 10,
            module: ModuleConfig::default(),
            predictor_init: PredictorInit::default(),
            dpl: DplConfig::default(),
            seed: 0,
        }
    }
}

impl S4Config {
    pub fn validate(&self) -> Result<()> {
        self.dpl.validate()?;
        self.module.validate()?;
        if self.outer_iterations == 0 {
            return Err(Error::Config("outer_iterations must be at least 1".into()));
        }
        if !(self.sst_threshold > 0.0 && self.sst_threshold <= 1.0) {
            return Err(Error::Config("sst_threshold must lie in (0, 1]".into()));
        }
        if self.modes.contains(&SstMode::Joint) && self.module.kind != PredictorKind::AttnEmbed {
            return Err(Error::Config("joint proposals need an attention module".into()));
        }
        Ok(())
    }
}

/// Reviewer's answer to a feature query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AnswerRepr", into = "AnswerRepr")]
pub enum Answer {
    Accept(String),
    Reject,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    accept: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reject: Option<bool>,
}

impl TryFrom<AnswerRepr> for Answer {
    type Error = String;

    fn try_from(r: AnswerRepr) -> std::result::Result<Self, String> {
        match (r.accept, r.reject) {
            (Some(l), None) => Ok(Answer::Accept(l)),
            (None, Some(true)) => Ok(Answer::Reject),
            _ => Err("answer must be {\"accept\": label} or {\"reject\": true}".into()),
        }
    }
}

impl From<Answer> for AnswerRepr {
    fn from(a: Answer) -> Self {
        match a {
            Answer::Accept(l) => AnswerRepr {
                accept: Some(l),
                reject: None,
            },
            Answer::Reject => AnswerRepr {
                accept: None,
                reject: Some(true),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Outcome {
    Pending,
    Accepted { label: String },
    Rejected,
}

/// A training instance shown to the reviewer with its current posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportInstance {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    /// Positions in `tokens` where the queried feature fires.
    pub highlight: Vec<usize>,
    pub posterior: Vec<f64>,
}

/// Feature-level question: which label, if any, does the feature imply?
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalQuery {
    pub id: usize,
    pub outer: usize,
    pub token: String,
    /// One candidate formula per label.
    pub candidates: Vec<EvidenceKind>,
    pub entropy: f64,
    pub mean_posterior: Vec<f64>,
    pub count: usize,
    pub support: Vec<SupportInstance>,
    pub outcome: Outcome,
}

/// Per-DPL-run summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub outer: usize,
    pub sst_step: usize,
    pub test_accuracy: Option<f64>,
    pub q_entropy: f64,
    pub evidence_size: usize,
    pub answered: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    OuterStart {
        outer: usize,
    },
    DplIteration {
        outer: usize,
        sst_step: usize,
        metrics: IterationMetrics,
    },
    Metrics(SessionMetrics),
    SstProposal {
        outer: usize,
        sst_step: usize,
        template_id: usize,
        template: EvidenceTemplate,
    },
    SstStop {
        outer: usize,
        sst_step: usize,
        flip_fraction: Option<f64>,
        reason: String,
    },
    FalQuery {
        query: FalQuery,
    },
    FalAnswer {
        query_id: usize,
        answer: Answer,
    },
    Done {
        reason: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    AwaitingAnswer,
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Phase {
    OuterStart,
    Sst,
    Fal,
    Awaiting,
    Finish,
    Done,
}

/// One S4 run as a resumable state machine. `step` advances until a
/// feature query needs an answer or the run ends.
#[derive(Clone, Debug, PartialEq)]
pub struct S4Session {
    config: S4Config,
    seed_evidence: EvidenceSet,
    evidence: EvidenceSet,
    queries: Vec<FalQuery>,
    module: Option<PredictionModule>,
    belief: Option<BeliefState>,
    convergence_belief: Option<BeliefState>,
    prev_convergence: Option<BeliefState>,
    lr: Option<f64>,
    phase: Phase,
    outer: usize,
    sst_step: usize,
    changed_this_outer: bool,
    queried_this_outer: bool,
    evidence_dirty: bool,
    joint_done: bool,
    events: Vec<SessionEvent>,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl S4Session {
    pub fn new(config: S4Config, seed_evidence: EvidenceSet, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        // Surfaces grounding errors up front.
        crate::evidence::ground_all(&seed_evidence, dataset)?;
        Ok(S4Session {
            config,
            evidence: seed_evidence.clone(),
            seed_evidence,
            queries: Vec::new(),
            module: None,
            belief: None,
            convergence_belief: None,
            prev_convergence: None,
            lr: None,
            phase: Phase::OuterStart,
            outer: 0,
            sst_step: 0,
            changed_this_outer: false,
            queried_this_outer: false,
            evidence_dirty: true,
            joint_done: false,
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &S4Config {
        &self.config
    }

    pub fn seed_evidence(&self) -> &EvidenceSet {
        &self.seed_evidence
    }

    pub fn evidence(&self) -> &EvidenceSet {
        &self.evidence
    }

    pub fn queries(&self) -> &[FalQuery] {
        &self.queries
    }

    pub fn module(&self) -> Option<&PredictionModule> {
        self.module.as_ref()
    }

    pub fn belief(&self) -> Option<&BeliefState> {
        self.belief.as_ref()
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn outer(&self) -> usize {
        self.outer
    }

    pub fn status(&self) -> Status {
        match self.phase {
            Phase::Awaiting => Status::AwaitingAnswer,
            Phase::Done => Status::Done,
            _ => Status::Running,
        }
    }

    pub fn answered(&self) -> usize {
        self.queries.iter().filter(|q| q.outcome != Outcome::Pending).count()
    }

    pub fn pending_query(&self) -> Option<&FalQuery> {
        self.queries.iter().find(|q| q.outcome == Outcome::Pending)
    }

    /// Metrics after every DPL run so far.
    pub fn metrics(&self) -> Vec<SessionMetrics> {
        self.events
            .iter()
            .filter_map(|e| match e {
                SessionEvent::Metrics(m) => Some(m.clone()),
                _ => None,
            })
            .collect()
    }

    /// SST additions so far.
    pub fn proposals(&self) -> impl Iterator<Item = (usize, &EvidenceTemplate)> {
        self.events.iter().filter_map(|e| match e {
            SessionEvent::SstProposal { template_id, template, .. } => Some((*template_id, template)),
            _ => None,
        })
    }

    fn emit(&mut self, e: SessionEvent) {
        self.events.push(e);
    }

    fn check_invariants(&self) {
        assert!(self.answered() <= self.config.budget, "answered queries exceed the budget");
        let pending = self.queries.iter().filter(|q| q.outcome == Outcome::Pending).count();
        assert_eq!(pending == 1, self.phase == Phase::Awaiting);
        assert!(pending <= 1);
    }

    /// Runs until the next feature query or the end of the run.
    pub fn step(&mut self, dataset: &Dataset) -> Result<Status> {
        if let Some(q) = self.pending_query() {
            return Err(Error::AwaitingAnswer(q.id));
        }
        loop {
            match self.phase {
                Phase::OuterStart => {
                    if self.outer >= self.config.outer_iterations {
                        self.phase = Phase::Finish;
                        continue;
                    }
                    self.start_outer(dataset)?;
                }
                Phase::Sst => self.sst_step(dataset)?,
                Phase::Fal => {
                    if self.fal_step(dataset)? {
                        self.check_invariants();
                        return Ok(Status::AwaitingAnswer);
                    }
                }
                Phase::Awaiting => unreachable!("pending query checked above"),
                Phase::Finish => {
                    if self.evidence_dirty {
                        self.module = Some(self.fresh_module(dataset)?);
                        self.run_dpl(dataset)?;
                    }
                    let reason = if self.outer >= self.config.outer_iterations { "outer_iterations" } else { "no_progress" };
                    self.emit(SessionEvent::Done { reason: reason.into() });
                    self.phase = Phase::Done;
                }
                Phase::Done => {
                    self.check_invariants();
                    return Ok(Status::Done);
                }
            }
        }
    }

    fn fresh_module(&self, dataset: &Dataset) -> Result<PredictionModule> {
        let cfg = self.config.module.clone().with_seed(mix(self.config.module.seed, self.outer as u64));
        PredictionModule::new(cfg, dataset.num_labels(), dataset.vocabulary().len())
    }

    fn start_outer(&mut self, dataset: &Dataset) -> Result<()> {
        info!("outer iteration {}", self.outer);
        self.emit(SessionEvent::OuterStart { outer: self.outer });
        self.module = Some(self.fresh_module(dataset)?);
        self.prev_convergence = None;
        self.sst_step = 0;
        self.changed_this_outer = false;
        self.queried_this_outer = false;
        self.joint_done = false;
        self.phase = Phase::Sst;
        Ok(())
    }

    fn run_dpl(&mut self, dataset: &Dataset) -> Result<()> {
        let mut module = self.module.take().expect("module initialized at outer start");
        if self.config.predictor_init == PredictorInit::PerDplRun {
            module = self.fresh_module(dataset)?;
        }
        let mut state = DplState::new(self.evidence.clone(), module, dataset)?;
        state.lr = self.lr;
        let cfg = DplConfig {
            seed: match self.config.predictor_init {
                PredictorInit::PerDplRun => mix(self.config.seed, self.outer as u64),
                PredictorInit::PerOuter => mix(mix(self.config.seed, self.outer as u64), self.sst_step as u64),
            },
            ..self.config.dpl.clone()
        };
        let result = dpl_learn(&mut state, dataset, &cfg);
        if let Err(e) = result {
            self.module = Some(state.module);
            return Err(e);
        }
        for w in &state.warnings {
            warn!("{w}");
        }
        self.lr = state.lr;
        for m in &state.metrics {
            self.events.push(SessionEvent::DplIteration {
                outer: self.outer,
                sst_step: self.sst_step,
                metrics: m.clone(),
            });
        }
        let belief = state.belief.take().expect("dpl_learn sets posteriors");
        self.convergence_belief = Some(match self.config.convergence {
            ConvergenceSource::Full => belief.clone(),
            ConvergenceSource::SupervisionOnly => supervision_only_beliefs(&state.graph(dataset), &cfg.bp)?,
        });
        self.evidence = state.evidence;
        self.module = Some(state.module);
        let metrics = SessionMetrics {
            outer: self.outer,
            sst_step: self.sst_step,
            test_accuracy: test_accuracy(self.module.as_ref().unwrap(), dataset),
            q_entropy: belief.mean_entropy(),
            evidence_size: self.evidence.len(),
            answered: self.answered(),
            lr: self.lr.unwrap_or(f64::NAN),
        };
        info!("outer {} sst {} accuracy {:?} |K| {}", metrics.outer, metrics.sst_step, metrics.test_accuracy, metrics.evidence_size);
        self.emit(SessionEvent::Metrics(metrics));
        self.belief = Some(belief);
        self.evidence_dirty = false;
        Ok(())
    }

    fn stop_sst(&mut self, flip_fraction: Option<f64>, reason: &str) {
        self.emit(SessionEvent::SstStop {
            outer: self.outer,
            sst_step: self.sst_step,
            flip_fraction,
            reason: reason.into(),
        });
        self.phase = Phase::Fal;
    }

    fn sst_step(&mut self, dataset: &Dataset) -> Result<()> {
        self.run_dpl(dataset)?;
        let cur = self.convergence_belief.clone().unwrap();
        let flips = match &self.prev_convergence {
            Some(prev) => Some(argmax_flip_fraction(prev, &cur)?),
            None => None,
        };
        if self.config.modes.is_empty() {
            self.stop_sst(flips, "no_modes");
            return Ok(());
        }
        if let Some(f) = flips {
            if f < self.config.sst_threshold {
                self.stop_sst(flips, "converged");
                return Ok(());
            }
        }
        if self.sst_step >= self.config.max_sst_steps {
            self.stop_sst(flips, "step_cap");
            return Ok(());
        }
        let added = self.propose(dataset)?;
        if added == 0 {
            self.stop_sst(flips, "pool_exhausted");
            return Ok(());
        }
        self.prev_convergence = Some(cur);
        self.sst_step += 1;
        Ok(())
    }

    /// Tokens already used by evidence, queries or proposals.
    fn excluded_tokens(&self) -> HashSet<String> {
        let mut out: HashSet<String> = self.evidence.iter().filter_map(|t| t.kind.token().map(String::from)).collect();
        out.extend(self.queries.iter().map(|q| q.token.clone()));
        out.extend(self.proposals().filter_map(|(_, t)| t.kind.token().map(String::from)));
        out
    }

    fn excluded_pairs(&self) -> HashSet<(String, String)> {
        let mut out = HashSet::new();
        for t in self.evidence.iter().map(|t| &t.kind).chain(self.proposals().map(|(_, t)| &t.kind)) {
            if let EvidenceKind::SimilarityJoint { pairs } = t {
                out.extend(pairs.iter().cloned());
            }
        }
        out
    }

    fn pool(&self, dataset: &Dataset) -> Vec<TokenId> {
        candidate_pool(dataset, &self.excluded_tokens(), &self.config.pool)
    }

    fn add_proposal(&mut self, template: EvidenceTemplate) -> bool {
        match self.evidence.insert(template.clone()) {
            Insertion::Added(id) => {
                self.emit(SessionEvent::SstProposal {
                    outer: self.outer,
                    sst_step: self.sst_step,
                    template_id: id,
                    template: self.evidence.get(id).unwrap().clone(),
                });
                self.changed_this_outer = true;
                self.evidence_dirty = true;
                true
            }
            Insertion::Duplicate(_) => false,
        }
    }

    /// One PropSST round over the configured modes. Returns the number of
    /// templates added.
    fn propose(&mut self, dataset: &Dataset) -> Result<usize> {
        let mut added = 0;
        let labels = dataset.label_set().to_vec();
        for mode in self.config.modes.clone() {
            let belief = self.belief.clone().unwrap();
            let q = Posteriors::new(&belief, dataset);
            let module = self.module.as_ref().unwrap();
            let template = match mode {
                SstMode::Attention => {
                    let pool = self.pool(dataset);
                    best_attention(&pool, &q, module, dataset).map(|c| {
                        let token = dataset.vocabulary().token(c.token).unwrap();
                        EvidenceTemplate::soft(EvidenceKind::token_unary(token, &labels[c.label]), Origin::Sst).with_proposal(ProposalScore {
                            method: "attention".into(),
                            score: c.score,
                            support: c.count as u64,
                        })
                    })
                }
                SstMode::Entropy => {
                    let pool = self.pool(dataset);
                    let table = entropy_table(&pool, &q, dataset);
                    best_low_entropy(&table, dataset).map(|(c, _)| {
                        let token = dataset.vocabulary().token(c.token).unwrap();
                        EvidenceTemplate::soft(EvidenceKind::token_unary(token, &labels[c.label]), Origin::Sst).with_proposal(ProposalScore {
                            method: "entropy".into(),
                            score: c.score,
                            support: c.count as u64,
                        })
                    })
                }
                SstMode::Joint => {
                    if self.joint_done {
                        continue;
                    }
                    self.joint_done = true;
                    let pairs = best_pairs(module, dataset, &self.excluded_pairs(), self.config.joint_similarity_floor, self.config.joint_batch)?;
                    if pairs.is_empty() {
                        None
                    } else {
                        let score = pairs.iter().map(|p| p.score).sum::<f64>() / pairs.len() as f64;
                        let support = pairs.len() as u64;
                        let pairs = pairs.into_iter().map(|p| (p.a, p.b)).collect();
                        Some(EvidenceTemplate::soft(EvidenceKind::SimilarityJoint { pairs }, Origin::Sst).with_proposal(ProposalScore {
                            method: "joint".into(),
                            score,
                            support,
                        }))
                    }
                }
            };
            if let Some(t) = template {
                if self.add_proposal(t) {
                    added += 1;
                }
            }
        }
        Ok(added)
    }

    /// Issues a query when budget and pool allow. Otherwise closes the outer
    /// iteration. Returns whether a query is now pending.
    fn fal_step(&mut self, dataset: &Dataset) -> Result<bool> {
        if self.answered() < self.config.budget {
            if let Some(query) = self.prop_fal(dataset)? {
                self.queries.push(query.clone());
                self.emit(SessionEvent::FalQuery { query });
                self.queried_this_outer = true;
                self.phase = Phase::Awaiting;
                return Ok(true);
            }
        }
        self.end_outer();
        Ok(false)
    }

    fn end_outer(&mut self) {
        if !self.changed_this_outer && !self.queried_this_outer {
            self.phase = Phase::Finish;
        } else {
            self.outer += 1;
            self.phase = Phase::OuterStart;
        }
    }

    /// The max-entropy pool feature as a query, or `None` if the pool is
    /// empty.
    pub fn prop_fal(&self, dataset: &Dataset) -> Result<Option<FalQuery>> {
        if self.answered() >= self.config.budget {
            return Err(Error::BudgetExhausted(self.config.budget));
        }
        let Some(belief) = &self.belief else {
            return Ok(None);
        };
        let q = Posteriors::new(belief, dataset);
        let pool = self.pool(dataset);
        let table = entropy_table(&pool, &q, dataset);
        let Some((t, score)) = best_high_entropy(&table, dataset) else {
            return Ok(None);
        };
        let vocab = dataset.vocabulary();
        let token = vocab.token(t).unwrap().to_string();
        let support = dataset
            .postings(t)
            .iter()
            .take(self.config.query_support)
            .map(|&i| {
                let inst = dataset.instance(i);
                SupportInstance {
                    id: inst.id.clone(),
                    text: inst.raw_text.clone(),
                    tokens: inst.tokens.iter().map(|&x| vocab.token(x).unwrap_or("").to_string()).collect(),
                    highlight: inst.tokens.iter().enumerate().filter(|(_, &x)| x == t).map(|(j, _)| j).collect(),
                    posterior: q.get(i).map(<[f64]>::to_vec).unwrap_or_default(),
                }
            })
            .collect();
        Ok(Some(FalQuery {
            id: self.queries.len(),
            outer: self.outer,
            candidates: dataset.label_set().iter().map(|l| EvidenceKind::token_unary(&token, l)).collect(),
            token,
            entropy: score.entropy,
            mean_posterior: score.mean_posterior,
            count: score.count,
            support,
            outcome: Outcome::Pending,
        }))
    }

    /// Records the reviewer's answer. Acceptance adds the chosen label's
    /// formula to the evidence at the default weight.
    pub fn answer(&mut self, query_id: usize, answer: Answer, dataset: &Dataset) -> Result<()> {
        let Some(query) = self.queries.get(query_id) else {
            return Err(Error::UnknownQuery(query_id));
        };
        if query.outcome != Outcome::Pending {
            return Err(Error::AlreadyAnswered(query_id));
        }
        let outcome = match &answer {
            Answer::Accept(label) => {
                let l = dataset.label_id(label)?;
                let kind = query.candidates[l].clone();
                self.evidence.insert(EvidenceTemplate::soft(kind, Origin::Fal));
                self.changed_this_outer = true;
                self.evidence_dirty = true;
                Outcome::Accepted { label: label.clone() }
            }
            Answer::Reject => Outcome::Rejected,
        };
        self.queries[query_id].outcome = outcome;
        self.emit(SessionEvent::FalAnswer { query_id, answer });
        self.end_outer();
        self.check_invariants();
        Ok(())
    }

    /// Steps and answers queries from `oracle` until the run ends or the
    /// oracle declines to answer.
    pub fn run(&mut self, dataset: &Dataset, oracle: &mut dyn Oracle) -> Result<Status> {
        loop {
            match self.status() {
                Status::Done => return Ok(Status::Done),
                Status::AwaitingAnswer => {
                    let q = self.pending_query().unwrap().clone();
                    match oracle.answer(&q, dataset.label_set()) {
                        Some(a) => self.answer(q.id, a, dataset)?,
                        None => return Ok(Status::AwaitingAnswer),
                    }
                }
                Status::Running => {
                    self.step(dataset)?;
                }
            }
        }
    }

    /// Rebuilds a session by re-executing from its inputs and feeding the
    /// recorded answers. Fails if the regenerated events differ.
    pub fn replay(config: S4Config, seed_evidence: EvidenceSet, dataset: &Dataset, recorded: &[SessionEvent]) -> Result<Self> {
        let mut s = S4Session::new(config, seed_evidence, dataset)?;
        while s.events.len() < recorded.len() {
            match s.status() {
                Status::Done => break,
                Status::AwaitingAnswer => match &recorded[s.events.len()] {
                    SessionEvent::FalAnswer { query_id, answer } => s.answer(*query_id, answer.clone(), dataset)?,
                    _ => return Err(Error::ReplayDiverged(s.events.len())),
                },
                Status::Running => {
                    s.step(dataset)?;
                }
            }
            if let Some(i) = s.events.iter().zip(recorded).position(|(a, b)| a != b) {
                return Err(Error::ReplayDiverged(i));
            }
        }
        if s.events.len() != recorded.len() {
            return Err(Error::ReplayDiverged(s.events.len().min(recorded.len())));
        }
        Ok(s)
    }
}

/// Source of answers to feature queries.
pub trait Oracle {
    /// `None` parks the session until an answer arrives by other means.
    fn answer(&mut self, query: &FalQuery, labels: &[String]) -> Option<Answer>;
}

/// Accepts `(t, l)` iff `t` is in the rule set's list for `l`.
#[derive(Clone, Debug)]
pub struct ScriptedOracle {
    pub rules: crate::corpus::OracleRuleSet,
}

impl Oracle for ScriptedOracle {
    fn answer(&mut self, query: &FalQuery, labels: &[String]) -> Option<Answer> {
        Some(
            labels
                .iter()
                .find(|l| self.rules.accepts(&query.token, l))
                .map_or(Answer::Reject, |l| Answer::Accept(l.clone())),
        )
    }
}

/// Never answers; sessions park at every query.
#[derive(Clone, Copy, Debug, Default)]
pub struct InteractiveOracle;

impl Oracle for InteractiveOracle {
    fn answer(&mut self, _: &FalQuery, _: &[String]) -> Option<Answer> {
        None
    }
}
