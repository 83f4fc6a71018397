//! Implementations shared by the `s4` binary and the HTTP service.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use s4_core::corpus::{
    generate_oracle, generate_synthetic, load_dataset, planted_seed_evidence, Dataset, DatasetSchema, OracleConfig,
    OracleRuleSet, SyntheticConfig,
};
use s4_core::dpl::{dpl_learn, DplConfig, DplState, IterationMetrics};
use s4_core::evidence::EvidenceSet;
use s4_core::metrics::{evaluate, Metrics};
use s4_core::predictor::{ModuleConfig, PredictionModule};
use s4_core::s4::{Answer, FalQuery, Oracle, S4Config, S4Session, SessionEvent, SessionMetrics, Status};

use crate::exit::InputError;
use crate::store::{SessionDir, SessionSpec, SessionStore};

/// Reads a JSON config file. A missing path yields the defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_config)
}

pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| InputError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| InputError::Config(format!("{}: {e}", path.display())).into())
}

/// Reads a JSON input file such as seed evidence or an oracle rule set.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| InputError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| InputError::Data(format!("{}: {e}", path.display())).into())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn schema(labels: Option<Vec<String>>, max_len: Option<usize>) -> DatasetSchema {
    let mut s = DatasetSchema::default();
    s.labels = labels;
    if let Some(m) = max_len {
        s.max_len = m;
    }
    s
}

pub fn load_data(path: &Path, schema: &DatasetSchema) -> Result<Dataset> {
    load_dataset(path, schema).with_context(|| format!("loading {}", path.display()))
}

/// Generates a planted dataset and optionally seed evidence naming
/// `seed_tokens` planted tokens per class.
pub fn gen_synthetic(
    config: &SyntheticConfig,
    seed: u64,
    out: &Path,
    seed_evidence: Option<(&Path, usize)>,
) -> Result<Dataset> {
    let ds = generate_synthetic(config, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    ds.write_jsonl(out)?;
    if let Some((path, n)) = seed_evidence {
        planted_seed_evidence(n).save(path)?;
    }
    Ok(ds)
}

pub fn gen_oracle(ds: &Dataset, k: usize, out: &Path) -> Result<OracleRuleSet> {
    let rules = generate_oracle(ds, &OracleConfig::new(k))?;
    write_json(out, &rules)?;
    Ok(rules)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DplTrainConfig {
    pub module: ModuleConfig,
    pub dpl: DplConfig,
}

#[derive(Clone, Debug, Serialize)]
pub struct DplReport {
    pub lr: Option<f64>,
    pub iterations: Vec<IterationMetrics>,
    pub warnings: Vec<String>,
    pub evaluation: Option<Metrics>,
}

/// Trains a predictor from seed evidence and writes the DPL state to `out`.
pub fn dpl_train(ds: &Dataset, evidence: EvidenceSet, config: &DplTrainConfig, out: &Path) -> Result<DplReport> {
    let module = PredictionModule::new(config.module.clone(), ds.num_labels(), ds.vocabulary().len())?;
    let mut state = DplState::new(evidence, module, ds)?;
    dpl_learn(&mut state, ds, &config.dpl)?;
    state.save(out)?;
    let report = DplReport {
        lr: state.lr,
        iterations: state.metrics.clone(),
        warnings: state.warnings.clone(),
        evaluation: evaluate(&state.module, ds).ok(),
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

pub fn evaluate_predictor(ds: &Dataset, predictor: &Path) -> Result<Metrics> {
    let module = PredictionModule::load(predictor).with_context(|| format!("loading predictor {}", predictor.display()))?;
    if module.vocab_size() != ds.vocabulary().len() || module.num_labels() != ds.num_labels() {
        return Err(InputError::Data("predictor shapes do not match the dataset vocabulary or labels".into()).into());
    }
    Ok(evaluate(&module, ds)?)
}

/// Steps `session`, answering queries from `oracle`, until it finishes or
/// the oracle declines. `persist` receives each batch of new events.
pub fn advance(
    session: &mut S4Session,
    ds: &Dataset,
    oracle: &mut dyn Oracle,
    mut persist: impl FnMut(&[SessionEvent]) -> Result<()>,
) -> Result<Status> {
    let mut seen = session.events().len();
    loop {
        match session.status() {
            Status::Done => return Ok(Status::Done),
            Status::AwaitingAnswer => {
                let q = session.pending_query().expect("awaiting session has a query").clone();
                match oracle.answer(&q, ds.label_set()) {
                    Some(a) => session.answer(q.id, a, ds)?,
                    None => return Ok(Status::AwaitingAnswer),
                }
            }
            Status::Running => {
                session.step(ds)?;
            }
        }
        persist(&session.events()[seen..])?;
        seen = session.events().len();
    }
}

/// Asks for answers on a line-oriented channel. A reply is answer JSON, a
/// label name, or `reject`. End of input parks the session.
pub struct LineOracle<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> LineOracle<R, W> {
    pub fn new(input: R, output: W) -> Self {
        LineOracle { input, output }
    }

    fn parse(line: &str, labels: &[String]) -> Option<Answer> {
        let line = line.trim();
        if line == "reject" {
            return Some(Answer::Reject);
        }
        let answer = if line.starts_with('{') {
            serde_json::from_str(line).ok()?
        } else {
            Answer::Accept(line.to_string())
        };
        match &answer {
            Answer::Accept(l) if !labels.contains(l) => None,
            _ => Some(answer),
        }
    }
}

impl<R: BufRead, W: Write> Oracle for LineOracle<R, W> {
    fn answer(&mut self, query: &FalQuery, labels: &[String]) -> Option<Answer> {
        let _ = writeln!(self.output, "{}", serde_json::to_string(query).unwrap_or_default());
        loop {
            let _ = write!(self.output, "answer [{} | reject]: ", labels.join(" | "));
            let _ = self.output.flush();
            let mut line = String::new();
            match self.input.read_line(&mut line) {
                Ok(0) | Err(_) => return None,
                Ok(_) => {}
            }
            if let Some(a) = Self::parse(&line, labels) {
                return Some(a);
            }
            let _ = writeln!(self.output, "unrecognized answer `{}`", line.trim());
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub status: Status,
    pub outer: usize,
    pub answered: usize,
    pub evidence_size: usize,
    pub evaluation: Option<Metrics>,
}

/// Runs an S4 session recorded under `out`: spec, dataset copy and event
/// log, then `metrics.csv`, `evidence.json`, `predictor/` and
/// `summary.json`.
pub fn s4_run(
    ds: &Dataset,
    schema: &DatasetSchema,
    config: S4Config,
    seed_evidence: EvidenceSet,
    scripted: Option<OracleRuleSet>,
    oracle: &mut dyn Oracle,
    out: &Path,
) -> Result<RunSummary> {
    let mut session = S4Session::new(config.clone(), seed_evidence.clone(), ds)?;
    let spec = SessionSpec {
        id: out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        config,
        seed_evidence,
        schema: schema.clone(),
        oracle: scripted,
    };
    let dir = SessionStore::create_at(out, &spec, ds)?;
    let status = advance(&mut session, ds, oracle, |events| dir.append_events(events))?;
    write_outputs(&session, &dir)?;
    let summary = RunSummary {
        status,
        outer: session.outer(),
        answered: session.answered(),
        evidence_size: session.evidence().len(),
        evaluation: session.module().and_then(|m| evaluate(m, ds).ok()),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn write_outputs(session: &S4Session, dir: &SessionDir) -> Result<()> {
    let f = fs::File::create(dir.path().join("metrics.csv"))?;
    write_metrics_csv(f, &session.metrics())?;
    session.evidence().save(dir.path().join("evidence.json"))?;
    if let Some(m) = session.module() {
        m.save(dir.path().join("predictor"))?;
    }
    Ok(())
}

pub fn write_metrics_csv<W: Write>(w: W, metrics: &[SessionMetrics]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for m in metrics {
        out.serialize(m)?;
    }
    if metrics.is_empty() {
        out.write_record(["outer", "sst_step", "test_accuracy", "q_entropy", "evidence_size", "answered", "lr"])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InspectTarget {
    Factors,
    Proposals,
    Graph,
}

#[derive(Serialize)]
struct FactorRow<'a> {
    id: usize,
    #[serde(flatten)]
    template: &'a s4_core::evidence::EvidenceTemplate,
}

/// Restores a recorded run and dumps its evidence, SST proposals or
/// factor graph as JSON.
pub fn inspect(run: &Path, target: InspectTarget) -> Result<serde_json::Value> {
    let (_, ds, session) = SessionDir::at(run).restore()?;
    let value = match target {
        InspectTarget::Factors => {
            let rows: Vec<_> = session.evidence().iter().enumerate().map(|(id, template)| FactorRow { id, template }).collect();
            serde_json::to_value(rows)?
        }
        InspectTarget::Proposals => {
            let rows: Vec<_> = session.proposals().map(|(id, template)| FactorRow { id, template }).collect();
            serde_json::to_value(rows)?
        }
        InspectTarget::Graph => {
            let Some(module) = session.module() else {
                return Err(InputError::Data("run has not trained a predictor yet".into()).into());
            };
            let state = DplState::new(session.evidence().clone(), module.clone(), &ds)?;
            serde_json::to_value(state.graph(&ds).dump(&ds, session.belief()))?
        }
    };
    Ok(value)
}
