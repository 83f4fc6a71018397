use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use s4_core::corpus::{load_dataset, Dataset, DatasetSchema, OracleRuleSet};
use s4_core::evidence::EvidenceSet;
use s4_core::s4::{S4Config, S4Session, SessionEvent};

const SPEC_FILE: &str = "session.json";
const DATA_FILE: &str = "dataset.jsonl";
const EVENTS_FILE: &str = "events.jsonl";

/// Everything needed to re-execute a session from scratch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub id: String,
    pub config: S4Config,
    pub seed_evidence: EvidenceSet,
    pub schema: DatasetSchema,
    /// Scripted oracle; when present, steps answer queries from it.
    #[serde(default)]
    pub oracle: Option<OracleRuleSet>,
}

/// One session's directory: spec, dataset copy and write-ahead event log.
#[derive(Clone, Debug)]
pub struct SessionDir {
    path: PathBuf,
}

impl SessionDir {
    pub fn at(path: impl Into<PathBuf>) -> Self {
        SessionDir { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn spec(&self) -> Result<SessionSpec> {
        let p = self.path.join(SPEC_FILE);
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    }

    pub fn dataset(&self, schema: &DatasetSchema) -> Result<Dataset> {
        Ok(load_dataset(self.path.join(DATA_FILE), schema)?)
    }

    /// Appends events to the log and flushes before returning.
    pub fn append_events(&self, events: &[SessionEvent]) -> Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        let p = self.path.join(EVENTS_FILE);
        let mut f = OpenOptions::new().create(true).append(true).open(&p).with_context(|| format!("opening {}", p.display()))?;
        let mut buf = String::new();
        for e in events {
            buf.push_str(&serde_json::to_string(e)?);
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn events(&self) -> Result<Vec<SessionEvent>> {
        read_events(&self.path.join(EVENTS_FILE))
    }

    /// Rebuilds the session by replaying its log.
    pub fn restore(&self) -> Result<(SessionSpec, Dataset, S4Session)> {
        let spec = self.spec()?;
        let dataset = self.dataset(&spec.schema)?;
        let events = self.events()?;
        let session = S4Session::replay(spec.config.clone(), spec.seed_evidence.clone(), &dataset, &events)
            .with_context(|| format!("replaying session {}", spec.id))?;
        Ok((spec, dataset, session))
    }
}

pub fn read_events(path: &Path) -> Result<Vec<SessionEvent>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).with_context(|| format!("{}:{}: bad event", path.display(), n + 1))?;
        out.push(e);
    }
    Ok(out)
}

/// Session directories under one root, named by session id.
#[derive(Clone, Debug)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).with_context(|| format!("creating store {}", root.display()))?;
        Ok(SessionStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Allocates a fresh id, then writes the spec and a copy of the dataset.
    pub fn create(&self, mut spec: SessionSpec, dataset: &Dataset) -> Result<SessionDir> {
        let mut n = self.ids()?.len();
        let path = loop {
            let id = format!("s{n:04}");
            let p = self.root.join(&id);
            match fs::create_dir(&p) {
                Ok(()) => {
                    spec.id = id;
                    break p;
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(e).with_context(|| format!("creating {}", p.display())),
            }
        };
        let dir = SessionDir { path };
        dataset.write_jsonl(dir.path.join(DATA_FILE))?;
        fs::write(dir.path.join(SPEC_FILE), serde_json::to_string_pretty(&spec)?)?;
        File::create(dir.path.join(EVENTS_FILE))?;
        Ok(dir)
    }

    /// Writes a session under a caller-chosen directory (used by the CLI).
    pub fn create_at(path: impl Into<PathBuf>, spec: &SessionSpec, dataset: &Dataset) -> Result<SessionDir> {
        let path = path.into();
        fs::create_dir_all(&path)?;
        if path.join(EVENTS_FILE).exists() {
            bail!("{} already holds a session log", path.display());
        }
        let dir = SessionDir { path };
        dataset.write_jsonl(dir.path.join(DATA_FILE))?;
        fs::write(dir.path.join(SPEC_FILE), serde_json::to_string_pretty(spec)?)?;
        File::create(dir.path.join(EVENTS_FILE))?;
        Ok(dir)
    }

    pub fn dir(&self, id: &str) -> Option<SessionDir> {
        let p = self.root.join(id);
        p.join(SPEC_FILE).is_file().then_some(SessionDir { path: p })
    }

    /// Ids of all session directories, sorted.
    pub fn ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }
}
