use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use super::vocab::{TokenId, Vocabulary, OOV};
use crate::error::{Error, Result};

pub type LabelId = usize;

pub const DEFAULT_MAX_LEN: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One line of the dataset JSONL format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub tuple: Option<String>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<TokenId>,
    pub raw_text: String,
    /// Held out from learners; only evaluation and oracle construction read it.
    pub gold_label: Option<LabelId>,
    pub tuple_key: Option<String>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    /// Ordered label names. When absent the sorted set of labels seen in
    /// the data is used.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

impl Default for DatasetSchema {
    fn default() -> Self {
        DatasetSchema {
            labels: None,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl DatasetSchema {
    pub fn with_labels<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        DatasetSchema {
            labels: Some(labels.into_iter().map(Into::into).collect()),
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    instances: Vec<Instance>,
    label_set: Vec<String>,
    vocabulary: Vocabulary,
    max_len: usize,
    train: Vec<usize>,
    test: Vec<usize>,
    by_id: HashMap<String, usize>,
    /// Training instances containing each token, ascending and deduplicated.
    postings: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn from_records(records: Vec<Record>, schema: &DatasetSchema) -> Result<Self> {
        let label_set = match &schema.labels {
            Some(l) => l.clone(),
            None => records
                .iter()
                .filter_map(|r| r.label.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        if label_set.len() < 2 {
            return Err(Error::Data(format!(
                "label set needs at least 2 labels, found {}",
                label_set.len()
            )));
        }
        if schema.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        let label_index: HashMap<&str, LabelId> = label_set
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        if label_index.len() != label_set.len() {
            return Err(Error::Config("duplicate label names".into()));
        }

        let mut by_id = HashMap::with_capacity(records.len());
        let mut token_strings = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if let Some(l) = &r.label {
                if !label_index.contains_key(l.as_str()) {
                    return Err(Error::UnknownLabel(l.clone()));
                }
            }
            let mut toks = tokenize(&r.text);
            if toks.is_empty() {
                return Err(Error::Data(format!("instance `{}` has no tokens", r.id)));
            }
            toks.truncate(schema.max_len);
            token_strings.push(toks);
        }

        let vocabulary = Vocabulary::build(
            records
                .iter()
                .zip(&token_strings)
                .filter(|(r, _)| r.split == Split::Train)
                .map(|(_, t)| t.as_slice()),
        );

        let mut instances = Vec::with_capacity(records.len());
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut postings = vec![Vec::new(); vocabulary.len()];
        for (i, (r, toks)) in records.into_iter().zip(token_strings).enumerate() {
            let tokens: Vec<TokenId> = toks.iter().map(|t| vocabulary.lookup(t)).collect();
            match r.split {
                Split::Train => {
                    train.push(i);
                    let mut seen: Vec<TokenId> = tokens.clone();
                    seen.sort_unstable();
                    seen.dedup();
                    for t in seen {
                        postings[t as usize].push(i);
                    }
                }
                Split::Test => test.push(i),
            }
            instances.push(Instance {
                id: r.id,
                tokens,
                raw_text: r.text,
                gold_label: r.label.map(|l| label_index[l.as_str()]),
                tuple_key: r.tuple,
                split: r.split,
            });
        }

        Ok(Dataset {
            instances,
            label_set,
            vocabulary,
            max_len: schema.max_len,
            train,
            test,
            by_id,
            postings,
        })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn instance(&self, index: usize) -> &Instance {
        &self.instances[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn num_labels(&self) -> usize {
        self.label_set.len()
    }

    pub fn label_id(&self, name: &str) -> Result<LabelId> {
        self.label_set
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Indices of training instances, in file order.
    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    /// Training instances that contain `token`.
    pub fn postings(&self, token: TokenId) -> &[usize] {
        if token == OOV {
            return &[];
        }
        self.postings
            .get(token as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Converts back to the JSONL record form. Text is kept verbatim.
    pub fn to_records(&self) -> Vec<Record> {
        self.instances
            .iter()
            .map(|i| Record {
                id: i.id.clone(),
                text: i.raw_text.clone(),
                label: i.gold_label.map(|l| self.label_set[l].clone()),
                tuple: i.tuple_key.clone(),
                split: i.split,
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.to_records() {
            out.push_str(&serde_json::to_string(&r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Reads a JSONL dataset. Errors name the offending line (1-based).
pub fn load_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Dataset::from_records(records, schema).map_err(|e| match e {
        Error::DuplicateId(id) => Error::Load {
            path: path.to_path_buf(),
            line: 0,
            message: format!("duplicate instance id `{id}`"),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn rec(id: &str, text: &str, label: Option<&str>, split: Split) -> Record {
        Record {
            id: id.into(),
            text: text.into(),
            label: label.map(Into::into),
            tuple: None,
            split,
        }
    }

    #[test]
    fn vocabulary_from_train_only() {
        let ds = Dataset::from_records(
            vec![
                rec("a", "good movie", Some("pos"), Split::Train),
                rec("b", "bad plot", Some("neg"), Split::Test),
            ],
            &DatasetSchema::with_labels(["neg", "pos"]),
        )
        .unwrap();
        assert_eq!(ds.vocabulary().len(), 2);
        assert_eq!(ds.instance(1).tokens, vec![OOV, OOV]);
        assert_eq!(ds.instance(0).gold_label, Some(1));
    }

    #[test]
    fn truncates_to_max_len() {
        let text = (0..600).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let ds = Dataset::from_records(
            vec![
                rec("a", &text, Some("pos"), Split::Train),
                rec("b", "x", Some("neg"), Split::Train),
            ],
            &DatasetSchema::with_labels(["neg", "pos"]),
        )
        .unwrap();
        assert_eq!(ds.instance(0).tokens.len(), 512);
        assert_eq!(ds.vocabulary().token(ds.instance(0).tokens[511]), Some("w511"));
        assert_eq!(ds.vocabulary().total_count(), 513);
    }

    #[test]
    fn duplicate_and_unknown_label_rejected() {
        let schema = DatasetSchema::with_labels(["neg", "pos"]);
        let dup = Dataset::from_records(
            vec![
                rec("a", "x", None, Split::Train),
                rec("a", "y", None, Split::Train),
            ],
            &schema,
        );
        assert!(matches!(dup, Err(Error::DuplicateId(_))));
        let unk = Dataset::from_records(vec![rec("a", "x", Some("meh"), Split::Train)], &schema);
        assert!(matches!(unk, Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn load_reports_missing_field_and_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","text":"good","label":"pos","tuple":null,"split":"train"}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","label":"neg","split":"train"}}"#).unwrap();
        let err = load_dataset(f.path(), &DatasetSchema::default()).unwrap_err();
        match err {
            Error::Load { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("text"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_two_records() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","text":"good","label":"pos","tuple":null,"split":"train"}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","text":"bad","label":"neg","tuple":null,"split":"train"}}"#).unwrap();
        let ds = load_dataset(f.path(), &DatasetSchema::default()).unwrap();
        assert_eq!(ds.instances().len(), 2);
        assert_eq!(ds.label_set(), &["neg".to_string(), "pos".to_string()]);
    }
}
