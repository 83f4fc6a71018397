use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::module::{ModuleConfig, PredictionModule, PredictorKind};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

const HEADER_FILE: &str = "predictor.json";
const BLOB_FILE: &str = "predictor.bin";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModuleConfig,
    num_labels: usize,
    vocab_size: usize,
    n_params: usize,
    n_pretrained: usize,
}

impl PredictionModule {
    /// Writes `predictor.json` (shapes and config) and `predictor.bin`
    /// (parameters then the frozen embedding table, little-endian f64) into
    /// `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = Header {
            config: self.config.clone(),
            num_labels: self.num_labels,
            vocab_size: self.vocab_size,
            n_params: self.params.len(),
            n_pretrained: self.pretrained.len(),
        };
        let hp = dir.join(HEADER_FILE);
        fs::write(&hp, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(&hp, e))?;
        let mut blob = Vec::with_capacity(8 * (self.params.len() + self.pretrained.len()));
        for x in self.params.iter().chain(&self.pretrained) {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        let bp = dir.join(BLOB_FILE);
        fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let hp = dir.join(HEADER_FILE);
        let header: Header = serde_json::from_slice(&fs::read(&hp).map_err(|e| Error::io(&hp, e))?)?;
        let mut module = PredictionModule::new(header.config, header.num_labels, header.vocab_size)?;
        if module.params.len() != header.n_params || module.pretrained.len() != header.n_pretrained {
            return Err(Error::Data(format!("{}: shapes disagree with config", hp.display())));
        }
        let bp = dir.join(BLOB_FILE);
        let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        if blob.len() != 8 * (header.n_params + header.n_pretrained) {
            return Err(Error::Data(format!("{}: expected {} values", bp.display(), header.n_params + header.n_pretrained)));
        }
        let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for p in module.params.iter_mut() {
            *p = values.next().unwrap();
        }
        for p in module.pretrained.iter_mut() {
            *p = values.next().unwrap();
        }
        Ok(module)
    }
}

/// Reads `word v1 ... vd` lines into a `V x dim` table aligned with `vocab`.
/// Words missing from the file keep the rows of `fallback`. Returns the
/// table and the number of vocabulary words found.
pub fn load_word_vectors(path: impl AsRef<Path>, vocab: &Vocabulary, dim: usize, fallback: &[f64]) -> Result<(Vec<f64>, usize)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = fallback.to_vec();
    let mut found = 0;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Load {
                path: path.into(),
                line: n + 1,
                message: e.to_string(),
            })?;
        if values.len() != dim {
            return Err(Error::Load {
                path: path.into(),
                line: n + 1,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        if let Some(id) = vocab.id(word) {
            table[id as usize * dim..(id as usize + 1) * dim].copy_from_slice(&values);
            found += 1;
        }
    }
    Ok((table, found))
}

impl PredictionModule {
    /// Initializes the embedding table from a word-vector file.
    pub fn load_pretrained(&mut self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<usize> {
        if self.config.kind != PredictorKind::AttnEmbed {
            return Err(Error::Config("pretrained vectors need an attention module".into()));
        }
        let (table, found) = load_word_vectors(path, vocab, self.config.dim, &self.pretrained)?;
        self.set_pretrained_embeddings(table)?;
        Ok(found)
    }
}
