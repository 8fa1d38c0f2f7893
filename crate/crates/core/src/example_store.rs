//! Prompt/program example pairs with embeddings, persisted as JSON Lines and
//! queried by exact cosine similarity.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{LlmBackend, LlmError};

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_K: usize = 3;
pub const COMPREHENSION_K: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Bpftrace,
    Libbpf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Curated,
    Success,
    Failure,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Curated => "curated",
            Outcome::Success => "success",
            Outcome::Failure => "failure",
        }
    }
}

impl std::str::FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "curated" => Ok(Outcome::Curated),
            "success" => Ok(Outcome::Success),
            "failure" => Ok(Outcome::Failure),
            other => Err(format!("unknown outcome `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleRecord {
    pub id: String,
    pub prompt: String,
    pub program: String,
    pub framework: Framework,
    pub embedding: Vec<f64>,
    pub outcome: Outcome,
    #[serde(with = "iso8601")]
    pub created_at: DateTime<Utc>,
}

mod iso8601 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::AutoSi, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub enum Embedder {
    HashedBagOfTokens {
        dimension: usize,
    },
    LlmEmbedding {
        backend: Arc<LlmBackend>,
        model: String,
        dimension: usize,
    },
}

impl Default for Embedder {
    fn default() -> Self {
        Embedder::HashedBagOfTokens {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl Embedder {
    pub fn dimension(&self) -> usize {
        match self {
            Embedder::HashedBagOfTokens { dimension } | Embedder::LlmEmbedding { dimension, .. } => *dimension,
        }
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        match self {
            Embedder::HashedBagOfTokens { dimension } => Ok(hashed_bag_of_tokens(text, *dimension)),
            Embedder::LlmEmbedding {
                backend,
                model,
                dimension,
            } => {
                let v = backend.embed(model, text)?;
                if v.len() != *dimension {
                    return Err(LlmError::Unsupported(format!(
                        "embedding has {} dimensions, store expects {dimension}",
                        v.len()
                    )));
                }
                Ok(v)
            }
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercase, split on non-alphanumerics, count FNV-1a buckets, L2-normalize.
pub fn hashed_bag_of_tokens(text: &str, dimension: usize) -> Vec<f64> {
    let mut v = vec![0.0; dimension];
    let lower = text.to_lowercase();
    for tok in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        v[(fnv1a(tok.as_bytes()) % dimension as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("embedding has {got} dimensions, store expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("example store is frozen")]
    Frozen,
    #[error("{path}:{line}: {reason}")]
    BadRecord { path: PathBuf, line: usize, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Embed(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub record: ExampleRecord,
    pub score: f64,
}

/// Example store. Adds are serialized by the write lock; queries see a
/// consistent snapshot.
#[derive(Debug)]
pub struct ExampleStore {
    path: Option<PathBuf>,
    embedder: Embedder,
    records: RwLock<Vec<ExampleRecord>>,
    frozen: AtomicBool,
}

impl ExampleStore {
    pub fn in_memory(embedder: Embedder) -> Self {
        ExampleStore {
            path: None,
            embedder,
            records: RwLock::new(Vec::new()),
            frozen: AtomicBool::new(false),
        }
    }

    /// Open the JSONL file at `path`; a missing file is an empty store.
    pub fn open(path: &Path, embedder: Embedder) -> Result<Self, StoreError> {
        let mut records: Vec<ExampleRecord> = Vec::new();
        match fs::read_to_string(path) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let bad = |reason: String| StoreError::BadRecord {
                        path: path.to_path_buf(),
                        line: i + 1,
                        reason,
                    };
                    let r: ExampleRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
                    if r.embedding.len() != embedder.dimension() {
                        return Err(bad(format!(
                            "embedding has {} dimensions, store expects {}",
                            r.embedding.len(),
                            embedder.dimension()
                        )));
                    }
                    if records.iter().any(|x| x.id == r.id) {
                        return Err(bad(format!("duplicate id `{}`", r.id)));
                    }
                    records.push(r);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(source) => {
                return Err(StoreError::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
        }
        Ok(ExampleStore {
            path: Some(path.to_path_buf()),
            embedder,
            records: RwLock::new(records),
            frozen: AtomicBool::new(false),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn len(&self) -> usize {
        self.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<ExampleRecord> {
        self.read().clone()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Vec<ExampleRecord>> {
        self.records.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Vec<ExampleRecord>> {
        self.records.write().unwrap_or_else(|e| e.into_inner())
    }

    fn marker(&self) -> Option<PathBuf> {
        self.path.as_ref().map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".frozen");
            PathBuf::from(s)
        })
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen.load(Ordering::SeqCst) || self.marker().is_some_and(|m| m.exists())
    }

    /// Freeze the store. File-backed stores persist this as a
    /// `<path>.frozen` marker so later sessions see it too.
    pub fn freeze(&self) -> Result<(), StoreError> {
        self.frozen.store(true, Ordering::SeqCst);
        if let Some(m) = self.marker() {
            fs::write(&m, b"").map_err(|source| StoreError::Io { path: m, source })?;
        }
        Ok(())
    }

    pub fn unfreeze(&self) -> Result<(), StoreError> {
        self.frozen.store(false, Ordering::SeqCst);
        if let Some(m) = self.marker() {
            if m.exists() {
                fs::remove_file(&m).map_err(|source| StoreError::Io { path: m, source })?;
            }
        }
        Ok(())
    }

    /// Remove every record, in memory and on disk.
    pub fn clear(&self) -> Result<(), StoreError> {
        let mut recs = self.write();
        if let Some(p) = &self.path {
            if p.exists() {
                fs::write(p, b"").map_err(|source| StoreError::Io {
                    path: p.clone(),
                    source,
                })?;
            }
        }
        recs.clear();
        Ok(())
    }

    pub fn add(&self, record: ExampleRecord) -> Result<(), StoreError> {
        if self.is_frozen() {
            return Err(StoreError::Frozen);
        }
        if record.embedding.len() != self.embedder.dimension() {
            return Err(StoreError::Dimension {
                expected: self.embedder.dimension(),
                got: record.embedding.len(),
            });
        }
        let mut recs = self.write();
        if recs.iter().any(|r| r.id == record.id) {
            return Err(StoreError::DuplicateId(record.id));
        }
        if let Some(p) = &self.path {
            let line = serde_json::to_string(&record).expect("record serializes");
            let io = |source| StoreError::Io {
                path: p.clone(),
                source,
            };
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io)?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(p).map_err(io)?;
            writeln!(f, "{line}").map_err(io)?;
        }
        recs.push(record);
        Ok(())
    }

    /// Embed `prompt` and build a record with a content-derived id.
    pub fn make_record(
        &self,
        prompt: &str,
        program: &str,
        outcome: Outcome,
        created_at: DateTime<Utc>,
    ) -> Result<ExampleRecord, StoreError> {
        let embedding = self.embedder.embed(prompt)?;
        let stamp = created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true);
        let digest = Sha256::digest(
            serde_json::to_string(&[prompt, program, outcome.as_str(), &stamp])
                .expect("strings serialize")
                .as_bytes(),
        );
        Ok(ExampleRecord {
            id: format!("{}-{}", outcome.as_str(), &hex::encode(digest)[..16]),
            prompt: prompt.to_string(),
            program: program.to_string(),
            framework: Framework::Bpftrace,
            embedding,
            outcome,
            created_at,
        })
    }

    /// Top-`k` curated/success records by cosine similarity to `prompt`.
    pub fn query(&self, prompt: &str, k: usize) -> Result<Vec<ScoredExample>, StoreError> {
        self.query_filtered(prompt, k, |o| o != Outcome::Failure)
    }

    pub fn query_filtered(
        &self,
        prompt: &str,
        k: usize,
        keep: impl Fn(Outcome) -> bool,
    ) -> Result<Vec<ScoredExample>, StoreError> {
        let recs = self.read();
        if k == 0 || recs.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.embedder.embed(prompt)?;
        let mut scored: Vec<ScoredExample> = recs
            .iter()
            .filter(|r| keep(r.outcome))
            .map(|r| ScoredExample {
                score: cosine(&q, &r.embedding),
                record: r.clone(),
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.record.created_at.cmp(&b.record.created_at))
                .then_with(|| a.record.id.cmp(&b.record.id))
        });
        scored.truncate(k);
        Ok(scored)
    }
}
