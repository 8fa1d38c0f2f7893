//! Per-probe pre/post condition contracts: loading, canonical saving,
//! probe-to-contract lookup, and dataset construction from a C corpus.

mod builder;
mod condition;

pub use builder::{build_dataset, scan_functions, BuildReport, MalformedResponse, ScannedFunction};
pub use condition::{parse_relation, ConditionEntry, Relation};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::btparse::ProbeSpec;

const KEY_KINDS: [&str; 3] = ["kprobe", "kretprobe", "tracepoint"];

#[derive(Debug, Error)]
pub enum ContractError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("contract file is not valid JSON: {0}")]
    Json(String),
    #[error("contract `{key}`: {reason}")]
    Schema { key: String, reason: String },
    #[error("LLM backend failed: {0}")]
    Llm(#[from] crate::llm::LlmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Contract {
    pub probe_key: String,
    /// Sorted by subject.
    pub pre: Vec<ConditionEntry>,
    /// Sorted by subject.
    pub post: Vec<ConditionEntry>,
    pub semantics: Option<String>,
    pub prototype: Option<String>,
}

impl Contract {
    pub fn new(probe_key: impl Into<String>) -> Self {
        Contract {
            probe_key: probe_key.into(),
            ..Default::default()
        }
    }

    /// Kind part of the key (`kretprobe` in `kretprobe:tcp_connect_init`).
    pub fn kind(&self) -> &str {
        self.probe_key.split_once(':').map_or("", |(k, _)| k)
    }

    /// Symbol part of the key, which for tracepoints keeps the category.
    pub fn symbol(&self) -> &str {
        self.probe_key.split_once(':').map_or("", |(_, s)| s)
    }

    /// JSON object form (`pre`, `post` and any descriptive fields).
    pub fn to_value(&self) -> Value {
        let mut obj = Map::new();
        let conds = |entries: &[ConditionEntry]| {
            Value::Object(
                entries
                    .iter()
                    .map(|e| (e.subject.clone(), Value::String(e.relation.clone())))
                    .collect(),
            )
        };
        if !self.pre.is_empty() {
            obj.insert("pre".into(), conds(&self.pre));
        }
        if !self.post.is_empty() {
            obj.insert("post".into(), conds(&self.post));
        }
        if let Some(s) = &self.semantics {
            obj.insert("semantics".into(), Value::String(s.clone()));
        }
        if let Some(p) = &self.prototype {
            obj.insert("prototype".into(), Value::String(p.clone()));
        }
        Value::Object(obj)
    }

    fn from_value(key: &str, v: &Value) -> Result<Contract, ContractError> {
        let schema = |reason: String| ContractError::Schema {
            key: key.to_string(),
            reason,
        };
        validate_key(key).map_err(schema)?;
        let obj = v
            .as_object()
            .ok_or_else(|| schema(format!("value must be an object, found {}", type_name(v))))?;
        let mut c = Contract::new(key);
        for (field, val) in obj {
            match field.as_str() {
                "pre" | "post" => {
                    let conds = val
                        .as_object()
                        .ok_or_else(|| schema(format!("`{field}` must be an object, found {}", type_name(val))))?;
                    let mut entries = Vec::with_capacity(conds.len());
                    for (subject, rel) in conds {
                        let rel = rel
                            .as_str()
                            .ok_or_else(|| schema(format!("`{field}.{subject}` must be a string")))?;
                        if subject.trim().is_empty() {
                            return Err(schema(format!("`{field}` has an empty subject")));
                        }
                        entries.push(ConditionEntry::new(subject.clone(), rel));
                    }
                    entries.sort();
                    if field == "pre" {
                        c.pre = entries;
                    } else {
                        c.post = entries;
                    }
                }
                "semantics" | "prototype" => {
                    let s = val
                        .as_str()
                        .ok_or_else(|| schema(format!("`{field}` must be a string")))?
                        .to_string();
                    if field == "semantics" {
                        c.semantics = Some(s);
                    } else {
                        c.prototype = Some(s);
                    }
                }
                other => return Err(schema(format!("unknown field `{other}`"))),
            }
        }
        Ok(c)
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn validate_key(key: &str) -> Result<(), String> {
    let Some((kind, symbol)) = key.split_once(':') else {
        return Err("key must have the form `<kind>:<symbol>`".into());
    };
    if !KEY_KINDS.contains(&kind) {
        return Err(format!("unsupported probe kind `{kind}`"));
    }
    if symbol.is_empty() || symbol.chars().any(char::is_whitespace) {
        return Err("symbol must be non-empty and contain no whitespace".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContractStore {
    pub entries: BTreeMap<String, Contract>,
    pub source_path: Option<PathBuf>,
}

impl ContractStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, c: Contract) {
        self.entries.insert(c.probe_key.clone(), c);
    }

    pub fn load(path: &Path) -> Result<Self, ContractError> {
        let text = fs::read_to_string(path).map_err(|source| ContractError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut store = Self::from_json_str(&text)?;
        store.source_path = Some(path.to_path_buf());
        Ok(store)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ContractError> {
        let v: Value = serde_json::from_str(text).map_err(|e| ContractError::Json(e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| ContractError::Json(format!("top level must be an object, found {}", type_name(&v))))?;
        let mut store = ContractStore::new();
        for (key, val) in obj {
            store.insert(Contract::from_value(key, val)?);
        }
        Ok(store)
    }

    pub fn to_value(&self) -> Value {
        Value::Object(self.entries.iter().map(|(k, c)| (k.clone(), c.to_value())).collect())
    }

    /// Canonical form: sorted keys, two-space indentation, trailing newline.
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("JSON value serializes");
        s.push('\n');
        s
    }

    /// Canonical single-line form with sorted keys.
    pub fn to_json_compact(&self) -> String {
        serde_json::to_string(&self.to_value()).expect("JSON value serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ContractError> {
        fs::write(path, self.to_json_pretty()).map_err(|source| ContractError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Contracts relevant to `probe`. An exact key match is returned alone.
    /// Otherwise every contract whose symbol starts with the probe's target
    /// is returned, most similar key first (longest common prefix with the
    /// probe key, then lexicographic key).
    pub fn lookup(&self, probe: &ProbeSpec) -> Vec<&Contract> {
        let key = probe.key();
        if let Some(c) = self.entries.get(&key) {
            return vec![c];
        }
        let mut hits: Vec<(usize, &Contract)> = self
            .entries
            .values()
            .filter(|c| c.symbol().starts_with(probe.target.as_str()))
            .map(|c| (common_prefix_len(&key, &c.probe_key), c))
            .collect();
        hits.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.probe_key.cmp(&b.1.probe_key)));
        hits.into_iter().map(|(_, c)| c).collect()
    }
}

fn common_prefix_len(a: &str, b: &str) -> usize {
    a.chars().zip(b.chars()).take_while(|(x, y)| x == y).count()
}
