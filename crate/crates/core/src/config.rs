//! File-backed CLI configuration. Every key is optional; an empty file
//! means all defaults. Relative paths are resolved against the directory
//! holding the config file.
//!
//! ```toml
//! templates = "prompts.toml"     # default: bundled templates
//!
//! [llm]
//! backend = "http"               # http | replay | scripted
//! endpoint = "https://api.openai.com"
//! api_key_env = "OPENAI_API_KEY" # name of the variable, never the key
//! model = "gpt-4"
//! timeout_seconds = 120
//! replay_dir = "replies"         # backend = "replay"
//! script = "script.json"         # backend = "scripted": JSON array of replies
//! record_dir = "recorded"        # also save every reply for later replay
//! embedder = "hashed"            # hashed | llm
//! embedding_model = "text-embedding-3-small"
//! embedding_dimension = 256
//!
//! [session]
//! max_trials = 3
//! k_examples = 3
//! annotation = "llm"             # llm | direct
//!
//! [verify]
//! budget_seconds = 30
//! fork_cap = 64
//! solver = "bitblast"            # bitblast | enumerate | external:<command>
//! types = "types.json"           # default: built-in socket field widths
//!
//! [stores]
//! contracts = "contracts.json"   # default: no contracts
//! examples = "examples.jsonl"    # default: in-memory, empty
//! comprehension_examples = "annotations.jsonl"
//!
//! [safety]
//! mode = "builtin"               # builtin | external
//! command = "bpftrace --dry-run {file}"
//!
//! [eval]
//! iterations = 1
//! workers = 1
//! freeze_examples = true
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::contracts::ContractStore;
use crate::eval::EvalOptions;
use crate::example_store::{Embedder, ExampleStore, DEFAULT_DIMENSION, DEFAULT_K};
use crate::llm::{scripted_from_file, LlmBackend, DEFAULT_MODEL, DEFAULT_TIMEOUT};
use crate::orchestrator::{AnnotationMode, SessionConfig, DEFAULT_MAX_TRIALS};
use crate::safety::SafetyMode;
use crate::symexec::{KernelTypeMap, SolverBackend, VerifyOptions, DEFAULT_BUDGET, DEFAULT_FORK_CAP};
use crate::templates::Templates;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Toml { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("loading {what}: {message}")]
    Load { what: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hashed,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKey {
    Llm,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SafetyKey {
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmSection {
    pub backend: BackendKind,
    pub endpoint: String,
    pub api_key_env: String,
    pub model: String,
    pub timeout_seconds: u64,
    pub replay_dir: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub record_dir: Option<PathBuf>,
    pub embedder: EmbedderKind,
    pub embedding_model: String,
    pub embedding_dimension: usize,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            backend: BackendKind::Http,
            endpoint: "https://api.openai.com".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            model: DEFAULT_MODEL.into(),
            timeout_seconds: DEFAULT_TIMEOUT.as_secs(),
            replay_dir: None,
            script: None,
            record_dir: None,
            embedder: EmbedderKind::Hashed,
            embedding_model: "text-embedding-3-small".into(),
            embedding_dimension: DEFAULT_DIMENSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionSection {
    pub max_trials: usize,
    pub k_examples: usize,
    pub annotation: AnnotationKey,
}

impl Default for SessionSection {
    fn default() -> Self {
        SessionSection {
            max_trials: DEFAULT_MAX_TRIALS,
            k_examples: DEFAULT_K,
            annotation: AnnotationKey::Llm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub budget_seconds: f64,
    pub fork_cap: usize,
    pub solver: String,
    pub types: Option<PathBuf>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            budget_seconds: DEFAULT_BUDGET.as_secs_f64(),
            fork_cap: DEFAULT_FORK_CAP,
            solver: "bitblast".into(),
            types: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoreSection {
    pub contracts: Option<PathBuf>,
    pub examples: Option<PathBuf>,
    pub comprehension_examples: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetySection {
    pub mode: SafetyKey,
    pub command: String,
}

impl Default for SafetySection {
    fn default() -> Self {
        SafetySection {
            mode: SafetyKey::Builtin,
            command: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub iterations: usize,
    pub workers: usize,
    pub freeze_examples: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalOptions::default();
        EvalSection {
            iterations: d.iterations,
            workers: d.workers,
            freeze_examples: d.freeze_examples,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub templates: Option<PathBuf>,
    pub llm: LlmSection,
    pub session: SessionSection,
    pub verify: VerifySection,
    pub stores: StoreSection,
    pub safety: SafetySection,
    pub eval: EvalSection,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(x) = p {
        if x.is_relative() {
            *x = base.join(&*x);
        }
    }
}

impl CliConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Toml {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Parse `path` and resolve its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut c = Self::from_toml_str(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        for p in [
            &mut c.templates,
            &mut c.llm.replay_dir,
            &mut c.llm.script,
            &mut c.llm.record_dir,
            &mut c.verify.types,
            &mut c.stores.contracts,
            &mut c.stores.examples,
            &mut c.stores.comprehension_examples,
        ] {
            rebase(&base, p);
        }
        Ok(c)
    }

    pub fn verify_options(&self) -> Result<VerifyOptions, ConfigError> {
        let secs = self.verify.budget_seconds;
        if !(secs.is_finite() && secs >= 0.0) {
            return Err(ConfigError::Invalid(format!(
                "verify.budget_seconds must be non-negative, got {secs}"
            )));
        }
        if self.verify.fork_cap == 0 {
            return Err(ConfigError::Invalid("verify.fork_cap must be at least 1".into()));
        }
        Ok(VerifyOptions {
            budget: Duration::from_secs_f64(secs),
            fork_cap: self.verify.fork_cap,
            backend: self
                .verify
                .solver
                .parse::<SolverBackend>()
                .map_err(ConfigError::Invalid)?,
        })
    }

    pub fn safety_mode(&self) -> Result<SafetyMode, ConfigError> {
        match self.safety.mode {
            SafetyKey::Builtin => Ok(SafetyMode::Builtin),
            SafetyKey::External if self.safety.command.trim().is_empty() => Err(ConfigError::Invalid(
                "safety.mode = \"external\" needs safety.command".into(),
            )),
            SafetyKey::External => Ok(SafetyMode::External {
                command: self.safety.command.trim().to_string(),
            }),
        }
    }

    pub fn types(&self) -> Result<KernelTypeMap, ConfigError> {
        match &self.verify.types {
            None => Ok(KernelTypeMap::default()),
            Some(p) => KernelTypeMap::load(p).map_err(|e| ConfigError::Load {
                what: "kernel type map",
                message: e.to_string(),
            }),
        }
    }

    pub fn templates(&self) -> Result<Templates, ConfigError> {
        match &self.templates {
            None => Ok(Templates::default()),
            Some(p) => Templates::load(p).map_err(|e| ConfigError::Load {
                what: "templates",
                message: format!("{}: {e}", p.display()),
            }),
        }
    }

    pub fn contracts(&self) -> Result<ContractStore, ConfigError> {
        match &self.stores.contracts {
            None => Ok(ContractStore::new()),
            Some(p) => ContractStore::load(p).map_err(|e| ConfigError::Load {
                what: "contracts",
                message: e.to_string(),
            }),
        }
    }

    /// The LLM backend, wrapped in a recorder when `record_dir` is set.
    pub fn llm(&self) -> Result<LlmBackend, ConfigError> {
        let l = &self.llm;
        let load = |e: crate::llm::LlmError| ConfigError::Load {
            what: "LLM backend",
            message: e.to_string(),
        };
        let inner = match l.backend {
            BackendKind::Http => LlmBackend::Http {
                endpoint: l.endpoint.clone(),
                api_key_env: l.api_key_env.clone(),
                model: l.model.clone(),
                timeout: Duration::from_secs(l.timeout_seconds),
            },
            BackendKind::Replay => {
                let dir = l
                    .replay_dir
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("llm.backend = \"replay\" needs llm.replay_dir".into()))?;
                LlmBackend::replay(dir).map_err(load)?
            }
            BackendKind::Scripted => {
                let file = l
                    .script
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("llm.backend = \"scripted\" needs llm.script".into()))?;
                scripted_from_file(file).map_err(load)?
            }
        };
        Ok(match &l.record_dir {
            Some(dir) => LlmBackend::recording(inner, dir),
            None => inner,
        })
    }

    pub fn embedder(&self) -> Result<Embedder, ConfigError> {
        let l = &self.llm;
        if l.embedding_dimension == 0 {
            return Err(ConfigError::Invalid(
                "llm.embedding_dimension must be at least 1".into(),
            ));
        }
        Ok(match l.embedder {
            EmbedderKind::Hashed => Embedder::HashedBagOfTokens {
                dimension: l.embedding_dimension,
            },
            EmbedderKind::Llm => Embedder::LlmEmbedding {
                backend: Arc::new(LlmBackend::http(&l.endpoint, &l.api_key_env, &l.model)),
                model: l.embedding_model.clone(),
                dimension: l.embedding_dimension,
            },
        })
    }

    pub fn open_store(&self, path: Option<&Path>) -> Result<ExampleStore, ConfigError> {
        let embedder = self.embedder()?;
        match path {
            None => Ok(ExampleStore::in_memory(embedder)),
            Some(p) => ExampleStore::open(p, embedder).map_err(|e| ConfigError::Load {
                what: "example store",
                message: e.to_string(),
            }),
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            iterations: self.eval.iterations,
            workers: self.eval.workers,
            freeze_examples: self.eval.freeze_examples,
        }
    }

    /// Build a session around one LLM backend shared by synthesis and
    /// comprehension.
    pub fn session(&self) -> Result<SessionConfig, ConfigError> {
        if self.session.max_trials == 0 {
            return Err(ConfigError::Invalid("session.max_trials must be at least 1".into()));
        }
        let llm = Arc::new(self.llm()?);
        let examples = Arc::new(self.open_store(self.stores.examples.as_deref())?);
        let mut cfg = SessionConfig::new(llm, Arc::new(self.contracts()?), examples);
        cfg.max_trials = self.session.max_trials;
        cfg.k_examples = self.session.k_examples;
        cfg.model = self.llm.model.clone();
        cfg.verify = self.verify_options()?;
        cfg.types = self.types()?;
        cfg.safety = self.safety_mode()?;
        cfg.templates = self.templates()?;
        cfg.annotation = match self.session.annotation {
            AnnotationKey::Llm => AnnotationMode::Llm,
            AnnotationKey::Direct => AnnotationMode::Direct,
        };
        cfg.comprehension_examples = match &self.stores.comprehension_examples {
            None => None,
            Some(p) => Some(Arc::new(self.open_store(Some(p))?)),
        };
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = CliConfig::from_toml_str("", Path::new("x.toml")).unwrap();
        assert_eq!(c, CliConfig::default());
        assert_eq!(c.session.max_trials, 3);
        assert_eq!(c.session.k_examples, 3);
        assert_eq!(c.verify_options().unwrap(), VerifyOptions::default());
        assert_eq!(c.safety_mode().unwrap(), SafetyMode::Builtin);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in [
            "colour = 1",
            "[session]\nmax_tries = 3",
            "[llm]\nbackend = \"carrier-pigeon\"",
        ] {
            assert!(matches!(
                CliConfig::from_toml_str(bad, Path::new("x.toml")),
                Err(ConfigError::Toml { .. })
            ));
        }
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bpfsynth.toml");
        std::fs::write(
            &path,
            "[stores]\ncontracts = \"c.json\"\nexamples = \"/abs/e.jsonl\"\n[safety]\nmode = \"external\"\ncommand = \"true {file}\"\n",
        )
        .unwrap();
        let c = CliConfig::load(&path).unwrap();
        assert_eq!(c.stores.contracts, Some(dir.path().join("c.json")));
        assert_eq!(c.stores.examples, Some(PathBuf::from("/abs/e.jsonl")));
        assert_eq!(
            c.safety_mode().unwrap(),
            SafetyMode::External {
                command: "true {file}".into()
            }
        );
        assert!(matches!(
            CliConfig::load(&dir.path().join("missing.toml")),
            Err(ConfigError::Io { .. })
        ));
    }

    #[test]
    fn invalid_values() {
        let mut c = CliConfig::default();
        c.safety.mode = SafetyKey::External;
        assert!(c.safety_mode().is_err());
        c.verify.solver = "cvc9".into();
        assert!(c.verify_options().is_err());
        c.llm.backend = BackendKind::Replay;
        assert!(c.llm().is_err());
        let mut z = CliConfig::default();
        z.session.max_trials = 0;
        assert!(z.session().is_err());
    }

    #[test]
    fn scripted_session() {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("s.json");
        std::fs::write(&script, r#"["a", "b"]"#).unwrap();
        let mut c = CliConfig::default();
        c.llm.backend = BackendKind::Scripted;
        c.llm.script = Some(script);
        c.session.annotation = AnnotationKey::Direct;
        let s = c.session().unwrap();
        assert_eq!(s.synthesis_llm.remaining(), Some(2));
        assert_eq!(s.annotation, AnnotationMode::Direct);
        assert!(s.examples.path().is_none());
    }
}
