//! Chat-completion backends: live HTTP, deterministic replay, scripted
//! responses, and a recorder that writes replay fixtures.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SYNTHESIS_TEMPERATURE: f64 = 0.2;
pub const COMPREHENSION_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_MODEL: &str = "gpt-4";

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub backend_id: String,
    pub latency: Duration,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("HTTP error {status}: {body}")]
    Http { status: u16, body: String },
    #[error("no replay entry for request hash {hash}")]
    ReplayMiss { hash: String },
    #[error("scripted backend has no responses left")]
    ScriptExhausted,
    #[error("completion is empty")]
    EmptyCompletion,
    #[error("environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub enum LlmBackend {
    /// OpenAI-compatible chat-completions endpoint.
    Http {
        endpoint: String,
        api_key_env: String,
        model: String,
        timeout: Duration,
    },
    /// Directory of `<sha256 hex>` files holding raw completion text.
    Replay { dir: PathBuf },
    /// Canned responses returned in order.
    Scripted { responses: Mutex<VecDeque<String>> },
    /// Forwards to `inner` and stores every response under its replay hash.
    Recording { inner: Box<LlmBackend>, dir: PathBuf },
}

impl std::fmt::Debug for LlmBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.id())
    }
}

impl LlmBackend {
    pub fn http(endpoint: impl Into<String>, api_key_env: impl Into<String>, model: impl Into<String>) -> Self {
        LlmBackend::Http {
            endpoint: endpoint.into(),
            api_key_env: api_key_env.into(),
            model: model.into(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn replay(dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(LlmError::Io {
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "replay directory does not exist"),
                path: dir,
            });
        }
        Ok(LlmBackend::Replay { dir })
    }

    pub fn scripted<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        LlmBackend::Scripted {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
        }
    }

    pub fn recording(inner: LlmBackend, dir: impl Into<PathBuf>) -> Self {
        LlmBackend::Recording {
            inner: Box::new(inner),
            dir: dir.into(),
        }
    }

    pub fn id(&self) -> String {
        match self {
            LlmBackend::Http { endpoint, model, .. } => format!("http:{model}@{endpoint}"),
            LlmBackend::Replay { dir } => format!("replay:{}", dir.display()),
            LlmBackend::Scripted { .. } => "scripted".into(),
            LlmBackend::Recording { inner, .. } => format!("recording:{}", inner.id()),
        }
    }

    /// Number of canned responses left, for scripted backends.
    pub fn remaining(&self) -> Option<usize> {
        match self {
            LlmBackend::Scripted { responses } => Some(lock(responses).len()),
            _ => None,
        }
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let start = Instant::now();
        let text = match self {
            LlmBackend::Http {
                endpoint,
                api_key_env,
                model,
                timeout,
            } => http_complete(endpoint, api_key_env, model, *timeout, req)?,
            LlmBackend::Replay { dir } => {
                let hash = replay_key(req);
                let path = dir.join(&hash);
                match fs::read_to_string(&path) {
                    Ok(t) => t,
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(LlmError::ReplayMiss { hash }),
                    Err(source) => return Err(LlmError::Io { path, source }),
                }
            }
            LlmBackend::Scripted { responses } => lock(responses).pop_front().ok_or(LlmError::ScriptExhausted)?,
            LlmBackend::Recording { inner, dir } => {
                let resp = inner.complete(req)?;
                fs::create_dir_all(dir).map_err(|source| LlmError::Io {
                    path: dir.clone(),
                    source,
                })?;
                let path = dir.join(replay_key(req));
                fs::write(&path, &resp.text).map_err(|source| LlmError::Io { path, source })?;
                resp.text
            }
        };
        Ok(ChatResponse {
            text,
            backend_id: self.id(),
            latency: start.elapsed(),
        })
    }

    /// Embedding vector for `text`; only the HTTP backend has an embedding
    /// endpoint.
    pub fn embed(&self, model: &str, text: &str) -> Result<Vec<f64>, LlmError> {
        match self {
            LlmBackend::Http {
                endpoint,
                api_key_env,
                timeout,
                ..
            } => {
                let url = format!("{}/v1/embeddings", endpoint.trim_end_matches('/'));
                let body = json!({ "model": model, "input": text });
                let v = post_json(&url, api_key_env, *timeout, &body)?;
                v["data"][0]["embedding"]
                    .as_array()
                    .and_then(|a| a.iter().map(|x| x.as_f64()).collect::<Option<Vec<_>>>())
                    .ok_or_else(|| LlmError::Http {
                        status: 200,
                        body: "response has no data[0].embedding array".into(),
                    })
            }
            LlmBackend::Recording { inner, .. } => inner.embed(model, text),
            other => Err(LlmError::Unsupported(format!(
                "backend {} has no embedding endpoint",
                other.id()
            ))),
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Replay key: SHA-256 over the canonical JSON array `[system, user, model]`
/// with CRLF normalized to LF. Temperature is not part of the key.
pub fn replay_key(req: &ChatRequest) -> String {
    let norm = |s: &str| s.replace("\r\n", "\n");
    let canon = serde_json::to_string(&[norm(&req.system), norm(&req.user), norm(&req.model)])
        .expect("string array serializes");
    hex::encode(Sha256::digest(canon.as_bytes()))
}

fn post_json(
    url: &str,
    api_key_env: &str,
    timeout: Duration,
    body: &serde_json::Value,
) -> Result<serde_json::Value, LlmError> {
    let key = std::env::var(api_key_env).map_err(|_| LlmError::MissingApiKey(api_key_env.to_string()))?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let transport = |e: ureq::Error| LlmError::Http {
        status: 0,
        body: e.to_string(),
    };
    let mut resp = agent
        .post(url)
        .header("Authorization", &format!("Bearer {key}"))
        .send_json(body)
        .map_err(transport)?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(transport)?;
    if !(200..300).contains(&status) {
        return Err(LlmError::Http { status, body: text });
    }
    serde_json::from_str(&text).map_err(|e| LlmError::Http {
        status,
        body: format!("invalid JSON response: {e}"),
    })
}

fn http_complete(
    endpoint: &str,
    api_key_env: &str,
    model: &str,
    timeout: Duration,
    req: &ChatRequest,
) -> Result<String, LlmError> {
    let url = format!("{}/v1/chat/completions", endpoint.trim_end_matches('/'));
    let mut messages = Vec::new();
    if !req.system.is_empty() {
        messages.push(json!({"role": "system", "content": req.system}));
    }
    messages.push(json!({"role": "user", "content": req.user}));
    let body = json!({
        "model": if req.model.is_empty() { model } else { &req.model },
        "messages": messages,
        "temperature": req.temperature,
    });
    let v = post_json(&url, api_key_env, timeout, &body)?;
    v["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| LlmError::Http {
            status: 200,
            body: "response has no choices[0].message.content".into(),
        })
}

/// Contents of the first fenced block, or the trimmed text when there is no
/// fence. An info string after the opening fence (```c) is dropped.
pub fn extract_code(text: &str) -> Result<String, LlmError> {
    let out = match text.find("```") {
        Some(open) => {
            let after = &text[open + 3..];
            let body = match after.find('\n') {
                Some(nl) => &after[nl + 1..],
                None => after,
            };
            let body = match body.find("```") {
                Some(close) => &body[..close],
                None => body,
            };
            body.trim_end_matches(['\n', '\r']).to_string()
        }
        None => text.trim().to_string(),
    };
    if out.trim().is_empty() {
        return Err(LlmError::EmptyCompletion);
    }
    Ok(out)
}

/// Load a JSON array of strings as a scripted backend.
pub fn scripted_from_file(path: &Path) -> Result<LlmBackend, LlmError> {
    let text = fs::read_to_string(path).map_err(|source| LlmError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let items: Vec<String> = serde_json::from_str(&text).map_err(|e| LlmError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })?;
    Ok(LlmBackend::scripted(items))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> ChatRequest {
        ChatRequest {
            system: "sys".into(),
            user: user.into(),
            temperature: 0.2,
            model: "m".into(),
        }
    }

    #[test]
    fn scripted_in_order_then_exhausted() {
        let b = LlmBackend::scripted(["hello", "world"]);
        assert_eq!(b.complete(&req("a")).unwrap().text, "hello");
        assert_eq!(b.complete(&req("b")).unwrap().text, "world");
        assert!(matches!(b.complete(&req("c")), Err(LlmError::ScriptExhausted)));
    }

    #[test]
    fn replay_hit_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let r = req("trace");
        std::fs::write(dir.path().join(replay_key(&r)), "stored").unwrap();
        let b = LlmBackend::replay(dir.path()).unwrap();
        assert_eq!(b.complete(&r).unwrap().text, "stored");
        assert_eq!(b.complete(&r).unwrap().text, "stored");
        match b.complete(&req("other")) {
            Err(LlmError::ReplayMiss { hash }) => assert_eq!(hash, replay_key(&req("other"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn replay_requires_directory() {
        assert!(LlmBackend::replay("/nonexistent/replay/dir").is_err());
    }

    #[test]
    fn replay_key_ignores_temperature_and_line_endings() {
        let a = req("line1\nline2");
        let mut b = req("line1\r\nline2");
        b.temperature = 0.9;
        assert_eq!(replay_key(&a), replay_key(&b));
        let mut c = a.clone();
        c.model = "other".into();
        assert_ne!(replay_key(&a), replay_key(&c));
        assert_eq!(replay_key(&a).len(), 64);
    }

    #[test]
    fn recording_writes_replayable_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let rec = LlmBackend::recording(LlmBackend::scripted(["x"]), dir.path());
        rec.complete(&req("q")).unwrap();
        let replay = LlmBackend::replay(dir.path()).unwrap();
        assert_eq!(replay.complete(&req("q")).unwrap().text, "x");
    }

    #[test]
    fn extract_code_rules() {
        assert_eq!(extract_code("```\nkprobe:f { }\n```").unwrap(), "kprobe:f { }");
        assert_eq!(extract_code("explanation\n```c\nA\n```\n```\nB\n```").unwrap(), "A");
        assert_eq!(extract_code("   kprobe:f { }  ").unwrap(), "kprobe:f { }");
        assert!(matches!(extract_code("  \n "), Err(LlmError::EmptyCompletion)));
        assert!(matches!(extract_code("```\n```"), Err(LlmError::EmptyCompletion)));
        let once = extract_code("  plain text ").unwrap();
        assert_eq!(extract_code(&once).unwrap(), once);
    }

    #[test]
    fn http_without_key_fails_fast() {
        let b = LlmBackend::http("http://127.0.0.1:9", "BPFSYNTH_TEST_UNSET_KEY", "m");
        assert!(matches!(b.complete(&req("x")), Err(LlmError::MissingApiKey(_))));
    }
}
