use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;
use walkdir::WalkDir;

use super::{Contract, ContractError, ContractStore};
use crate::llm::{extract_code, ChatRequest, LlmBackend, LlmError, COMPREHENSION_TEMPERATURE};
use crate::templates::{fill, Templates};

/// A file-scope function definition found by the pattern scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScannedFunction {
    pub name: String,
    pub prototype: String,
    /// Cleaned text of the comment block ending on the line above the
    /// definition; empty when there is none.
    pub semantics: String,
    pub source: String,
    /// 1-based line of the definition.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedResponse {
    pub function: String,
    pub file: PathBuf,
    pub reason: String,
}

#[derive(Debug)]
pub struct BuildReport {
    pub store: ContractStore,
    pub scanned: usize,
    pub malformed: Vec<MalformedResponse>,
}

const KEYWORDS: [&str; 8] = ["if", "for", "while", "switch", "return", "sizeof", "else", "do"];

fn signature_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^[ \t]*((?:[A-Za-z_]\w*[ \t\r\n\*]+)+?)\**([A-Za-z_]\w*)[ \t]*\(([^;{}()]*(?:\([^;{}()]*\)[^;{}()]*)*)\)[ \t\r\n]*\{")
            .expect("signature regex compiles")
    })
}

/// Replace comment and string contents with spaces, keeping newlines and
/// byte offsets, so braces inside them do not count.
fn mask(text: &str) -> Vec<u8> {
    let src = text.as_bytes();
    let mut out = src.to_vec();
    let mut i = 0;
    while i < src.len() {
        match src[i] {
            b'/' if src.get(i + 1) == Some(&b'/') => {
                while i < src.len() && src[i] != b'\n' {
                    out[i] = b' ';
                    i += 1;
                }
            }
            b'/' if src.get(i + 1) == Some(&b'*') => {
                let end = text[i + 2..].find("*/").map_or(src.len(), |e| i + 2 + e + 2);
                for b in &mut out[i..end] {
                    if *b != b'\n' {
                        *b = b' ';
                    }
                }
                i = end;
            }
            q @ (b'"' | b'\'') => {
                i += 1;
                while i < src.len() && src[i] != q && src[i] != b'\n' {
                    if src[i] == b'\\' {
                        out[i] = b' ';
                        i += 1;
                    }
                    if i < src.len() {
                        out[i] = b' ';
                        i += 1;
                    }
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    out
}

/// Find file-scope function definitions: `<ret-type> <name>(<params>) {`
/// at brace depth zero.
pub fn scan_functions(text: &str) -> Vec<ScannedFunction> {
    let masked = mask(text);
    let masked_str = String::from_utf8_lossy(&masked).into_owned();
    let mut depth_at = vec![0i32; masked.len() + 1];
    let mut d = 0i32;
    for (i, b) in masked.iter().enumerate() {
        depth_at[i] = d;
        match b {
            b'{' => d += 1,
            b'}' => d = (d - 1).max(0),
            _ => {}
        }
    }
    depth_at[masked.len()] = d;

    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for caps in signature_re().captures_iter(&masked_str) {
        let whole = caps.get(0).expect("match");
        let ret = caps.get(1).expect("return type").as_str();
        let name = caps.get(2).expect("name").as_str();
        let start = caps.get(1).expect("return type").start();
        if depth_at[start] != 0 || KEYWORDS.contains(&name) {
            continue;
        }
        if ret.split_whitespace().any(|t| KEYWORDS.contains(&t.trim_matches('*'))) {
            continue;
        }
        let open = whole.end() - 1;
        let mut depth = 0;
        let mut close = None;
        for (i, b) in masked.iter().enumerate().skip(open) {
            match b {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        let Some(close) = close else { continue };
        let sig_end = caps.get(3).expect("params").end() + 1;
        let prototype = text[start..sig_end].split_whitespace().collect::<Vec<_>>().join(" ");
        let line = text[..start].matches('\n').count() + 1;
        out.push(ScannedFunction {
            name: name.to_string(),
            prototype,
            semantics: preceding_comment(&lines, line - 1),
            source: text[start..=close].to_string(),
            line,
        });
    }
    out
}

/// Comment block ending on the line just above `def_idx` (0-based).
fn preceding_comment(lines: &[&str], def_idx: usize) -> String {
    if def_idx == 0 {
        return String::new();
    }
    let above = lines[def_idx - 1].trim();
    let mut raw: Vec<&str> = Vec::new();
    if above.ends_with("*/") {
        let mut i = def_idx - 1;
        loop {
            raw.push(lines[i]);
            if lines[i].contains("/*") || i == 0 {
                break;
            }
            i -= 1;
        }
        raw.reverse();
        let cleaned: Vec<String> = raw
            .iter()
            .map(|l| {
                let mut t = l.trim();
                if let Some(p) = t.find("/*") {
                    t = t[p + 2..].trim_start_matches('*');
                }
                if let Some(p) = t.rfind("*/") {
                    t = &t[..p];
                }
                t.trim().trim_start_matches('*').trim().to_string()
            })
            .collect();
        return join_trimmed(cleaned);
    }
    if above.starts_with("//") {
        let mut i = def_idx;
        while i > 0 && lines[i - 1].trim().starts_with("//") {
            i -= 1;
        }
        let cleaned = lines[i..def_idx]
            .iter()
            .map(|l| l.trim().trim_start_matches('/').trim().to_string())
            .collect();
        return join_trimmed(cleaned);
    }
    String::new()
}

fn join_trimmed(mut lines: Vec<String>) -> String {
    while lines.first().is_some_and(|l| l.is_empty()) {
        lines.remove(0);
    }
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

/// Scan every `.c`/`.h` file under `corpus_dir` (sorted traversal), ask the
/// LLM for each function's conditions, and write the resulting store to
/// `out`. Malformed replies are skipped and listed in the report.
pub fn build_dataset(
    corpus_dir: &Path,
    llm: &LlmBackend,
    model: &str,
    templates: &Templates,
    out: &Path,
) -> Result<BuildReport, ContractError> {
    let mut store = ContractStore::new();
    let mut malformed = Vec::new();
    let mut scanned = 0;
    for entry in WalkDir::new(corpus_dir).sort_by_file_name() {
        let entry = entry.map_err(|e| ContractError::Io {
            path: corpus_dir.to_path_buf(),
            source: e.into(),
        })?;
        let path = entry.path();
        let is_c = path.extension().is_some_and(|e| e == "c" || e == "h");
        if !entry.file_type().is_file() || !is_c {
            continue;
        }
        let bytes = std::fs::read(path).map_err(|source| ContractError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8_lossy(&bytes);
        for f in scan_functions(&text) {
            scanned += 1;
            let key = format!("kprobe:{}", f.name);
            if store.entries.contains_key(&key) {
                log::info!(
                    "{}: {} already defined, keeping the first definition",
                    path.display(),
                    f.name
                );
                continue;
            }
            let req = ChatRequest {
                system: templates.contract_system.clone(),
                user: fill(
                    &templates.contract_user,
                    &[
                        ("prototype", &f.prototype),
                        ("semantics", &f.semantics),
                        ("source", &f.source),
                    ],
                ),
                temperature: COMPREHENSION_TEMPERATURE,
                model: model.to_string(),
            };
            let resp = llm.complete(&req)?;
            match parse_reply(&key, &resp.text) {
                Ok(mut c) => {
                    c.semantics = Some(f.semantics.clone());
                    c.prototype = Some(f.prototype.clone());
                    store.insert(c);
                }
                Err(reason) => malformed.push(MalformedResponse {
                    function: f.name.clone(),
                    file: path.to_path_buf(),
                    reason,
                }),
            }
        }
    }
    store.save(out)?;
    store.source_path = Some(out.to_path_buf());
    Ok(BuildReport {
        store,
        scanned,
        malformed,
    })
}

fn parse_reply(key: &str, text: &str) -> Result<Contract, String> {
    let code = match extract_code(text) {
        Ok(c) => c,
        Err(LlmError::EmptyCompletion) => return Err("empty completion".into()),
        Err(e) => return Err(e.to_string()),
    };
    let v: Value = serde_json::from_str(&code).map_err(|e| format!("not JSON: {e}"))?;
    let Value::Object(mut obj) = v else {
        return Err("reply is not a JSON object".into());
    };
    obj.remove("semantics");
    obj.remove("prototype");
    Contract::from_value(key, &Value::Object(obj)).map_err(|e| e.to_string())
}
