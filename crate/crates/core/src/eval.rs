//! Batch evaluation of synthesis sessions over a labeled prompt dataset,
//! reporting accuracy, false-positive and false-negative rates.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::btparse::{extract_probes, render, Program};
use crate::example_store::StoreError;
use crate::llm::LlmBackend;
use crate::orchestrator::{run_session, SessionConfig, SessionStatus};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Judge {
    /// The program's attach points equal this set, e.g. `kprobe:tcp_connect`.
    ProbeMatch { probes: Vec<String> },
    /// Every pattern matches the rendered program.
    RegexChecks { patterns: Vec<String> },
    /// A human verdict, with the file it was recorded in.
    ManualLabel {
        correct: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCase {
    pub id: String,
    pub prompt: String,
    #[serde(default)]
    pub reference_program: String,
    pub judge: Judge,
    /// Canned LLM replies used instead of the configured backend. Each
    /// iteration starts again from the first reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Vec<String>>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    BadCase { path: PathBuf, line: usize, reason: String },
    #[error("the dataset has no cases")]
    Empty,
    #[error("iterations and workers must be at least 1")]
    Options,
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Read a JSONL dataset. Blank lines are skipped; ids must be unique.
pub fn load_cases(path: &Path) -> Result<Vec<EvalCase>, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cases: Vec<EvalCase> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| EvalError::BadCase {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let c: EvalCase = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if cases.iter().any(|x| x.id == c.id) {
            return Err(bad(format!("duplicate case id `{}`", c.id)));
        }
        cases.push(c);
    }
    if cases.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(cases)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Accurate,
    FalsePositive,
    FalseNegative,
    /// The session aborted or the judge could not decide. Excluded from
    /// the rates.
    Error,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Accurate => "accurate",
            Classification::FalsePositive => "false_positive",
            Classification::FalseNegative => "false_negative",
            Classification::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    /// 1-based.
    pub iteration: usize,
    pub classification: Classification,
    pub trial_count: usize,
    pub messages: Vec<String>,
}

/// A count over a denominator, kept exact until printed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub num: usize,
    pub den: usize,
}

impl Fraction {
    /// Zero when the denominator is zero.
    pub fn value(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}", self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Metrics {
    /// Case-iterations that were classified, errors excluded.
    pub n: usize,
    pub accurate: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub errors: usize,
}

impl Metrics {
    pub fn from_rows(rows: &[EvalRow]) -> Self {
        let mut m = Metrics::default();
        for r in rows {
            match r.classification {
                Classification::Accurate => m.accurate += 1,
                Classification::FalsePositive => m.false_positives += 1,
                Classification::FalseNegative => m.false_negatives += 1,
                Classification::Error => m.errors += 1,
            }
        }
        m.n = m.accurate + m.false_positives + m.false_negatives;
        m
    }

    pub fn accuracy(&self) -> Fraction {
        Fraction {
            num: self.accurate,
            den: self.n,
        }
    }

    pub fn fp(&self) -> Fraction {
        Fraction {
            num: self.false_positives,
            den: self.n,
        }
    }

    pub fn fn_rate(&self) -> Fraction {
        Fraction {
            num: self.false_negatives,
            den: self.n,
        }
    }
}

#[derive(Serialize)]
struct MetricsJson {
    n: usize,
    accurate: usize,
    false_positives: usize,
    false_negatives: usize,
    errors: usize,
    accuracy: f64,
    fp: f64,
    #[serde(rename = "fn")]
    fn_: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iterations: usize,
    pub metrics: Metrics,
    /// Ordered by case, then iteration.
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Pretty JSON with a trailing newline. Holds no timings, so identical
    /// runs give identical bytes.
    pub fn to_json(&self) -> String {
        let m = &self.metrics;
        let v = serde_json::json!({
            "iterations": self.iterations,
            "metrics": MetricsJson {
                n: m.n,
                accurate: m.accurate,
                false_positives: m.false_positives,
                false_negatives: m.false_negatives,
                errors: m.errors,
                accuracy: m.accuracy().value(),
                fp: m.fp().value(),
                fn_: m.fn_rate().value(),
            },
            "rows": self.rows,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-case breakdown: how many iterations landed in each class.
    pub fn table(&self) -> String {
        let mut ids: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !ids.contains(&r.id.as_str()) {
                ids.push(&r.id);
            }
        }
        let width = ids.iter().map(|s| s.len()).max().unwrap_or(2).max(4);
        let mut out = format!("{:<width$}  accurate  fp  fn  error\n", "case");
        for id in ids {
            let count = |c: Classification| self.rows.iter().filter(|r| r.id == id && r.classification == c).count();
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>2}  {:>2}  {:>5}\n",
                id,
                count(Classification::Accurate),
                count(Classification::FalsePositive),
                count(Classification::FalseNegative),
                count(Classification::Error),
            ));
        }
        let m = &self.metrics;
        out.push_str(&format!(
            "accuracy {} ({}/{}), fp {} ({}/{}), fn {} ({}/{}), errors {}\n",
            m.accuracy(),
            m.accurate,
            m.n,
            m.fp(),
            m.false_positives,
            m.n,
            m.fn_rate(),
            m.false_negatives,
            m.n,
            m.errors
        ));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub iterations: usize,
    pub workers: usize,
    /// Freeze the example store for the run so cases cannot see each
    /// other's results.
    pub freeze_examples: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            iterations: 1,
            workers: 1,
            freeze_examples: true,
        }
    }
}

/// Judge a successful program. `Err` means the judge could not decide.
pub fn judge(j: &Judge, program: &Program) -> Result<bool, String> {
    match j {
        Judge::ProbeMatch { probes } => {
            if probes.is_empty() {
                return Err("probe_match judge lists no probes".into());
            }
            let want: BTreeSet<String> = probes.iter().map(|p| p.trim().to_string()).collect();
            let got: BTreeSet<String> = extract_probes(program).iter().map(|p| p.to_string()).collect();
            Ok(want == got)
        }
        Judge::RegexChecks { patterns } => {
            if patterns.is_empty() {
                return Err("regex_checks judge lists no patterns".into());
            }
            let text = render(program);
            for p in patterns {
                let re = Regex::new(p).map_err(|e| format!("bad pattern `{p}`: {e}"))?;
                if !re.is_match(&text) {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Judge::ManualLabel { correct, .. } => Ok(*correct),
    }
}

fn run_one(case: &EvalCase, iteration: usize, cfg: &SessionConfig) -> EvalRow {
    let mut cfg = cfg.clone();
    if let Some(script) = &case.script {
        let llm = Arc::new(LlmBackend::scripted(script.clone()));
        cfg.synthesis_llm = llm.clone();
        cfg.comprehension_llm = llm;
    }
    let row = |classification, trial_count, messages| EvalRow {
        id: case.id.clone(),
        iteration,
        classification,
        trial_count,
        messages,
    };
    let result = match run_session(&case.prompt, &cfg) {
        Ok(r) => r,
        Err(e) => return row(Classification::Error, 0, vec![format!("session error: {e}")]),
    };
    let messages: Vec<String> = result
        .history()
        .into_iter()
        .map(|f| format!("{}: {}", f.stage, f.message))
        .collect();
    let trial_count = result.trial_count();
    match &result.status {
        SessionStatus::NeedsUserInfo { .. } => row(Classification::FalseNegative, trial_count, messages),
        SessionStatus::Success { program, .. } => match judge(&case.judge, program) {
            Ok(true) => row(Classification::Accurate, trial_count, messages),
            Ok(false) => row(Classification::FalsePositive, trial_count, messages),
            Err(e) => {
                let mut messages = messages;
                messages.push(format!("judge error: {e}"));
                row(Classification::Error, trial_count, messages)
            }
        },
    }
}

/// Run every case `iterations` times on up to `workers` threads.
pub fn run_eval(cases: &[EvalCase], cfg: &SessionConfig, opts: EvalOptions) -> Result<EvalReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::Empty);
    }
    if opts.iterations == 0 || opts.workers == 0 {
        return Err(EvalError::Options);
    }
    let froze = opts.freeze_examples && !cfg.examples.is_frozen();
    if froze {
        cfg.examples.freeze()?;
    }
    let jobs: Vec<(usize, usize)> = (0..cases.len())
        .flat_map(|c| (1..=opts.iterations).map(move |it| (c, it)))
        .collect();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<EvalRow>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|s| {
        for _ in 0..opts.workers.min(jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(c, it)) = jobs.get(i) else { break };
                let r = run_one(&cases[c], it, cfg);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    if froze {
        cfg.examples.unfreeze()?;
    }
    let rows: Vec<EvalRow> = slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect();
    Ok(EvalReport {
        iterations: opts.iterations,
        metrics: Metrics::from_rows(&rows),
        rows,
    })
}
