//! The synthesis loop: prompt, synthesize, annotate, verify, gate, and feed
//! failures back until a candidate passes or the trial budget runs out.

use std::sync::Arc;

use chrono::Utc;

use crate::btparse::{render, strip_annotations, Program};
use crate::comprehension::{annotate, direct_annotate, AnnotatedProgram, ComprehensionError};
use crate::contracts::ContractStore;
use crate::example_store::{ExampleStore, Framework, Outcome, StoreError, DEFAULT_K};
use crate::llm::{LlmBackend, LlmError};
use crate::safety::{self, SafetyMode, SafetyReport};
use crate::symexec::{verify, KernelTypeMap, Verdict, VerifyOptions};
use crate::synthesis::{build_prompt, synthesize, FeedbackRecord, Stage, SynthesisError};
use crate::templates::Templates;

pub const DEFAULT_MAX_TRIALS: usize = 3;

/// How candidates get their annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnnotationMode {
    /// Ask the comprehension LLM.
    #[default]
    Llm,
    /// Derive them from contracts only, without an LLM call.
    Direct,
}

#[derive(Clone)]
pub struct SessionConfig {
    pub max_trials: usize,
    pub verify: VerifyOptions,
    pub k_examples: usize,
    pub framework: Framework,
    pub synthesis_llm: Arc<LlmBackend>,
    pub comprehension_llm: Arc<LlmBackend>,
    pub model: String,
    pub contracts: Arc<ContractStore>,
    pub examples: Arc<ExampleStore>,
    pub comprehension_examples: Option<Arc<ExampleStore>>,
    pub types: KernelTypeMap,
    pub safety: SafetyMode,
    pub annotation: AnnotationMode,
    pub templates: Templates,
}

impl SessionConfig {
    /// Defaults around one LLM used for both synthesis and comprehension.
    pub fn new(llm: Arc<LlmBackend>, contracts: Arc<ContractStore>, examples: Arc<ExampleStore>) -> Self {
        SessionConfig {
            max_trials: DEFAULT_MAX_TRIALS,
            verify: VerifyOptions::default(),
            k_examples: DEFAULT_K,
            framework: Framework::Bpftrace,
            synthesis_llm: llm.clone(),
            comprehension_llm: llm,
            model: crate::llm::DEFAULT_MODEL.to_string(),
            contracts,
            examples,
            comprehension_examples: None,
            types: KernelTypeMap::default(),
            safety: SafetyMode::Builtin,
            annotation: AnnotationMode::Llm,
            templates: Templates::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error("LLM backend failed: {0}")]
    Llm(#[from] LlmError),
    #[error("example store: {0}")]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone)]
pub struct Trial {
    /// 1-based.
    pub index: usize,
    /// User message sent to the synthesis LLM.
    pub prompt: String,
    /// Program text extracted from the reply, when there was one.
    pub candidate: Option<String>,
    pub annotated: Option<String>,
    pub verdict: Option<Verdict>,
    pub safety: Option<SafetyReport>,
    pub feedback: Option<FeedbackRecord>,
}

#[derive(Debug, Clone)]
pub enum SessionStatus {
    Success { program: Program, trial_count: usize },
    NeedsUserInfo { history: Vec<FeedbackRecord> },
}

#[derive(Debug, Clone)]
pub struct SessionResult {
    pub status: SessionStatus,
    pub trials: Vec<Trial>,
}

impl SessionResult {
    pub fn is_success(&self) -> bool {
        matches!(self.status, SessionStatus::Success { .. })
    }

    pub fn trial_count(&self) -> usize {
        self.trials.len()
    }

    /// Feedback emitted by every trial, in order.
    pub fn history(&self) -> Vec<FeedbackRecord> {
        self.trials.iter().filter_map(|t| t.feedback.clone()).collect()
    }
}

/// Outcome of one candidate after synthesis.
enum Checked {
    Passed(Program),
    Rejected(Stage, String),
}

pub fn run_session(request: &str, cfg: &SessionConfig) -> Result<SessionResult, SessionError> {
    if cfg.max_trials == 0 {
        return Err(SessionError::Config("max_trials must be at least 1".into()));
    }
    if cfg.framework != Framework::Bpftrace {
        return Err(SessionError::Config("only bpftrace programs can be synthesized".into()));
    }
    let mut history: Vec<FeedbackRecord> = Vec::new();
    let mut trials = Vec::new();
    for index in 1..=cfg.max_trials {
        let prompt = build_prompt(request, &cfg.examples, &history, cfg.k_examples, &cfg.templates)?;
        let mut trial = Trial {
            index,
            prompt: prompt.user.clone(),
            candidate: None,
            annotated: None,
            verdict: None,
            safety: None,
            feedback: None,
        };
        let outcome = match synthesize(&prompt, &cfg.synthesis_llm, &cfg.model) {
            Err(SynthesisError::Llm(e)) => return Err(e.into()),
            Err(SynthesisError::EmptyCompletion) => {
                Checked::Rejected(Stage::Parse, "the reply did not contain a program".into())
            }
            Err(SynthesisError::Parse { message, code }) => {
                trial.candidate = Some(code);
                Checked::Rejected(Stage::Parse, message)
            }
            Ok(c) => {
                trial.candidate = Some(c.code.clone());
                check_candidate(&strip_annotations(&c.program), request, cfg, &mut trial)?
            }
        };
        match outcome {
            Checked::Passed(program) => {
                if !cfg.examples.is_frozen() {
                    let rec = cfg
                        .examples
                        .make_record(request, &render(&program), Outcome::Success, Utc::now())?;
                    cfg.examples.add(rec)?;
                }
                trials.push(trial);
                return Ok(SessionResult {
                    status: SessionStatus::Success {
                        program,
                        trial_count: index,
                    },
                    trials,
                });
            }
            Checked::Rejected(stage, message) => {
                log::info!("trial {index} rejected at {stage}: {message}");
                let fb = FeedbackRecord {
                    stage,
                    message,
                    trial_index: index,
                };
                history.push(fb.clone());
                trial.feedback = Some(fb);
                trials.push(trial);
            }
        }
    }
    if !cfg.examples.is_frozen() {
        if let Some(last) = trials.iter().rev().find_map(|t| t.candidate.clone()) {
            let rec = cfg.examples.make_record(request, &last, Outcome::Failure, Utc::now())?;
            cfg.examples.add(rec)?;
        }
    }
    Ok(SessionResult {
        status: SessionStatus::NeedsUserInfo { history },
        trials,
    })
}

fn check_candidate(
    candidate: &Program,
    request: &str,
    cfg: &SessionConfig,
    trial: &mut Trial,
) -> Result<Checked, SessionError> {
    let annotated: AnnotatedProgram = match cfg.annotation {
        AnnotationMode::Direct => direct_annotate(candidate, &cfg.contracts).expect("candidate was stripped"),
        AnnotationMode::Llm => match annotate(
            candidate,
            request,
            &cfg.contracts,
            &cfg.comprehension_llm,
            &cfg.model,
            &cfg.templates,
            cfg.comprehension_examples.as_deref(),
        ) {
            Ok(a) => a,
            Err(ComprehensionError::Llm(e)) => return Err(e.into()),
            Err(ComprehensionError::Store(e)) => return Err(e.into()),
            Err(e) => return Ok(Checked::Rejected(Stage::Comprehension, e.to_string())),
        },
    };
    trial.annotated = Some(render(&annotated.program));
    let verdict = match verify(&annotated.program, &cfg.types, &cfg.verify) {
        Ok(v) => v,
        Err(e) => return Ok(Checked::Rejected(Stage::Symexec, e.to_string())),
    };
    trial.verdict = Some(verdict.clone());
    if !verdict.is_verified() {
        return Ok(Checked::Rejected(Stage::Symexec, verdict.to_string()));
    }
    let stripped = strip_annotations(&annotated.program);
    let report = match safety::check(&stripped, &cfg.safety) {
        Ok(r) => r,
        Err(e) => return Ok(Checked::Rejected(Stage::SafetyGate, e.to_string())),
    };
    trial.safety = Some(report.clone());
    if !report.ok {
        return Ok(Checked::Rejected(Stage::SafetyGate, report.summary()));
    }
    Ok(Checked::Passed(stripped))
}
