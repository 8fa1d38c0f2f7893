//! Prompt assembly and candidate generation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::btparse::{parse, Program};
use crate::example_store::{ExampleStore, StoreError};
use crate::llm::{extract_code, ChatRequest, LlmBackend, LlmError, SYNTHESIS_TEMPERATURE};
use crate::templates::{fill, Templates};

/// Pipeline stage that rejected a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// The reply held no parseable program.
    Parse,
    /// Annotation failed (unparseable or structure-changing reply).
    Comprehension,
    Symexec,
    SafetyGate,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Parse => "parse",
            Stage::Comprehension => "comprehension",
            Stage::Symexec => "symexec",
            Stage::SafetyGate => "safety_gate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub stage: Stage,
    pub message: String,
    pub trial_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExamplePair {
    pub prompt: String,
    pub program: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisPrompt {
    pub system: String,
    pub examples: Vec<ExamplePair>,
    pub user_request: String,
    pub feedback: Vec<FeedbackRecord>,
    /// The rendered user message.
    pub user: String,
}

impl SynthesisPrompt {
    /// Characters in the system and user messages together.
    pub fn len(&self) -> usize {
        self.system.chars().count() + self.user.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_request(&self, model: &str) -> ChatRequest {
        ChatRequest {
            system: self.system.clone(),
            user: self.user.clone(),
            temperature: SYNTHESIS_TEMPERATURE,
            model: model.to_string(),
        }
    }
}

/// Assemble the request, the `k` most similar stored examples and every
/// earlier failure, in trial order.
pub fn build_prompt(
    request: &str,
    store: &ExampleStore,
    history: &[FeedbackRecord],
    k: usize,
    templates: &Templates,
) -> Result<SynthesisPrompt, StoreError> {
    let examples: Vec<ExamplePair> = store
        .query(request, k)?
        .into_iter()
        .map(|s| ExamplePair {
            prompt: s.record.prompt,
            program: s.record.program,
        })
        .collect();
    let mut feedback = history.to_vec();
    feedback.sort_by_key(|f| f.trial_index);

    let mut user = fill(&templates.synthesis_request, &[("request", request)]);
    for (i, ex) in examples.iter().enumerate() {
        let index = (i + 1).to_string();
        user.push_str(&fill(
            &templates.synthesis_example,
            &[
                ("index", &index),
                ("prompt", &ex.prompt),
                ("program", ex.program.trim_end()),
            ],
        ));
    }
    for f in &feedback {
        let trial = f.trial_index.to_string();
        user.push_str(&fill(
            &templates.synthesis_feedback,
            &[("trial", &trial), ("stage", f.stage.as_str()), ("message", &f.message)],
        ));
    }
    if !feedback.is_empty() {
        user.push_str(&templates.synthesis_feedback_footer);
    }
    Ok(SynthesisPrompt {
        system: templates.synthesis_system.clone(),
        examples,
        user_request: request.to_string(),
        feedback,
        user,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("the reply contained no program")]
    EmptyCompletion,
    #[error("the program does not parse: {message}")]
    Parse { message: String, code: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub program: Program,
    /// Program text as extracted from the reply.
    pub code: String,
}

/// Ask the LLM for a program and parse its reply.
pub fn synthesize(prompt: &SynthesisPrompt, llm: &LlmBackend, model: &str) -> Result<Candidate, SynthesisError> {
    let resp = llm.complete(&prompt.to_request(model))?;
    let code = match extract_code(&resp.text) {
        Ok(c) => c,
        Err(LlmError::EmptyCompletion) => return Err(SynthesisError::EmptyCompletion),
        Err(e) => return Err(e.into()),
    };
    match parse(&code) {
        Ok(program) => Ok(Candidate { program, code }),
        Err(e) => Err(SynthesisError::Parse {
            message: e.to_string(),
            code,
        }),
    }
}
