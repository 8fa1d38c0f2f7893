//! Annotation of candidate programs with `assume`/`assert` statements taken
//! from kernel contracts and from the user's request.

use chrono::Utc;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::btparse::{
    count_annotations, extract_probes, parse, render, render_expr, Expr, ExprKind, ProbeKind, ProbeSpec, Program, Stmt,
    StmtKind,
};
use crate::contracts::{ConditionEntry, Contract, ContractStore};
use crate::example_store::{ExampleStore, Outcome, StoreError, COMPREHENSION_K};
use crate::llm::{extract_code, ChatRequest, LlmBackend, LlmError, COMPREHENSION_TEMPERATURE};
use crate::templates::{fill, Templates};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Contract {
        probe_key: String,
        subject: String,
        relation: String,
    },
    PromptInferred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Assume,
    Assert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Annotation {
    /// Clause index within the program.
    pub clause: usize,
    pub kind: AnnotationKind,
    /// Rendered condition.
    pub condition: String,
    pub provenance: Provenance,
}

/// A program with annotations, listed in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedProgram {
    pub program: Program,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, thiserror::Error)]
pub enum ComprehensionError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("the annotated program does not parse: {0}")]
    AnnotationParse(String),
    #[error("the annotated program changes the original statements: {0}")]
    StructureViolated(String),
    #[error("the candidate already contains {0} assume/assert statements")]
    AnnotationsPresent(usize),
}

/// Contracts matched by the program's attach points, deduplicated, in
/// first-match order.
pub fn matched_contracts<'s>(p: &Program, store: &'s ContractStore) -> Vec<&'s Contract> {
    let mut out: Vec<&Contract> = Vec::new();
    for probe in extract_probes(p) {
        for c in store.lookup(&probe) {
            if !out.iter().any(|o| o.probe_key == c.probe_key) {
                out.push(c);
            }
        }
    }
    out
}

fn contracts_json(contracts: &[&Contract]) -> String {
    let obj: Map<String, Value> = contracts.iter().map(|c| (c.probe_key.clone(), c.to_value())).collect();
    serde_json::to_string_pretty(&Value::Object(obj)).expect("JSON values serialize")
}

fn is_return_clause(points: &[ProbeSpec]) -> bool {
    points
        .iter()
        .all(|a| matches!(a.kind, ProbeKind::Kretprobe | ProbeKind::Uretprobe))
}

/// Tag each annotation with the contract entry it restates, if any.
fn provenance(p: &Program, store: &ContractStore) -> Vec<Annotation> {
    let mut out = Vec::new();
    for (ci, clause) in p.clauses.iter().enumerate() {
        let mut entries: Vec<(&Contract, &ConditionEntry, AnnotationKind, Expr)> = Vec::new();
        for probe in &clause.attach_points {
            for c in store.lookup(probe) {
                for (list, kind) in [(&c.pre, AnnotationKind::Assume), (&c.post, AnnotationKind::Assert)] {
                    for e in list {
                        if let Some(x) = e.to_expr() {
                            entries.push((c, e, kind, x));
                        }
                    }
                }
            }
        }
        crate::btparse::visit_block(&clause.body, &mut |s: &Stmt| {
            let (kind, cond) = match &s.kind {
                StmtKind::Assume(e) => (AnnotationKind::Assume, e),
                StmtKind::Assert(e) => (AnnotationKind::Assert, e),
                _ => return,
            };
            let provenance = entries.iter().find(|(_, _, k, x)| *k == kind && x == cond).map_or(
                Provenance::PromptInferred,
                |(c, e, _, _)| Provenance::Contract {
                    probe_key: c.probe_key.clone(),
                    subject: e.subject.clone(),
                    relation: e.relation.clone(),
                },
            );
            out.push(Annotation {
                clause: ci,
                kind,
                condition: render_expr(cond),
                provenance,
            });
        });
    }
    out
}

fn user_message(
    candidate: &Program,
    request: &str,
    contracts: &[&Contract],
    examples: Option<&ExampleStore>,
    templates: &Templates,
) -> Result<String, StoreError> {
    let mut user = String::new();
    if let Some(store) = examples {
        for (i, ex) in store.query(request, COMPREHENSION_K)?.iter().enumerate() {
            let index = (i + 1).to_string();
            user.push_str(&fill(
                &templates.comprehension_example,
                &[
                    ("index", &index),
                    ("prompt", &ex.record.prompt),
                    ("program", ex.record.program.trim_end()),
                ],
            ));
        }
    }
    let program = render(candidate);
    user.push_str(&fill(
        &templates.comprehension_user,
        &[
            ("request", request),
            ("contracts", &contracts_json(contracts)),
            ("program", program.trim_end()),
        ],
    ));
    Ok(user)
}

fn check_reply(text: &str, candidate: &Program) -> Result<Program, ComprehensionError> {
    let code = match extract_code(text) {
        Ok(c) => c,
        Err(LlmError::EmptyCompletion) => return Err(ComprehensionError::AnnotationParse("empty reply".into())),
        Err(e) => return Err(e.into()),
    };
    let program = parse(&code).map_err(|e| ComprehensionError::AnnotationParse(e.to_string()))?;
    let stripped = crate::btparse::strip_annotations(&program);
    if stripped != *candidate {
        return Err(ComprehensionError::StructureViolated(describe_difference(
            candidate, &stripped,
        )));
    }
    Ok(program)
}

fn describe_difference(original: &Program, stripped: &Program) -> String {
    if original.clauses.len() != stripped.clauses.len() {
        return format!(
            "expected {} probe clauses, found {}",
            original.clauses.len(),
            stripped.clauses.len()
        );
    }
    for (i, (a, b)) in original.clauses.iter().zip(&stripped.clauses).enumerate() {
        if a.attach_points != b.attach_points || a.predicate != b.predicate {
            return format!("probe clause {} has a different header", i + 1);
        }
        if a.body.len() != b.body.len() {
            return format!(
                "probe clause {} has {} statements besides annotations, expected {}",
                i + 1,
                b.body.len(),
                a.body.len()
            );
        }
        for (j, (x, y)) in a.body.iter().zip(&b.body).enumerate() {
            if x != y {
                return format!("statement {} of probe clause {} was changed", j + 1, i + 1);
            }
        }
    }
    "the programs differ".into()
}

/// Ask the LLM to annotate `candidate`. An unusable reply is retried once
/// with the reason attached before the error is returned.
pub fn annotate(
    candidate: &Program,
    request: &str,
    store: &ContractStore,
    llm: &LlmBackend,
    model: &str,
    templates: &Templates,
    examples: Option<&ExampleStore>,
) -> Result<AnnotatedProgram, ComprehensionError> {
    let n = count_annotations(candidate);
    if n > 0 {
        return Err(ComprehensionError::AnnotationsPresent(n));
    }
    let contracts = matched_contracts(candidate, store);
    let user = user_message(candidate, request, &contracts, examples, templates)?;
    let mut req = ChatRequest {
        system: templates.comprehension_system.clone(),
        user: user.clone(),
        temperature: COMPREHENSION_TEMPERATURE,
        model: model.to_string(),
    };
    let mut attempt = 0;
    let program = loop {
        let resp = llm.complete(&req)?;
        match check_reply(&resp.text, candidate) {
            Ok(p) => break p,
            Err(e @ (ComprehensionError::AnnotationParse(_) | ComprehensionError::StructureViolated(_)))
                if attempt == 0 =>
            {
                log::info!("annotation reply rejected, retrying: {e}");
                attempt += 1;
                req.user = format!(
                    "{user}{}",
                    fill(&templates.comprehension_retry, &[("reason", &e.to_string())])
                );
            }
            Err(e) => return Err(e),
        }
    };
    if let Some(ex) = examples {
        if !ex.is_frozen() {
            let rec = ex.make_record(request, &render(&program), Outcome::Success, Utc::now())?;
            ex.add(rec)?;
        }
    }
    let annotations = provenance(&program, store);
    Ok(AnnotatedProgram { program, annotations })
}

/// Annotate from contracts alone: checkable pre-conditions become `assume`
/// statements near the start of each clause, post-conditions become
/// trailing `assert` statements in return probes.
pub fn direct_annotate(candidate: &Program, store: &ContractStore) -> Result<AnnotatedProgram, ComprehensionError> {
    let n = count_annotations(candidate);
    if n > 0 {
        return Err(ComprehensionError::AnnotationsPresent(n));
    }
    let mut program = candidate.clone();
    let mut annotations = Vec::new();
    for (ci, clause) in program.clauses.iter_mut().enumerate() {
        let mut assumes: Vec<(Expr, Provenance)> = Vec::new();
        let mut asserts: Vec<(Expr, Provenance)> = Vec::new();
        let returns = is_return_clause(&clause.attach_points);
        for probe in &clause.attach_points {
            for c in store.lookup(probe) {
                let lists: [(&Vec<ConditionEntry>, bool); 2] = [(&c.pre, false), (&c.post, true)];
                for (list, is_post) in lists {
                    if is_post && !returns {
                        continue;
                    }
                    for e in list {
                        let Some(x) = e.to_expr() else { continue };
                        let target = if is_post { &mut asserts } else { &mut assumes };
                        if target.iter().any(|(y, _)| *y == x) {
                            continue;
                        }
                        target.push((
                            x,
                            Provenance::Contract {
                                probe_key: c.probe_key.clone(),
                                subject: e.subject.clone(),
                                relation: e.relation.clone(),
                            },
                        ));
                    }
                }
            }
        }
        let at = insertion_point(&clause.body, assumes.iter().map(|(e, _)| e));
        let mut body: Vec<Stmt> = clause.body[..at].to_vec();
        for (e, prov) in &assumes {
            body.push(Stmt::new(StmtKind::Assume(e.clone())));
            annotations.push(Annotation {
                clause: ci,
                kind: AnnotationKind::Assume,
                condition: render_expr(e),
                provenance: prov.clone(),
            });
        }
        body.extend_from_slice(&clause.body[at..]);
        for (e, prov) in &asserts {
            body.push(Stmt::new(StmtKind::Assert(e.clone())));
            annotations.push(Annotation {
                clause: ci,
                kind: AnnotationKind::Assert,
                condition: render_expr(e),
                provenance: prov.clone(),
            });
        }
        clause.body = body;
    }
    Ok(AnnotatedProgram { program, annotations })
}

/// Just after the last leading assignment that defines a scratch variable
/// the conditions mention; the clause start when there is none.
fn insertion_point<'e>(body: &[Stmt], conds: impl Iterator<Item = &'e Expr>) -> usize {
    let mut used = std::collections::HashSet::new();
    for c in conds {
        c.visit(&mut |x| {
            if let ExprKind::Scratch(n) = &x.kind {
                used.insert(n.clone());
            }
        });
    }
    let mut at = 0;
    for (i, s) in body.iter().enumerate() {
        match &s.kind {
            StmtKind::Assign { var, .. } => {
                if used.contains(var) {
                    at = i + 1;
                }
            }
            _ => break,
        }
    }
    at
}
