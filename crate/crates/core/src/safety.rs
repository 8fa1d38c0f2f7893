//! Static safety checks run on a verified program after its annotations
//! have been stripped, standing in for the kernel's eBPF verifier.

use std::io::Read;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::btparse::{count_annotations, render, Builtin, Expr, ExprKind, ProbeKind, Program, Stmt, StmtKind};

/// Largest accepted `unroll` count.
pub const MAX_UNROLL: u64 = 100;
pub const EXTERNAL_TIMEOUT: Duration = Duration::from_secs(20);

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SafetyMode {
    #[default]
    Builtin,
    /// Command template run on the rendered program; `{file}` is replaced
    /// by the path of a temporary copy, or the path is appended when the
    /// template has no placeholder.
    External { command: String },
}

impl FromStr for SafetyMode {
    type Err = String;

    /// `builtin` or `external:<command template>`.
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "builtin" {
            return Ok(SafetyMode::Builtin);
        }
        match s.strip_prefix("external:") {
            Some(cmd) if !cmd.trim().is_empty() => Ok(SafetyMode::External {
                command: cmd.trim().to_string(),
            }),
            _ => Err(format!(
                "unknown safety mode `{s}` (expected builtin or external:<command>)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub ok: bool,
    pub messages: Vec<String>,
    pub mode: ModeKind,
}

impl SafetyReport {
    /// Messages joined one per line, for feedback to the synthesizer.
    pub fn summary(&self) -> String {
        self.messages.join("\n")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SafetyError {
    #[error("program still contains {0} assume/assert statements; strip them before the safety check")]
    AnnotationsPresent(usize),
    #[error("safety command `{0}` was not found")]
    ExternalToolMissing(String),
    #[error("safety command template is empty")]
    EmptyCommand,
    #[error("running safety command: {0}")]
    Io(#[from] std::io::Error),
}

pub fn check(p: &Program, mode: &SafetyMode) -> Result<SafetyReport, SafetyError> {
    let n = count_annotations(p);
    if n > 0 {
        return Err(SafetyError::AnnotationsPresent(n));
    }
    match mode {
        SafetyMode::Builtin => Ok(check_builtin(p)),
        SafetyMode::External { command } => check_external(p, command),
    }
}

fn check_builtin(p: &Program) -> SafetyReport {
    let mut messages = Vec::new();
    for clause in &p.clauses {
        let returns = clause
            .attach_points
            .iter()
            .all(|a| matches!(a.kind, ProbeKind::Kretprobe | ProbeKind::Uretprobe));
        for a in &clause.attach_points {
            let valid = match a.kind {
                ProbeKind::Tracepoint => {
                    let parts: Vec<&str> = a.target.split(':').collect();
                    parts.len() == 2 && parts.iter().all(|s| is_ident(s))
                }
                ProbeKind::Kprobe | ProbeKind::Kretprobe => is_ident(&a.target),
                ProbeKind::Uprobe | ProbeKind::Uretprobe => a
                    .target
                    .rsplit_once(':')
                    .is_some_and(|(bin, sym)| !bin.is_empty() && is_ident(sym)),
            };
            if !valid {
                messages.push(format!("line {}: invalid attach point `{a}`", a.span.line));
            }
        }
        let mut exprs: Vec<&Expr> = Vec::new();
        if let Some(pred) = &clause.predicate {
            exprs.push(pred);
        }
        check_block(&clause.body, &mut messages, &mut exprs);
        for e in exprs {
            e.visit(&mut |x| match &x.kind {
                ExprKind::Map { name, keys } => check_keys(name, keys, x.span.line, &mut messages),
                ExprKind::Builtin(Builtin::Retval) if !returns => messages.push(format!(
                    "line {}: `retval` is only available in return probes",
                    x.span.line
                )),
                _ => {}
            });
        }
    }
    SafetyReport {
        ok: messages.is_empty(),
        messages,
        mode: ModeKind::Builtin,
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn check_keys(map: &str, keys: &[Expr], line: u32, messages: &mut Vec<String>) {
    for k in keys {
        if !matches!(k.kind, ExprKind::Builtin(_) | ExprKind::Scratch(_)) {
            messages.push(format!(
                "line {line}: key of map @{map} must be a builtin or a scratch variable, found `{}`",
                crate::btparse::render_expr(k)
            ));
        }
    }
}

fn check_block<'a>(stmts: &'a [Stmt], messages: &mut Vec<String>, exprs: &mut Vec<&'a Expr>) {
    for s in stmts {
        let line = s.span.line;
        match &s.kind {
            StmtKind::Assign { value, .. } => exprs.push(value),
            StmtKind::MapAssign { map, keys, value } => {
                check_keys(map, keys, line, messages);
                exprs.extend(keys);
                exprs.push(value);
            }
            StmtKind::FieldAssign { target, value } => {
                messages.push(format!(
                    "line {line}: write through pointer `{}`; kernel memory is read-only",
                    crate::btparse::render_expr(target)
                ));
                exprs.push(value);
            }
            StmtKind::Delete { map, keys } => {
                check_keys(map, keys, line, messages);
                exprs.extend(keys);
            }
            StmtKind::Printf { args, .. } => exprs.extend(args),
            StmtKind::Expr(e) | StmtKind::Assume(e) | StmtKind::Assert(e) => exprs.push(e),
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                exprs.push(cond);
                check_block(then_body, messages, exprs);
                check_block(else_body, messages, exprs);
            }
            StmtKind::Unroll { count, body } => {
                if *count == 0 || *count > MAX_UNROLL {
                    messages.push(format!("line {line}: loop bound {count} is outside 1..={MAX_UNROLL}"));
                }
                check_block(body, messages, exprs);
            }
        }
    }
}

fn check_external(p: &Program, template: &str) -> Result<SafetyReport, SafetyError> {
    let mut file = tempfile::Builder::new().suffix(".bt").tempfile()?;
    std::io::Write::write_all(&mut file, render(p).as_bytes())?;
    let path = file.path().to_string_lossy().into_owned();
    let mut argv: Vec<String> = template
        .split_whitespace()
        .map(|a| a.replace("{file}", &path))
        .collect();
    if !template.contains("{file}") {
        argv.push(path);
    }
    let (program, args) = argv.split_first().ok_or(SafetyError::EmptyCommand)?;
    let mut child = match Command::new(program)
        .args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
    {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(SafetyError::ExternalToolMissing(program.clone()))
        }
        Err(e) => return Err(e.into()),
    };
    let mut stderr = child.stderr.take().expect("piped stderr");
    let reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });
    let status = child.wait_timeout(EXTERNAL_TIMEOUT)?;
    let Some(status) = status else {
        let _ = child.kill();
        let _ = child.wait();
        let _ = reader.join();
        return Ok(SafetyReport {
            ok: false,
            messages: vec![format!(
                "`{program}` did not finish within {}s",
                EXTERNAL_TIMEOUT.as_secs()
            )],
            mode: ModeKind::External,
        });
    };
    let err = reader.join().unwrap_or_default();
    let mut messages: Vec<String> = err
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    let ok = status.success();
    if !ok && messages.is_empty() {
        messages.push(format!("`{program}` failed with {status}"));
    }
    Ok(SafetyReport {
        ok,
        messages,
        mode: ModeKind::External,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::btparse::parse;

    const V1: &str = include_str!("../fixtures/programs/tcp_connect_v1.bt");
    const V1_ANNOTATED: &str = include_str!("../fixtures/programs/tcp_connect_v1_annotated.bt");
    const KILL: &str = include_str!("../fixtures/programs/kill_trace.bt");

    fn builtin(src: &str) -> SafetyReport {
        check(&parse(src).unwrap(), &SafetyMode::Builtin).unwrap()
    }

    #[test]
    fn fixture_programs_pass() {
        for src in [V1, KILL] {
            let r = builtin(src);
            assert!(r.ok, "{:?}", r.messages);
            assert_eq!(r.mode, ModeKind::Builtin);
        }
    }

    #[test]
    fn annotations_must_be_stripped() {
        let err = check(&parse(V1_ANNOTATED).unwrap(), &SafetyMode::Builtin).unwrap_err();
        assert!(matches!(err, SafetyError::AnnotationsPresent(9)));
    }

    #[test]
    fn pointer_writes_are_rejected() {
        let r = builtin("kprobe:f {\n    $sk = arg0;\n    $sk->field = 1;\n}\n");
        assert!(!r.ok);
        assert_eq!(r.messages.len(), 1);
        assert!(r.messages[0].starts_with("line 3:"), "{}", r.messages[0]);
    }

    #[test]
    fn other_rules() {
        assert!(!builtin("kprobe:f { @m[1 + 2] = 1; }").ok);
        assert!(!builtin("kprobe:f { printf(\"%d\", @m[arg0 + 1]); }").ok);
        assert!(!builtin("kprobe:f { $r = retval; }").ok);
        assert!(builtin("kretprobe:f { $r = retval; }").ok);
        assert!(!builtin("kprobe:f { unroll(1000) { @n = 1; } }").ok);
        assert!(builtin("kprobe:f { unroll(4) { @n[tid] = 1; } }").ok);
        assert!(!builtin("tracepoint:sys_enter_kill { @n = 1; }").ok);
    }

    #[test]
    fn external_mode() {
        let p = parse(V1).unwrap();
        let ok = check(
            &p,
            &SafetyMode::External {
                command: "true {file}".into(),
            },
        )
        .unwrap();
        assert!(ok.ok);
        let bad = check(
            &p,
            &SafetyMode::External {
                command: "false".into(),
            },
        )
        .unwrap();
        assert!(!bad.ok && !bad.messages.is_empty());
        let missing = check(
            &p,
            &SafetyMode::External {
                command: "/nonexistent/bpf-verifier {file}".into(),
            },
        );
        assert!(matches!(missing, Err(SafetyError::ExternalToolMissing(_))));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("builtin".parse::<SafetyMode>().unwrap(), SafetyMode::Builtin);
        assert_eq!(
            "external:bpftrace --dry-run {file}".parse::<SafetyMode>().unwrap(),
            SafetyMode::External {
                command: "bpftrace --dry-run {file}".into()
            }
        );
        assert!("kernel".parse::<SafetyMode>().is_err());
    }
}
