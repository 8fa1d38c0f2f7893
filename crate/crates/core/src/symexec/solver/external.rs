use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::Duration;

use wait_timeout::ChildExt;

use super::{SatResult, SolverError};
use crate::symexec::model::{Model, ModelValue, UfEntry};
use crate::symexec::smtlib::emit_query;
use crate::symexec::term::T;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn parse_sexps(text: &str) -> Result<Vec<Sexp>, String> {
    let chars: Vec<char> = text.chars().collect();
    let mut pos = 0;
    let mut out = Vec::new();
    loop {
        skip_ws(&chars, &mut pos);
        if pos >= chars.len() {
            return Ok(out);
        }
        out.push(parse_one(&chars, &mut pos)?);
    }
}

fn skip_ws(chars: &[char], pos: &mut usize) {
    while *pos < chars.len() {
        if chars[*pos] == ';' {
            while *pos < chars.len() && chars[*pos] != '\n' {
                *pos += 1;
            }
        } else if chars[*pos].is_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
}

fn parse_one(chars: &[char], pos: &mut usize) -> Result<Sexp, String> {
    skip_ws(chars, pos);
    match chars.get(*pos) {
        None => Err("unexpected end of solver output".into()),
        Some('(') => {
            *pos += 1;
            let mut items = Vec::new();
            loop {
                skip_ws(chars, pos);
                match chars.get(*pos) {
                    None => return Err("unbalanced parenthesis in solver output".into()),
                    Some(')') => {
                        *pos += 1;
                        return Ok(Sexp::List(items));
                    }
                    _ => items.push(parse_one(chars, pos)?),
                }
            }
        }
        Some(')') => Err("unexpected `)` in solver output".into()),
        Some(&q) if q == '|' || q == '"' => {
            let start = *pos;
            *pos += 1;
            while *pos < chars.len() && chars[*pos] != q {
                *pos += 1;
            }
            *pos += 1;
            Ok(Sexp::Atom(chars[start..(*pos).min(chars.len())].iter().collect()))
        }
        Some(_) => {
            let start = *pos;
            while *pos < chars.len() && !chars[*pos].is_whitespace() && chars[*pos] != '(' && chars[*pos] != ')' {
                *pos += 1;
            }
            Ok(Sexp::Atom(chars[start..*pos].iter().collect()))
        }
    }
}

fn parse_value(s: &Sexp) -> Result<u128, String> {
    match s {
        Sexp::Atom(a) if a.starts_with("#x") => u128::from_str_radix(&a[2..], 16).map_err(|e| e.to_string()),
        Sexp::Atom(a) if a.starts_with("#b") => u128::from_str_radix(&a[2..], 2).map_err(|e| e.to_string()),
        Sexp::Atom(a) if a == "true" => Ok(1),
        Sexp::Atom(a) if a == "false" => Ok(0),
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(u), Sexp::Atom(bv), Sexp::Atom(_)] if u == "_" && bv.starts_with("bv") => {
                bv[2..].parse().map_err(|e: std::num::ParseIntError| e.to_string())
            }
            _ => Err(format!("unrecognised value {s:?}")),
        },
        _ => Err(format!("unrecognised value {s:?}")),
    }
}

/// Values of one `(get-value ...)` response, in request order.
fn response_values(s: &Sexp) -> Result<Vec<u128>, String> {
    let Sexp::List(pairs) = s else {
        return Err(format!("expected a value list, got {s:?}"));
    };
    pairs
        .iter()
        .map(|p| match p {
            Sexp::List(kv) if kv.len() == 2 => parse_value(&kv[1]),
            _ => Err(format!("malformed value pair {p:?}")),
        })
        .collect()
}

pub fn check(command: &[String], constraints: &[T], goal: &T, timeout: Duration) -> Result<SatResult, SolverError> {
    let (program, args) = command
        .split_first()
        .ok_or_else(|| SolverError("empty solver command".into()))?;
    let query = emit_query(constraints, goal);
    let mut input = query.script.clone();
    input.push_str(&query.value_requests());
    input.push_str("(exit)\n");

    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| SolverError(format!("cannot start `{program}`: {e}")))?;
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    {
        let mut stdin = child.stdin.take().expect("piped stdin");
        stdin
            .write_all(input.as_bytes())
            .map_err(|e| SolverError(format!("writing to `{program}`: {e}")))?;
    }
    let status = child
        .wait_timeout(timeout)
        .map_err(|e| SolverError(format!("waiting for `{program}`: {e}")))?;
    if status.is_none() {
        let _ = child.kill();
        let _ = child.wait();
        let _ = reader.join();
        return Ok(SatResult::Unknown(format!("`{program}` exceeded {timeout:?}")));
    }
    let output = reader.join().unwrap_or_default();
    let sexps = parse_sexps(&output).map_err(SolverError)?;
    let mut it = sexps.into_iter();
    match it.next() {
        Some(Sexp::Atom(a)) if a == "unsat" => return Ok(SatResult::Unsat),
        Some(Sexp::Atom(a)) if a == "unknown" => return Ok(SatResult::Unknown("solver answered unknown".into())),
        Some(Sexp::Atom(a)) if a == "sat" => {}
        other => {
            return Err(SolverError(format!("unexpected solver answer {other:?}")));
        }
    }
    let mut model = Model::default();
    if !query.vars.is_empty() {
        let values = response_values(&it.next().ok_or_else(|| SolverError("missing variable values".into()))?)
            .map_err(SolverError)?;
        for ((_, name, width), v) in query.vars.iter().zip(values) {
            model.vars.insert(
                name.clone(),
                ModelValue {
                    value: v,
                    width: *width,
                },
            );
        }
    }
    for (name, _, _) in &query.apps {
        let mut values = response_values(&it.next().ok_or_else(|| SolverError("missing function values".into()))?)
            .map_err(SolverError)?;
        let value = values.pop().ok_or_else(|| SolverError("empty function value".into()))?;
        if model.uf(name, &values).is_none() {
            model.ufs.push(UfEntry {
                name: name.clone(),
                args: values,
                value,
            });
        }
    }
    Ok(SatResult::Sat(model))
}
