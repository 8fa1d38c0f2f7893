use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::model::{eval_bool, Model};
use super::solver::{SatResult, SolverBackend};
use super::term::{self as t, BvBinOp, BvUnOp, CmpOp, Term, T};
use crate::btparse::{render_expr, BinOp, Builtin, Expr, ExprKind, Func, Program, Span, Stmt, StmtKind, UnOp};

pub const DEFAULT_BUDGET: Duration = Duration::from_secs(30);
pub const DEFAULT_FORK_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldType {
    pub width: u32,
    #[serde(default)]
    pub signed: bool,
}

impl FieldType {
    pub const fn unsigned(width: u32) -> Self {
        FieldType { width, signed: false }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TypeMapError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("type map is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field `{field}` has width {width}; widths must be 8, 16, 32, 64 or 128")]
    Width { field: String, width: u32 },
}

/// Bit widths and signedness of kernel struct fields and tracepoint
/// arguments, keyed by field name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelTypeMap {
    fields: BTreeMap<String, FieldType>,
    fallback: FieldType,
}

impl Default for KernelTypeMap {
    /// Socket fields used by connection tracing: ports are 16-bit and IPv4
    /// addresses 32-bit. Everything else is 64-bit unsigned.
    fn default() -> Self {
        let mut m = KernelTypeMap::empty();
        for (f, w) in [
            ("skc_dport", 16),
            ("skc_num", 16),
            ("skc_rcv_saddr", 32),
            ("skc_daddr", 32),
        ] {
            m.fields.insert(f.to_string(), FieldType::unsigned(w));
        }
        m
    }
}

impl KernelTypeMap {
    pub fn empty() -> Self {
        KernelTypeMap {
            fields: BTreeMap::new(),
            fallback: FieldType::unsigned(64),
        }
    }

    pub fn insert(&mut self, field: impl Into<String>, ty: FieldType) -> Result<(), TypeMapError> {
        let field = field.into();
        if ![8, 16, 32, 64, 128].contains(&ty.width) {
            return Err(TypeMapError::Width { field, width: ty.width });
        }
        self.fields.insert(field, ty);
        Ok(())
    }

    /// Type of a field path such as `__sk_common.skc_dport`: an exact entry
    /// wins, then the last dotted segment, then the 64-bit fallback.
    pub fn get(&self, field: &str) -> FieldType {
        if let Some(t) = self.fields.get(field) {
            return *t;
        }
        let last = field.rsplit('.').next().unwrap_or(field);
        self.fields.get(last).copied().unwrap_or(self.fallback)
    }

    /// Defaults overlaid with the entries of a JSON object
    /// `{"field": {"width": 16, "signed": false}}`.
    pub fn from_json_str(text: &str) -> Result<Self, TypeMapError> {
        let entries: BTreeMap<String, FieldType> = serde_json::from_str(text)?;
        let mut m = KernelTypeMap::default();
        for (k, v) in entries {
            m.insert(k, v)?;
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, TypeMapError> {
        let text = std::fs::read_to_string(path).map_err(|source| TypeMapError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyOptions {
    pub budget: Duration,
    pub fork_cap: usize,
    pub backend: SolverBackend,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            budget: DEFAULT_BUDGET,
            fork_cap: DEFAULT_FORK_CAP,
            backend: SolverBackend::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Verified,
    AssertViolation {
        location: Span,
        /// Source text of the failing check, e.g. `assert($x == 1);`.
        assertion: String,
        counterexample: Model,
        message: String,
    },
    Timeout {
        elapsed: Duration,
        message: String,
    },
    SolverError {
        message: String,
    },
}

impl Verdict {
    pub fn is_verified(&self) -> bool {
        matches!(self, Verdict::Verified)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Verdict::Verified => "verified",
            Verdict::AssertViolation { .. } => "assert_violation",
            Verdict::Timeout { .. } => "timeout",
            Verdict::SolverError { .. } => "solver_error",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Verified => f.write_str("verified: every assertion holds on every path"),
            Verdict::AssertViolation { message, .. } => f.write_str(message),
            Verdict::Timeout { message, .. } => write!(f, "timeout: {message}"),
            Verdict::SolverError { message } => write!(f, "solver error: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SymexecError {
    #[error("line {}: unsupported expression `{text}`: {reason}", location.line)]
    Unsupported {
        location: Span,
        text: String,
        reason: String,
    },
}

/// A verdict with exploration statistics.
#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub verdict: Verdict,
    /// Paths started, over all clauses.
    pub paths: usize,
    pub solver_calls: usize,
    pub elapsed: Duration,
}

/// Symbolically execute every clause and check each assertion on every
/// path.
pub fn verify(p: &Program, types: &KernelTypeMap, opts: &VerifyOptions) -> Result<Verdict, SymexecError> {
    verify_detailed(p, types, opts).map(|o| o.verdict)
}

pub fn verify_detailed(
    p: &Program,
    types: &KernelTypeMap,
    opts: &VerifyOptions,
) -> Result<VerifyOutcome, SymexecError> {
    let mut ex = Exec {
        types,
        opts,
        start: Instant::now(),
        guards: Vec::new(),
        paths: 0,
        solver_calls: 0,
    };
    let verdict = match ex.run_program(p) {
        Ok(()) => Verdict::Verified,
        Err(Halt::Verdict(v)) => v,
        Err(Halt::Error(e)) => return Err(e),
    };
    Ok(VerifyOutcome {
        verdict,
        paths: ex.paths,
        solver_calls: ex.solver_calls,
        elapsed: ex.start.elapsed(),
    })
}

#[derive(Debug, Clone)]
struct Val {
    term: T,
    signed: bool,
}

impl Val {
    fn new(term: T, signed: bool) -> Self {
        Val { term, signed }
    }

    fn width(&self) -> u32 {
        self.term.width()
    }

    fn resized(&self, w: u32) -> T {
        t::resize(self.term.clone(), w, self.signed)
    }
}

#[derive(Debug, Clone, Copy)]
enum Frame<'p> {
    Seq { stmts: &'p [Stmt], next: usize },
    Repeat { body: &'p [Stmt], remaining: u64 },
}

#[derive(Debug, Clone)]
struct State<'p> {
    env: HashMap<String, Val>,
    /// Writes per map in program order; a delete writes zero.
    writes: HashMap<String, Vec<(Vec<T>, T)>>,
    path: Vec<T>,
    assumptions: Vec<T>,
    frames: Vec<Frame<'p>>,
}

enum Halt {
    Verdict(Verdict),
    Error(SymexecError),
}

enum Step<'p> {
    Done,
    Fork(Box<State<'p>>, Box<State<'p>>),
}

struct Exec<'a> {
    types: &'a KernelTypeMap,
    opts: &'a VerifyOptions,
    start: Instant,
    /// Conditions under which the expression being evaluated is reached,
    /// from the left operands of `&&` and `||`.
    guards: Vec<T>,
    paths: usize,
    solver_calls: usize,
}

fn unsupported(e: &Expr, reason: impl Into<String>) -> Halt {
    Halt::Error(SymexecError::Unsupported {
        location: e.span,
        text: render_expr(e),
        reason: reason.into(),
    })
}

/// Boolean view of a value, looking through `ite(c, 1, 0)`.
fn cond_of(v: &T) -> T {
    if let Term::Ite { cond, then, els } = &**v {
        if then.as_bv() == Some(1) && els.as_bv() == Some(0) {
            return cond.clone();
        }
    }
    t::truthy(v.clone())
}

fn bool_val(b: T) -> Val {
    Val::new(t::bool_to_bv(b, 64), true)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn cast_type(ty: &str) -> Option<FieldType> {
    let ty = ty.trim();
    if ty.ends_with('*') || ty.starts_with("struct ") {
        return Some(FieldType::unsigned(64));
    }
    let (width, signed) = match ty {
        "u8" | "uint8" | "unsigned char" => (8, false),
        "s8" | "int8" | "char" => (8, true),
        "u16" | "uint16" | "unsigned short" => (16, false),
        "s16" | "int16" | "short" => (16, true),
        "u32" | "uint32" | "unsigned int" | "unsigned" => (32, false),
        "s32" | "int32" | "int" => (32, true),
        "u64" | "uint64" | "unsigned long" => (64, false),
        "s64" | "int64" | "long" => (64, true),
        _ => return None,
    };
    Some(FieldType { width, signed })
}

impl<'a> Exec<'a> {
    fn run_program(&mut self, p: &Program) -> Result<(), Halt> {
        for clause in &p.clauses {
            let mut init = State {
                env: HashMap::new(),
                writes: HashMap::new(),
                path: Vec::new(),
                assumptions: Vec::new(),
                frames: vec![Frame::Seq {
                    stmts: &clause.body,
                    next: 0,
                }],
            };
            if let Some(pred) = &clause.predicate {
                let v = self.eval(&mut init, pred)?;
                let c = cond_of(&v.term);
                if c.as_bool() != Some(true) {
                    init.path.push(c);
                }
            }
            let mut clause_paths = 1;
            self.paths += 1;
            let mut work = vec![init];
            while let Some(mut st) = work.pop() {
                match self.run_state(&mut st)? {
                    Step::Done => {}
                    Step::Fork(then_st, else_st) => {
                        clause_paths += 1;
                        self.paths += 1;
                        if clause_paths > self.opts.fork_cap {
                            return Err(Halt::Verdict(Verdict::Timeout {
                                elapsed: self.start.elapsed(),
                                message: format!(
                                    "more than {} paths through the clause at line {}; path exploration stopped",
                                    self.opts.fork_cap, clause.span.line
                                ),
                            }));
                        }
                        work.push(*else_st);
                        work.push(*then_st);
                    }
                }
            }
        }
        Ok(())
    }

    /// Run a state until it finishes or forks.
    fn run_state<'p>(&mut self, st: &mut State<'p>) -> Result<Step<'p>, Halt> {
        while let Some(frame) = st.frames.pop() {
            let stmt = match frame {
                Frame::Repeat { body, remaining } => {
                    if remaining > 0 {
                        st.frames.push(Frame::Repeat {
                            body,
                            remaining: remaining - 1,
                        });
                        st.frames.push(Frame::Seq { stmts: body, next: 0 });
                    }
                    continue;
                }
                Frame::Seq { stmts, next } => {
                    let Some(s) = stmts.get(next) else { continue };
                    st.frames.push(Frame::Seq { stmts, next: next + 1 });
                    s
                }
            };
            match &stmt.kind {
                StmtKind::Assign { var, value } => {
                    let v = self.eval(st, value)?;
                    st.env.insert(var.clone(), v);
                }
                StmtKind::MapAssign { map, keys, value } => {
                    let ks = self.eval_keys(st, keys)?;
                    let v = self.eval(st, value)?.resized(64);
                    st.writes.entry(map.clone()).or_default().push((ks, v));
                }
                StmtKind::Delete { map, keys } => {
                    let ks = self.eval_keys(st, keys)?;
                    st.writes.entry(map.clone()).or_default().push((ks, t::lit(0, 64)));
                }
                StmtKind::FieldAssign { target, value } => {
                    self.eval(st, target)?;
                    self.eval(st, value)?;
                }
                StmtKind::Printf { args, .. } => {
                    for a in args {
                        self.eval(st, a)?;
                    }
                }
                StmtKind::Expr(e) => {
                    self.eval(st, e)?;
                }
                StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                } => {
                    let v = self.eval(st, cond)?;
                    let c = cond_of(&v.term);
                    match c.as_bool() {
                        Some(true) => st.frames.push(Frame::Seq {
                            stmts: then_body,
                            next: 0,
                        }),
                        Some(false) => st.frames.push(Frame::Seq {
                            stmts: else_body,
                            next: 0,
                        }),
                        None => {
                            let mut then_st = st.clone();
                            then_st.path.push(c.clone());
                            then_st.frames.push(Frame::Seq {
                                stmts: then_body,
                                next: 0,
                            });
                            let mut else_st = std::mem::replace(
                                st,
                                State {
                                    env: HashMap::new(),
                                    writes: HashMap::new(),
                                    path: Vec::new(),
                                    assumptions: Vec::new(),
                                    frames: Vec::new(),
                                },
                            );
                            else_st.path.push(t::not(c));
                            else_st.frames.push(Frame::Seq {
                                stmts: else_body,
                                next: 0,
                            });
                            return Ok(Step::Fork(Box::new(then_st), Box::new(else_st)));
                        }
                    }
                }
                StmtKind::Unroll { count, body } => st.frames.push(Frame::Repeat {
                    body,
                    remaining: *count,
                }),
                StmtKind::Assume(e) => {
                    let v = self.eval(st, e)?;
                    let c = cond_of(&v.term);
                    if c.as_bool() != Some(true) {
                        st.assumptions.push(c);
                    }
                }
                StmtKind::Assert(e) => {
                    let v = self.eval(st, e)?;
                    let goal = cond_of(&v.term);
                    let text = format!("assert({});", render_expr(e));
                    self.prove(st, goal, stmt.span, text)?;
                }
            }
        }
        Ok(Step::Done)
    }

    fn budget_left(&self) -> Result<Duration, Halt> {
        let elapsed = self.start.elapsed();
        if elapsed >= self.opts.budget {
            return Err(Halt::Verdict(Verdict::Timeout {
                elapsed,
                message: format!(
                    "verification budget of {:.1}s exhausted after {} solver calls",
                    self.opts.budget.as_secs_f64(),
                    self.solver_calls
                ),
            }));
        }
        Ok(self.opts.budget - elapsed)
    }

    /// Check that `goal` holds whenever the path, the assumptions made so far
    /// and the current guards hold.
    fn prove(&mut self, st: &State<'_>, goal: T, location: Span, assertion: String) -> Result<(), Halt> {
        if goal.as_bool() == Some(true) {
            return Ok(());
        }
        let constraints: Vec<T> = st
            .path
            .iter()
            .chain(&st.assumptions)
            .chain(&self.guards)
            .cloned()
            .collect();
        let remaining = self.budget_left()?;
        self.solver_calls += 1;
        match self.opts.backend.check(&constraints, &goal, remaining) {
            Ok(SatResult::Unsat) => Ok(()),
            Ok(SatResult::Sat(model)) => {
                let consistent = constraints.iter().all(|c| eval_bool(c, &model)) && !eval_bool(&goal, &model);
                if !consistent {
                    return Err(Halt::Verdict(Verdict::SolverError {
                        message: format!(
                            "model returned for `{assertion}` at line {} does not falsify it",
                            location.line
                        ),
                    }));
                }
                let values: Vec<String> = model
                    .describe()
                    .into_iter()
                    .map(|(k, v)| format!("{k} = {v}"))
                    .collect();
                let witness = if values.is_empty() {
                    "any input".to_string()
                } else {
                    values.join(", ")
                };
                let message = format!(
                    "line {}: `{assertion}` can fail; counterexample: {witness}",
                    location.line
                );
                Err(Halt::Verdict(Verdict::AssertViolation {
                    location,
                    assertion,
                    counterexample: model,
                    message,
                }))
            }
            Ok(SatResult::Unknown(reason)) => Err(Halt::Verdict(Verdict::Timeout {
                elapsed: self.start.elapsed(),
                message: format!(
                    "solver gave no answer for `{assertion}` at line {}: {reason}",
                    location.line
                ),
            })),
            Err(e) => Err(Halt::Verdict(Verdict::SolverError {
                message: format!("checking `{assertion}` at line {}: {e}", location.line),
            })),
        }
    }

    fn eval_keys(&mut self, st: &mut State<'_>, keys: &[Expr]) -> Result<Vec<T>, Halt> {
        keys.iter().map(|k| Ok(self.eval(st, k)?.resized(64))).collect()
    }

    fn symbol(&self, name: String, ty: FieldType) -> Val {
        Val::new(t::var(name, ty.width), ty.signed)
    }

    fn eval(&mut self, st: &mut State<'_>, e: &Expr) -> Result<Val, Halt> {
        Ok(match &e.kind {
            ExprKind::Int { value, width } => Val::new(t::lit(u128::from(*value), *width), true),
            ExprKind::Str(s) => Val::new(t::lit(u128::from(fnv1a(s)), 64), false),
            ExprKind::Builtin(b) => match b {
                Builtin::Retval => Val::new(t::var("retval", 64), true),
                Builtin::Args(field) => self.symbol(b.name(), self.types.get(field)),
                _ => self.symbol(b.name(), FieldType::unsigned(64)),
            },
            ExprKind::Scratch(name) => {
                if let Some(v) = st.env.get(name) {
                    v.clone()
                } else {
                    let v = self.symbol(format!("${name}"), FieldType::unsigned(64));
                    st.env.insert(name.clone(), v.clone());
                    v
                }
            }
            ExprKind::Map { name, keys } => {
                let ks = self.eval_keys(st, keys)?;
                let mut acc = t::uf(format!("@{name}/{}", ks.len()), ks.clone(), 64);
                if let Some(ws) = st.writes.get(name) {
                    for (wk, wv) in ws {
                        if wk.len() != ks.len() {
                            continue;
                        }
                        let same = t::and(ks.iter().zip(wk).map(|(a, b)| t::eq(a.clone(), b.clone())).collect());
                        acc = t::ite(same, wv.clone(), acc);
                    }
                }
                Val::new(acc, true)
            }
            ExprKind::Field { base, fields } => {
                let b = self.eval(st, base)?;
                let name = format!("{}->{}", b.term, fields.join("->"));
                let last = fields.last().map(String::as_str).unwrap_or_default();
                self.symbol(name, self.types.get(last))
            }
            ExprKind::Cast { ty, expr } => {
                let Some(target) = cast_type(ty) else {
                    return Err(unsupported(e, format!("unknown cast type `{ty}`")));
                };
                let v = self.eval(st, expr)?;
                Val::new(v.resized(target.width), target.signed)
            }
            ExprKind::Unary { op, expr } => {
                let v = self.eval(st, expr)?;
                match op {
                    UnOp::Not => bool_val(t::not(cond_of(&v.term))),
                    UnOp::Neg => Val::new(t::un(BvUnOp::Neg, v.term), v.signed),
                    UnOp::BitNot => Val::new(t::un(BvUnOp::Not, v.term), v.signed),
                }
            }
            ExprKind::Binary { op, lhs, rhs } => self.eval_binary(st, e, *op, lhs, rhs)?,
            ExprKind::Call { func, args } => self.eval_call(st, e, *func, args)?,
        })
    }

    fn eval_binary(&mut self, st: &mut State<'_>, e: &Expr, op: BinOp, lhs: &Expr, rhs: &Expr) -> Result<Val, Halt> {
        if matches!(op, BinOp::And | BinOp::Or) {
            let a = cond_of(&self.eval(st, lhs)?.term);
            let guard = if op == BinOp::And { a.clone() } else { t::not(a.clone()) };
            self.guards.push(guard);
            let b = self.eval(st, rhs);
            self.guards.pop();
            let b = cond_of(&b?.term);
            return Ok(bool_val(if op == BinOp::And {
                t::and(vec![a, b])
            } else {
                t::or(vec![a, b])
            }));
        }
        let a = self.eval(st, lhs)?;
        let b = self.eval(st, rhs)?;
        let w = a.width().max(b.width());
        let (x, y) = (a.resized(w), b.resized(w));
        let signed = a.signed && b.signed;
        let cmp = |op, x, y| bool_val(t::cmp(op, x, y));
        let (lt, le) = if signed {
            (CmpOp::Slt, CmpOp::Sle)
        } else {
            (CmpOp::Ult, CmpOp::Ule)
        };
        let arith = |bop, x, y| Val::new(t::bin(bop, x, y), signed);
        Ok(match op {
            BinOp::Eq => bool_val(t::eq(x, y)),
            BinOp::Ne => bool_val(t::not(t::eq(x, y))),
            BinOp::Lt => cmp(lt, x, y),
            BinOp::Le => cmp(le, x, y),
            BinOp::Gt => cmp(lt, y, x),
            BinOp::Ge => cmp(le, y, x),
            BinOp::Add => arith(BvBinOp::Add, x, y),
            BinOp::Sub => arith(BvBinOp::Sub, x, y),
            BinOp::Mul => arith(BvBinOp::Mul, x, y),
            BinOp::BitAnd => arith(BvBinOp::And, x, y),
            BinOp::BitOr => arith(BvBinOp::Or, x, y),
            BinOp::BitXor => arith(BvBinOp::Xor, x, y),
            BinOp::Shl => arith(BvBinOp::Shl, x, y),
            BinOp::Shr => arith(if signed { BvBinOp::Ashr } else { BvBinOp::Lshr }, x, y),
            BinOp::Div | BinOp::Mod => {
                let nonzero = t::not(t::eq(y.clone(), t::lit(0, w)));
                let text = format!("{} != 0", render_expr(rhs));
                self.prove(st, nonzero, e.span, text)?;
                let bop = match (op, signed) {
                    (BinOp::Div, true) => BvBinOp::Sdiv,
                    (BinOp::Div, false) => BvBinOp::Udiv,
                    (_, true) => BvBinOp::Srem,
                    (_, false) => BvBinOp::Urem,
                };
                arith(bop, x, y)
            }
            BinOp::And | BinOp::Or => unreachable!("handled above"),
        })
    }

    fn eval_call(&mut self, st: &mut State<'_>, e: &Expr, func: Func, args: &[Expr]) -> Result<Val, Halt> {
        let arity_ok = match func {
            Func::Bswap | Func::Sizeof => args.len() == 1,
            Func::Ntop | Func::Str => (1..=2).contains(&args.len()),
            Func::Time => args.len() <= 1,
        };
        if !arity_ok {
            return Err(unsupported(
                e,
                format!("wrong number of arguments to {}", func.as_str()),
            ));
        }
        let vals = args.iter().map(|a| self.eval(st, a)).collect::<Result<Vec<_>, _>>()?;
        Ok(match func {
            Func::Bswap => Val::new(t::bswap(vals[0].term.clone()), false),
            Func::Sizeof => Val::new(t::lit(u128::from(vals[0].width() / 8), 64), false),
            Func::Ntop | Func::Str | Func::Time => {
                let name = format!("{}/{}", func.as_str(), vals.len());
                Val::new(t::uf(name, vals.iter().map(|v| v.resized(64)).collect(), 64), false)
            }
        })
    }
}
