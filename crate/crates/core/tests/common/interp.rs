//! Concrete interpreter for the arithmetic part of the language, used as an
//! enumeration oracle for the symbolic executor. It works on plain u64 bit
//! patterns and shares no code with the executor.

use std::collections::HashMap;

use bpfsynth::btparse::{BinOp, Builtin, Expr, ExprKind, Program, Stmt, StmtKind, UnOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CVal {
    pub bits: u64,
    pub width: u32,
    pub signed: bool,
}

fn mask(w: u32) -> u64 {
    if w >= 64 {
        u64::MAX
    } else {
        (1u64 << w) - 1
    }
}

fn sext(bits: u64, w: u32) -> i64 {
    if w >= 64 {
        bits as i64
    } else {
        let shift = 64 - w;
        ((bits << shift) as i64) >> shift
    }
}

impl CVal {
    pub fn new(bits: u64, width: u32, signed: bool) -> Self {
        CVal {
            bits: bits & mask(width),
            width,
            signed,
        }
    }

    fn to_width(self, w: u32) -> u64 {
        if w <= self.width {
            self.bits & mask(w)
        } else if self.signed {
            (sext(self.bits, self.width) as u64) & mask(w)
        } else {
            self.bits
        }
    }

    fn truthy(self) -> bool {
        self.bits != 0
    }
}

fn boolean(b: bool) -> CVal {
    CVal::new(b as u64, 64, true)
}

/// Width and signedness of each `args.<field>` input.
pub type Inputs = HashMap<String, CVal>;

/// What one run of a clause observed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Run {
    /// Lines of failed assertions and zero divisors, in execution order.
    pub failures: Vec<u32>,
    /// An assumption was false, so the run ended early.
    pub vacuous: bool,
}

enum Stop {
    Assume,
    DivZero,
}

struct Machine<'a> {
    inputs: &'a Inputs,
    env: HashMap<String, CVal>,
    run: Run,
}

impl Machine<'_> {
    fn eval(&mut self, e: &Expr) -> Result<CVal, Stop> {
        Ok(match &e.kind {
            ExprKind::Int { value, .. } => CVal::new(*value, 64, true),
            ExprKind::Builtin(Builtin::Args(f)) => *self
                .inputs
                .get(&format!("args.{f}"))
                .unwrap_or_else(|| panic!("no input for args.{f}")),
            ExprKind::Scratch(n) => *self.env.get(n).unwrap_or_else(|| panic!("${n} read before assignment")),
            ExprKind::Cast { ty, expr } => {
                let (w, s) = cast(ty);
                let v = self.eval(expr)?;
                CVal::new(v.to_width(w), w, s)
            }
            ExprKind::Unary { op, expr } => {
                let v = self.eval(expr)?;
                match op {
                    UnOp::Not => boolean(!v.truthy()),
                    UnOp::Neg => CVal::new(v.bits.wrapping_neg(), v.width, v.signed),
                    UnOp::BitNot => CVal::new(!v.bits, v.width, v.signed),
                }
            }
            ExprKind::Binary { op, lhs, rhs } => {
                if matches!(op, BinOp::And | BinOp::Or) {
                    let a = self.eval(lhs)?.truthy();
                    let short = if *op == BinOp::And { !a } else { a };
                    if short {
                        return Ok(boolean(a));
                    }
                    return Ok(boolean(self.eval(rhs)?.truthy()));
                }
                let a = self.eval(lhs)?;
                let b = self.eval(rhs)?;
                let w = a.width.max(b.width);
                let (x, y) = (a.to_width(w), b.to_width(w));
                let s = a.signed && b.signed;
                let (sx, sy) = (sext(x, w), sext(y, w));
                let lt = |p: u64, q: u64| if s { sext(p, w) < sext(q, w) } else { p < q };
                let num = |bits: u64| CVal::new(bits, w, s);
                match op {
                    BinOp::Eq => boolean(x == y),
                    BinOp::Ne => boolean(x != y),
                    BinOp::Lt => boolean(lt(x, y)),
                    BinOp::Le => boolean(!lt(y, x)),
                    BinOp::Gt => boolean(lt(y, x)),
                    BinOp::Ge => boolean(!lt(x, y)),
                    BinOp::Add => num(x.wrapping_add(y)),
                    BinOp::Sub => num(x.wrapping_sub(y)),
                    BinOp::Mul => num(x.wrapping_mul(y)),
                    BinOp::BitAnd => num(x & y),
                    BinOp::BitOr => num(x | y),
                    BinOp::BitXor => num(x ^ y),
                    BinOp::Shl => num(if y >= u64::from(w) { 0 } else { x << y }),
                    BinOp::Shr => {
                        if y >= u64::from(w) {
                            num(if s && sx < 0 { u64::MAX } else { 0 })
                        } else if s {
                            num((sx >> y) as u64)
                        } else {
                            num(x >> y)
                        }
                    }
                    BinOp::Div | BinOp::Mod => {
                        if y == 0 {
                            self.run.failures.push(e.span.line);
                            return Err(Stop::DivZero);
                        }
                        let r = match (op, s) {
                            (BinOp::Div, true) => sx.wrapping_div(sy) as u64,
                            (BinOp::Div, false) => x / y,
                            (_, true) => sx.wrapping_rem(sy) as u64,
                            (_, false) => x % y,
                        };
                        num(r)
                    }
                    BinOp::And | BinOp::Or => unreachable!(),
                }
            }
            other => panic!("the oracle does not model {other:?}"),
        })
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<(), Stop> {
        for s in stmts {
            match &s.kind {
                StmtKind::Assign { var, value } => {
                    let v = self.eval(value)?;
                    self.env.insert(var.clone(), v);
                }
                StmtKind::Printf { args, .. } => {
                    for a in args {
                        self.eval(a)?;
                    }
                }
                StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                } => {
                    if self.eval(cond)?.truthy() {
                        self.block(then_body)?;
                    } else {
                        self.block(else_body)?;
                    }
                }
                StmtKind::Unroll { count, body } => {
                    for _ in 0..*count {
                        self.block(body)?;
                    }
                }
                StmtKind::Assume(c) => {
                    if !self.eval(c)?.truthy() {
                        return Err(Stop::Assume);
                    }
                }
                StmtKind::Assert(c) => {
                    if !self.eval(c)?.truthy() {
                        self.run.failures.push(s.span.line);
                    }
                }
                other => panic!("the oracle does not model {other:?}"),
            }
        }
        Ok(())
    }
}

fn cast(ty: &str) -> (u32, bool) {
    match ty {
        "u8" | "uint8" => (8, false),
        "s8" | "int8" | "char" => (8, true),
        "u16" | "uint16" => (16, false),
        "s16" | "int16" | "short" => (16, true),
        "u32" | "uint32" => (32, false),
        "s32" | "int32" | "int" => (32, true),
        "u64" | "uint64" => (64, false),
        "s64" | "int64" | "long" => (64, true),
        other => panic!("the oracle does not model cast to {other}"),
    }
}

/// Run every clause on `inputs`. Each clause starts from an empty
/// environment; a false predicate skips the clause.
pub fn run(p: &Program, inputs: &Inputs) -> Run {
    let mut total = Run::default();
    for clause in &p.clauses {
        let mut m = Machine {
            inputs,
            env: HashMap::new(),
            run: Run::default(),
        };
        let r = match &clause.predicate {
            Some(pred) => match m.eval(pred) {
                Ok(v) if !v.truthy() => Ok(()),
                Ok(_) => m.block(&clause.body),
                Err(e) => Err(e),
            },
            None => m.block(&clause.body),
        };
        if let Err(Stop::Assume) = r {
            m.run.vacuous = true;
        }
        total.failures.extend(m.run.failures);
        total.vacuous |= m.run.vacuous;
    }
    total
}

/// Inputs of the given types, all zero.
pub fn zero_inputs(symbols: &[(String, u32, bool)]) -> Inputs {
    symbols
        .iter()
        .map(|(n, w, s)| (n.clone(), CVal::new(0, *w, *s)))
        .collect()
}

/// First assignment (in counting order) under which some check fails.
pub fn find_failure(p: &Program, symbols: &[(String, u32, bool)]) -> Option<Inputs> {
    let total_bits: u32 = symbols.iter().map(|s| s.1).sum();
    assert!(total_bits <= 24, "enumeration over {total_bits} bits");
    let mut inputs = zero_inputs(symbols);
    for code in 0u64..(1u64 << total_bits) {
        let mut shift = 0;
        for (n, w, s) in symbols {
            inputs.insert(n.clone(), CVal::new(code >> shift, *w, *s));
            shift += w;
        }
        if !run(p, &inputs).failures.is_empty() {
            return Some(inputs);
        }
    }
    None
}
