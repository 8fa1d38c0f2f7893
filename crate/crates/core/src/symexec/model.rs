//! Models (satisfying assignments) and concrete evaluation of terms.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use super::term::{bv, BvBinOp, CmpOp, Term, T};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelValue {
    pub value: u128,
    pub width: u32,
}

impl fmt::Display for ModelValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.value)
    }
}

/// Interpretation of one uninterpreted-function application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UfEntry {
    pub name: String,
    pub args: Vec<u128>,
    pub value: u128,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Model {
    pub vars: BTreeMap<String, ModelValue>,
    pub ufs: Vec<UfEntry>,
}

impl Model {
    pub fn var(&self, name: &str) -> Option<u128> {
        self.vars.get(name).map(|v| v.value)
    }

    pub fn uf(&self, name: &str, args: &[u128]) -> Option<u128> {
        self.ufs
            .iter()
            .find(|e| e.name == name && e.args == args)
            .map(|e| e.value)
    }

    /// Symbols and function applications as printable `name = value` pairs.
    pub fn describe(&self) -> BTreeMap<String, String> {
        let mut out: BTreeMap<String, String> = self.vars.iter().map(|(k, v)| (k.clone(), v.to_string())).collect();
        for e in &self.ufs {
            let args: Vec<String> = e.args.iter().map(|a| format!("{a:#x}")).collect();
            let fname = e.name.split('/').next().unwrap_or(&e.name);
            out.insert(format!("{fname}({})", args.join(", ")), format!("{:#x}", e.value));
        }
        out
    }
}

/// Evaluate a boolean term. Missing variables and function applications
/// read as zero.
pub fn eval_bool(t: &T, m: &Model) -> bool {
    Evaluator::new(m).eval(t) != 0
}

pub fn eval_bv(t: &T, m: &Model) -> u128 {
    Evaluator::new(m).eval(t)
}

struct Evaluator<'m> {
    model: &'m Model,
    memo: HashMap<*const Term, u128>,
}

impl<'m> Evaluator<'m> {
    fn new(model: &'m Model) -> Self {
        Evaluator {
            model,
            memo: HashMap::new(),
        }
    }

    /// Booleans evaluate to 0/1.
    fn eval(&mut self, t: &T) -> u128 {
        let key = Arc::as_ptr(t);
        if let Some(v) = self.memo.get(&key) {
            return *v;
        }
        let v = match &**t {
            Term::Bool(b) => u128::from(*b),
            Term::Bv { value, .. } => *value,
            Term::Var { name, .. } => self.model.var(name).unwrap_or(0),
            Term::Uf { name, args, .. } => {
                let a: Vec<u128> = args.iter().map(|x| self.eval(x)).collect();
                self.model.uf(name, &a).unwrap_or(0)
            }
            Term::Not(a) => u128::from(self.eval(a) == 0),
            Term::And(xs) => u128::from(xs.iter().all(|x| self.eval(x) != 0)),
            Term::Or(xs) => u128::from(xs.iter().any(|x| self.eval(x) != 0)),
            Term::Cmp { op, lhs, rhs } => {
                let (a, b) = (self.eval(lhs), self.eval(rhs));
                u128::from(bv::cmp(*op, a, b, lhs.width()))
            }
            Term::Ite { cond, then, els } => {
                if self.eval(cond) != 0 {
                    self.eval(then)
                } else {
                    self.eval(els)
                }
            }
            Term::Un { op, arg } => bv::un(*op, self.eval(arg), arg.width()),
            Term::Bin { op, lhs, rhs } => {
                let (a, b) = (self.eval(lhs), self.eval(rhs));
                bv::bin(*op, a, b, lhs.width())
            }
            Term::Extract { hi, lo, arg } => bv::extract(self.eval(arg), *hi, *lo),
            Term::Concat { hi, lo } => (self.eval(hi) << lo.width()) | self.eval(lo),
            Term::ZeroExt { arg, .. } => self.eval(arg),
            Term::SignExt { by, arg } => bv::sext(self.eval(arg), arg.width(), *by),
        };
        self.memo.insert(key, v);
        v
    }
}

/// Symbol names and widths in first-occurrence order.
pub fn collect_vars(roots: &[T]) -> Vec<(String, u32)> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let mut names = std::collections::HashSet::new();
    let mut stack: Vec<&T> = roots.iter().rev().collect();
    while let Some(t) = stack.pop() {
        if !seen.insert(Arc::as_ptr(t)) {
            continue;
        }
        if let Term::Var { name, width } = &**t {
            if names.insert(name.clone()) {
                out.push((name.clone(), *width));
            }
        }
        for c in t.children().into_iter().rev() {
            stack.push(c);
        }
    }
    out
}

/// Uninterpreted applications in bottom-up order (arguments before uses).
pub fn collect_ufs(roots: &[T]) -> Vec<T> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    fn walk(t: &T, seen: &mut std::collections::HashSet<*const Term>, out: &mut Vec<T>) {
        if !seen.insert(Arc::as_ptr(t)) {
            return;
        }
        for c in t.children() {
            walk(c, seen, out);
        }
        if matches!(&**t, Term::Uf { .. }) {
            out.push(t.clone());
        }
    }
    for r in roots {
        walk(r, &mut seen, &mut out);
    }
    out
}

#[derive(Debug, Clone)]
enum Op {
    Const(u128),
    Input(usize),
    Not(usize),
    And(Vec<usize>),
    Or(Vec<usize>),
    Cmp(CmpOp, usize, usize, u32),
    Ite(usize, usize, usize),
    Un(super::term::BvUnOp, usize, u32),
    Bin(BvBinOp, usize, usize, u32),
    Extract(usize, u32, u32),
    Concat(usize, usize, u32),
    Sext(usize, u32, u32),
}

/// A term DAG flattened into straight-line register code, for evaluating
/// the same formula under many assignments. Function applications are not
/// supported.
pub struct Compiled {
    ops: Vec<Op>,
    roots: Vec<usize>,
    pub inputs: Vec<(String, u32)>,
}

impl Compiled {
    pub fn new(roots: &[T]) -> Result<Self, String> {
        let inputs = collect_vars(roots);
        let index: HashMap<&str, usize> = inputs.iter().enumerate().map(|(i, (n, _))| (n.as_str(), i)).collect();
        let mut c = Compiled {
            ops: Vec::new(),
            roots: Vec::new(),
            inputs: Vec::new(),
        };
        let mut memo: HashMap<*const Term, usize> = HashMap::new();
        for r in roots {
            let reg = c.lower(r, &index, &mut memo)?;
            c.roots.push(reg);
        }
        c.inputs = inputs;
        Ok(c)
    }

    fn lower(
        &mut self,
        t: &T,
        index: &HashMap<&str, usize>,
        memo: &mut HashMap<*const Term, usize>,
    ) -> Result<usize, String> {
        if let Some(r) = memo.get(&Arc::as_ptr(t)) {
            return Ok(*r);
        }
        let mut l = |x: &T, s: &mut Self| s.lower(x, index, memo);
        let op = match &**t {
            Term::Bool(b) => Op::Const(u128::from(*b)),
            Term::Bv { value, .. } => Op::Const(*value),
            Term::Var { name, .. } => Op::Input(index[name.as_str()]),
            Term::Uf { name, .. } => return Err(format!("uninterpreted function `{name}`")),
            Term::Not(a) => Op::Not(l(a, self)?),
            Term::And(xs) => Op::And(xs.iter().map(|x| l(x, self)).collect::<Result<_, _>>()?),
            Term::Or(xs) => Op::Or(xs.iter().map(|x| l(x, self)).collect::<Result<_, _>>()?),
            Term::Cmp { op, lhs, rhs } => Op::Cmp(*op, l(lhs, self)?, l(rhs, self)?, lhs.width()),
            Term::Ite { cond, then, els } => Op::Ite(l(cond, self)?, l(then, self)?, l(els, self)?),
            Term::Un { op, arg } => Op::Un(*op, l(arg, self)?, arg.width()),
            Term::Bin { op, lhs, rhs } => Op::Bin(*op, l(lhs, self)?, l(rhs, self)?, lhs.width()),
            Term::Extract { hi, lo, arg } => Op::Extract(l(arg, self)?, *hi, *lo),
            Term::Concat { hi, lo } => Op::Concat(l(hi, self)?, l(lo, self)?, lo.width()),
            Term::ZeroExt { arg, .. } => {
                let r = l(arg, self)?;
                memo.insert(Arc::as_ptr(t), r);
                return Ok(r);
            }
            Term::SignExt { by, arg } => Op::Sext(l(arg, self)?, arg.width(), *by),
        };
        self.ops.push(op);
        let r = self.ops.len() - 1;
        memo.insert(Arc::as_ptr(t), r);
        Ok(r)
    }

    /// Evaluate all roots; `regs` is scratch space reused across calls.
    pub fn run(&self, inputs: &[u128], regs: &mut Vec<u128>, out: &mut Vec<u128>) {
        regs.clear();
        for op in &self.ops {
            let v = match op {
                Op::Const(v) => *v,
                Op::Input(i) => inputs[*i],
                Op::Not(a) => u128::from(regs[*a] == 0),
                Op::And(xs) => u128::from(xs.iter().all(|x| regs[*x] != 0)),
                Op::Or(xs) => u128::from(xs.iter().any(|x| regs[*x] != 0)),
                Op::Cmp(op, a, b, w) => u128::from(bv::cmp(*op, regs[*a], regs[*b], *w)),
                Op::Ite(c, a, b) => {
                    if regs[*c] != 0 {
                        regs[*a]
                    } else {
                        regs[*b]
                    }
                }
                Op::Un(op, a, w) => bv::un(*op, regs[*a], *w),
                Op::Bin(op, a, b, w) => bv::bin(*op, regs[*a], regs[*b], *w),
                Op::Extract(a, hi, lo) => bv::extract(regs[*a], *hi, *lo),
                Op::Concat(a, b, lw) => (regs[*a] << lw) | regs[*b],
                Op::Sext(a, from, by) => bv::sext(regs[*a], *from, *by),
            };
            regs.push(v);
        }
        out.clear();
        out.extend(self.roots.iter().map(|r| regs[*r]));
    }
}
