//! SMT-LIB 2 rendering of validity queries.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use super::model::{collect_ufs, collect_vars};
use super::term::{BvBinOp, BvUnOp, CmpOp, Term, T};

/// A rendered query together with what is needed to read a model back.
#[derive(Debug, Clone)]
pub struct SmtQuery {
    /// Declarations, definitions, assertions and `(check-sat)`.
    pub script: String,
    /// `(quoted symbol, original name, width)` per free variable.
    pub vars: Vec<(String, String, u32)>,
    /// Per function application in bottom-up order: the function name, the
    /// rendered argument expressions and the rendered application.
    pub apps: Vec<(String, Vec<String>, String)>,
}

impl SmtQuery {
    /// `(get-value ...)` commands for every variable and application,
    /// one command per line in the order the reader expects.
    pub fn value_requests(&self) -> String {
        let mut out = String::new();
        if !self.vars.is_empty() {
            let names: Vec<&str> = self.vars.iter().map(|v| v.0.as_str()).collect();
            let _ = writeln!(out, "(get-value ({}))", names.join(" "));
        }
        for (_, args, app) in &self.apps {
            let mut items = args.clone();
            items.push(app.clone());
            let _ = writeln!(out, "(get-value ({}))", items.join(" "));
        }
        out
    }
}

fn quote(name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| {
            if c == '|' || c == '\\' || c.is_control() {
                '_'
            } else {
                c
            }
        })
        .collect();
    format!("|{clean}|")
}

fn sort(width: u32) -> String {
    if width == 0 {
        "Bool".into()
    } else {
        format!("(_ BitVec {width})")
    }
}

fn literal(value: u128, width: u32) -> String {
    if width.is_multiple_of(4) {
        format!("#x{:0w$x}", value, w = (width / 4) as usize)
    } else {
        format!("#b{:0w$b}", value, w = width as usize)
    }
}

struct Emitter {
    refs: HashMap<*const Term, usize>,
    names: HashMap<*const Term, String>,
    defs: String,
    next: usize,
}

impl Emitter {
    fn count(&mut self, t: &T) {
        let n = self.refs.entry(Arc::as_ptr(t)).or_insert(0);
        *n += 1;
        if *n == 1 {
            for c in t.children() {
                self.count(c);
            }
        }
    }

    fn expr(&mut self, t: &T) -> String {
        let key = Arc::as_ptr(t);
        if let Some(n) = self.names.get(&key) {
            return n.clone();
        }
        let text = match &**t {
            Term::Bool(b) => b.to_string(),
            Term::Bv { value, width } => literal(*value, *width),
            Term::Var { name, .. } => quote(name),
            Term::Uf { name, args, .. } => {
                if args.is_empty() {
                    quote(name)
                } else {
                    let a: Vec<String> = args.iter().map(|x| self.expr(x)).collect();
                    format!("({} {})", quote(name), a.join(" "))
                }
            }
            Term::Not(a) => format!("(not {})", self.expr(a)),
            Term::And(xs) | Term::Or(xs) => {
                let op = if matches!(&**t, Term::And(_)) { "and" } else { "or" };
                let a: Vec<String> = xs.iter().map(|x| self.expr(x)).collect();
                format!("({op} {})", a.join(" "))
            }
            Term::Cmp { op, lhs, rhs } => {
                let op = match op {
                    CmpOp::Eq => "=",
                    CmpOp::Ult => "bvult",
                    CmpOp::Ule => "bvule",
                    CmpOp::Slt => "bvslt",
                    CmpOp::Sle => "bvsle",
                };
                format!("({op} {} {})", self.expr(lhs), self.expr(rhs))
            }
            Term::Ite { cond, then, els } => {
                format!("(ite {} {} {})", self.expr(cond), self.expr(then), self.expr(els))
            }
            Term::Un { op, arg } => {
                let op = match op {
                    BvUnOp::Neg => "bvneg",
                    BvUnOp::Not => "bvnot",
                };
                format!("({op} {})", self.expr(arg))
            }
            Term::Bin { op, lhs, rhs } => {
                let op = match op {
                    BvBinOp::Add => "bvadd",
                    BvBinOp::Sub => "bvsub",
                    BvBinOp::Mul => "bvmul",
                    BvBinOp::Udiv => "bvudiv",
                    BvBinOp::Urem => "bvurem",
                    BvBinOp::Sdiv => "bvsdiv",
                    BvBinOp::Srem => "bvsrem",
                    BvBinOp::And => "bvand",
                    BvBinOp::Or => "bvor",
                    BvBinOp::Xor => "bvxor",
                    BvBinOp::Shl => "bvshl",
                    BvBinOp::Lshr => "bvlshr",
                    BvBinOp::Ashr => "bvashr",
                };
                format!("({op} {} {})", self.expr(lhs), self.expr(rhs))
            }
            Term::Extract { hi, lo, arg } => format!("((_ extract {hi} {lo}) {})", self.expr(arg)),
            Term::Concat { hi, lo } => format!("(concat {} {})", self.expr(hi), self.expr(lo)),
            Term::ZeroExt { by, arg } => format!("((_ zero_extend {by}) {})", self.expr(arg)),
            Term::SignExt { by, arg } => format!("((_ sign_extend {by}) {})", self.expr(arg)),
        };
        let leaf = matches!(&**t, Term::Bool(_) | Term::Bv { .. } | Term::Var { .. });
        if !leaf && self.refs.get(&key).copied().unwrap_or(0) > 1 {
            let name = format!("|_n{}|", self.next);
            self.next += 1;
            let _ = writeln!(self.defs, "(define-fun {name} () {} {text})", sort(t.width()));
            self.names.insert(key, name.clone());
            name
        } else {
            self.names.insert(key, text.clone());
            text
        }
    }
}

/// Render the query "is there an assignment satisfying all `constraints`
/// where `goal` is false".
pub fn emit_query(constraints: &[T], goal: &T) -> SmtQuery {
    let mut roots = constraints.to_vec();
    roots.push(goal.clone());
    let mut e = Emitter {
        refs: HashMap::new(),
        names: HashMap::new(),
        defs: String::new(),
        next: 0,
    };
    for r in &roots {
        e.count(r);
    }
    let mut script = String::from("(set-option :produce-models true)\n(set-logic QF_AUFBV)\n");
    let vars: Vec<(String, String, u32)> = collect_vars(&roots)
        .into_iter()
        .map(|(n, w)| (quote(&n), n, w))
        .collect();
    for (q, _, w) in &vars {
        let _ = writeln!(script, "(declare-fun {q} () {})", sort(*w));
    }
    let uf_terms = collect_ufs(&roots);
    let mut declared = std::collections::HashSet::new();
    for t in &uf_terms {
        if let Term::Uf { name, args, width } = &**t {
            if declared.insert(name.clone()) {
                let a: Vec<String> = args.iter().map(|x| sort(x.width())).collect();
                let _ = writeln!(
                    script,
                    "(declare-fun {} ({}) {})",
                    quote(name),
                    a.join(" "),
                    sort(*width)
                );
            }
        }
    }
    let asserted: Vec<String> = constraints.iter().map(|c| e.expr(c)).collect();
    let negated = format!("(not {})", e.expr(goal));
    let apps = uf_terms
        .iter()
        .map(|t| {
            let Term::Uf { name, args, .. } = &**t else {
                unreachable!()
            };
            (name.clone(), args.iter().map(|a| e.expr(a)).collect(), e.expr(t))
        })
        .collect();
    script.push_str(&e.defs);
    for a in asserted {
        let _ = writeln!(script, "(assert {a})");
    }
    let _ = writeln!(script, "(assert {negated})");
    script.push_str("(check-sat)\n");
    SmtQuery { script, vars, apps }
}

/// The standalone SMT-LIB script for a query, ending in `(get-model)`.
pub fn emit_smtlib(constraints: &[T], goal: &T) -> String {
    let mut s = emit_query(constraints, goal).script;
    s.push_str("(get-model)\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexec::term::*;

    #[test]
    fn shared_nodes_are_defined_once() {
        let x = var("arg0->f", 16);
        let s = bswap(x.clone());
        let goal = cmp(CmpOp::Eq, bin(BvBinOp::Add, s.clone(), s.clone()), lit(2, 16));
        let q = emit_query(&[], &goal);
        assert!(q.script.contains("(declare-fun |arg0->f| () (_ BitVec 16))"));
        assert_eq!(q.script.matches("define-fun").count(), 1);
        assert!(q.script.contains("#x0002"));
        assert!(q.script.trim_end().ends_with("(check-sat)"));
        assert_eq!(q.vars[0].1, "arg0->f");
    }

    #[test]
    fn functions_are_declared_and_requested() {
        let f = uf("@m/1", vec![var("k", 64)], 64);
        let goal = cmp(CmpOp::Eq, f, lit(0, 64));
        let q = emit_query(&[tt()], &goal);
        assert!(q.script.contains("(declare-fun |@m/1| ((_ BitVec 64)) (_ BitVec 64))"));
        assert_eq!(q.apps.len(), 1);
        assert_eq!(q.apps[0].2, "(|@m/1| |k|)");
        assert!(q.value_requests().contains("(get-value (|k| (|@m/1| |k|)))"));
        assert_eq!(literal(5, 3), "#b101");
    }
}
