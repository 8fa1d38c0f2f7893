use crate::btparse::{self, BinOp, Builtin, Expr, ExprKind, UnOp};

/// One `"subject": "relation"` pair from a contract's `pre` or `post` object.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConditionEntry {
    pub subject: String,
    pub relation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Relation {
    pub op: BinOp,
    pub value: i128,
}

impl ConditionEntry {
    pub fn new(subject: impl Into<String>, relation: impl Into<String>) -> Self {
        ConditionEntry {
            subject: subject.into(),
            relation: relation.into(),
        }
    }

    /// Parsed relation, or `None` when it falls outside the
    /// `op literal` / `!=null` grammar.
    pub fn relation(&self) -> Option<Relation> {
        parse_relation(&self.relation)
    }

    /// Checkable entries have a relation in the grammar and a subject that
    /// parses as an expression.
    pub fn is_checkable(&self) -> bool {
        self.to_expr().is_some()
    }

    /// The subject as an expression over the probe's variables. Builtins
    /// (`retval`, `arg0`, `args.pid`, ...) are kept, anything else names a
    /// scratch variable bound in the clause.
    pub fn subject_expr(&self) -> Option<Expr> {
        let s = self.subject.trim();
        if s.is_empty() {
            return None;
        }
        let head: String = s
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
            .collect();
        let text = if s.starts_with('$') || head == "args" || Builtin::from_ident(&head).is_some() {
            s.to_string()
        } else {
            format!("${s}")
        };
        btparse::parse_expr(&text).ok()
    }

    /// `subject op literal` as a boolean expression.
    pub fn to_expr(&self) -> Option<Expr> {
        let rel = self.relation()?;
        let subject = self.subject_expr()?;
        let lit = if rel.value < 0 {
            Expr::new(ExprKind::Unary {
                op: UnOp::Neg,
                expr: Box::new(Expr::int(rel.value.unsigned_abs() as u64)),
            })
        } else {
            Expr::int(rel.value as u64)
        };
        Some(Expr::binary(rel.op, subject, lit))
    }
}

pub fn parse_relation(text: &str) -> Option<Relation> {
    let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if t.eq_ignore_ascii_case("!=null") {
        return Some(Relation {
            op: BinOp::Ne,
            value: 0,
        });
    }
    if t.eq_ignore_ascii_case("==null") {
        return Some(Relation {
            op: BinOp::Eq,
            value: 0,
        });
    }
    // Two-character operators first so `<=` is not read as `<`.
    for op in [BinOp::Eq, BinOp::Ne, BinOp::Le, BinOp::Ge, BinOp::Lt, BinOp::Gt] {
        if let Some(rest) = t.strip_prefix(op.as_str()) {
            return parse_literal(rest).map(|value| Relation { op, value });
        }
    }
    None
}

fn parse_literal(s: &str) -> Option<i128> {
    let (neg, digits) = match s.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, s),
    };
    let v = if let Some(h) = digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).ok()?
    } else if digits.eq_ignore_ascii_case("null") {
        0
    } else {
        digits.parse::<u64>().ok()?
    } as i128;
    Some(if neg { -v } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::btparse::render_expr;

    #[test]
    fn null_relation_becomes_nonzero() {
        let e = ConditionEntry::new("sk", "!=null");
        assert_eq!(render_expr(&e.to_expr().unwrap()), "$sk != 0");
    }

    #[test]
    fn builtins_keep_their_names() {
        let e = ConditionEntry::new("retval", ">=0");
        assert_eq!(render_expr(&e.to_expr().unwrap()), "retval >= 0");
        let e = ConditionEntry::new("args.pid", "> 1");
        assert_eq!(render_expr(&e.to_expr().unwrap()), "args.pid > 1");
        let e = ConditionEntry::new("sk->__sk_common.skc_num", "<= 65535");
        assert_eq!(render_expr(&e.to_expr().unwrap()), "$sk->__sk_common.skc_num <= 65535");
    }

    #[test]
    fn relation_grammar() {
        assert_eq!(
            parse_relation(">= -4"),
            Some(Relation {
                op: BinOp::Ge,
                value: -4
            })
        );
        assert_eq!(
            parse_relation("==0x10"),
            Some(Relation {
                op: BinOp::Eq,
                value: 16
            })
        );
        assert_eq!(parse_relation("is valid"), None);
        assert_eq!(parse_relation(">= len"), None);
        assert_eq!(parse_relation(""), None);
    }

    #[test]
    fn negative_literal_renders_and_reparses() {
        let e = ConditionEntry::new("retval", ">=-1").to_expr().unwrap();
        assert_eq!(btparse::parse_expr(&render_expr(&e)).unwrap(), e);
    }

    #[test]
    fn unparseable_subject_is_not_checkable() {
        assert!(!ConditionEntry::new("sk->", "!=null").is_checkable());
        assert!(!ConditionEntry::new("", "!=null").is_checkable());
        assert!(!ConditionEntry::new("sk", "non-empty").is_checkable());
    }
}
