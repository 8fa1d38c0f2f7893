//! Syntax tree for the supported bpftrace subset.
//!
//! Every node carries a [`Span`] for diagnostics. Spans never take part in
//! equality, so two trees compare equal when they have the same shape and
//! contents regardless of where they were parsed from. This is what the
//! render/parse round-trip relies on.

use std::fmt;

/// Source position (1-based line and column).
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub line: u32,
    pub column: u32,
}

impl Span {
    pub fn new(line: u32, column: u32) -> Self {
        Span { line, column }
    }
}

impl PartialEq for Span {
    fn eq(&self, _other: &Self) -> bool {
        true
    }
}

impl Eq for Span {}

// Consistent with `eq`: every span hashes the same.
impl std::hash::Hash for Span {
    fn hash<H: std::hash::Hasher>(&self, _state: &mut H) {}
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub clauses: Vec<ProbeClause>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeClause {
    pub attach_points: Vec<ProbeSpec>,
    pub predicate: Option<Expr>,
    pub body: Vec<Stmt>,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProbeKind {
    Kprobe,
    Kretprobe,
    Tracepoint,
    Uprobe,
    Uretprobe,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 5] = [
        ProbeKind::Kprobe,
        ProbeKind::Kretprobe,
        ProbeKind::Tracepoint,
        ProbeKind::Uprobe,
        ProbeKind::Uretprobe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Kprobe => "kprobe",
            ProbeKind::Kretprobe => "kretprobe",
            ProbeKind::Tracepoint => "tracepoint",
            ProbeKind::Uprobe => "uprobe",
            ProbeKind::Uretprobe => "uretprobe",
        }
    }

    pub fn from_name(name: &str) -> Option<ProbeKind> {
        ProbeKind::ALL.into_iter().find(|k| k.as_str() == name)
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One attach point, e.g. `kprobe:tcp_connect` or
/// `tracepoint:syscalls:sys_enter_kill`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProbeSpec {
    pub kind: ProbeKind,
    pub target: String,
    pub span: Span,
}

impl ProbeSpec {
    pub fn new(kind: ProbeKind, target: impl Into<String>) -> Self {
        ProbeSpec {
            kind,
            target: target.into(),
            span: Span::default(),
        }
    }

    /// `kind:target`, the form used as a contract key.
    pub fn key(&self) -> String {
        format!("{}:{}", self.kind, self.target)
    }
}

impl fmt::Display for ProbeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Self {
        Stmt {
            kind,
            span: Span::default(),
        }
    }

    pub fn is_annotation(&self) -> bool {
        matches!(self.kind, StmtKind::Assume(_) | StmtKind::Assert(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StmtKind {
    /// `$var = value;` (the name excludes the `$`).
    Assign {
        var: String,
        value: Expr,
    },
    /// `@map[keys] = value;` (the name excludes the `@`).
    MapAssign {
        map: String,
        keys: Vec<Expr>,
        value: Expr,
    },
    /// `<field chain> = value;`. Parsed so the safety gate can reject it.
    FieldAssign {
        target: Expr,
        value: Expr,
    },
    Delete {
        map: String,
        keys: Vec<Expr>,
    },
    Printf {
        format: String,
        args: Vec<Expr>,
    },
    Expr(Expr),
    If {
        cond: Expr,
        then_body: Vec<Stmt>,
        else_body: Vec<Stmt>,
    },
    Unroll {
        count: u64,
        body: Vec<Stmt>,
    },
    Assume(Expr),
    Assert(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Expr {
            kind,
            span: Span::default(),
        }
    }

    pub fn int(value: u64) -> Self {
        Expr::new(ExprKind::Int { value, width: 64 })
    }

    pub fn scratch(name: impl Into<String>) -> Self {
        Expr::new(ExprKind::Scratch(name.into()))
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::new(ExprKind::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprKind {
    /// Integer literal with a width hint in bits (64 unless stated otherwise).
    Int {
        value: u64,
        width: u32,
    },
    Str(String),
    Builtin(Builtin),
    /// `$name` (the name excludes the `$`).
    Scratch(String),
    /// `@name[keys]`; `keys` is empty for a scalar map.
    Map {
        name: String,
        keys: Vec<Expr>,
    },
    /// `base->f1->f2`. A single field may contain dots, as in
    /// `$sk->__sk_common.skc_dport`.
    Field {
        base: Box<Expr>,
        fields: Vec<String>,
    },
    /// `(type) expr`, with the type kept as normalized text such as
    /// `struct sock *` or `uint16`.
    Cast {
        ty: String,
        expr: Box<Expr>,
    },
    Unary {
        op: UnOp,
        expr: Box<Expr>,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call {
        func: Func,
        args: Vec<Expr>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Builtin {
    Tid,
    Pid,
    Comm,
    Retval,
    /// `arg0` .. `arg9`
    Arg(u8),
    /// `args.<field>`
    Args(String),
}

impl Builtin {
    pub fn from_ident(name: &str) -> Option<Builtin> {
        Some(match name {
            "tid" => Builtin::Tid,
            "pid" => Builtin::Pid,
            "comm" => Builtin::Comm,
            "retval" => Builtin::Retval,
            _ => {
                let n = name.strip_prefix("arg")?;
                if n.len() != 1 {
                    return None;
                }
                let d = n.parse::<u8>().ok()?;
                Builtin::Arg(d)
            }
        })
    }

    /// Name used both for rendering and as the symbol name in symexec.
    pub fn name(&self) -> String {
        match self {
            Builtin::Tid => "tid".into(),
            Builtin::Pid => "pid".into(),
            Builtin::Comm => "comm".into(),
            Builtin::Retval => "retval".into(),
            Builtin::Arg(n) => format!("arg{n}"),
            Builtin::Args(f) => format!("args.{f}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Ntop,
    Bswap,
    Sizeof,
    Time,
    Str,
}

impl Func {
    pub fn from_ident(name: &str) -> Option<Func> {
        Some(match name {
            "ntop" => Func::Ntop,
            "bswap" => Func::Bswap,
            "sizeof" => Func::Sizeof,
            "time" => Func::Time,
            "str" => Func::Str,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Func::Ntop => "ntop",
            Func::Bswap => "bswap",
            Func::Sizeof => "sizeof",
            Func::Time => "time",
            Func::Str => "str",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    /// `!`
    Not,
    /// `-`
    Neg,
    /// `~`
    BitNot,
}

impl UnOp {
    pub fn as_str(self) -> &'static str {
        match self {
            UnOp::Not => "!",
            UnOp::Neg => "-",
            UnOp::BitNot => "~",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    BitAnd,
    BitOr,
    BitXor,
    Shl,
    Shr,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub const ALL: [BinOp; 18] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Mod,
        BinOp::BitAnd,
        BinOp::BitOr,
        BinOp::BitXor,
        BinOp::Shl,
        BinOp::Shr,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::Lt,
        BinOp::Le,
        BinOp::Gt,
        BinOp::Ge,
        BinOp::And,
        BinOp::Or,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::BitAnd => "&",
            BinOp::BitOr => "|",
            BinOp::BitXor => "^",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::BitOr => 3,
            BinOp::BitXor => 4,
            BinOp::BitAnd => 5,
            BinOp::Eq | BinOp::Ne => 6,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 7,
            BinOp::Shl | BinOp::Shr => 8,
            BinOp::Add | BinOp::Sub => 9,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 10,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge
        )
    }
}

impl Program {
    /// Walk every statement (including nested ones) in document order.
    pub fn visit_stmts<'a>(&'a self, f: &mut dyn FnMut(&'a Stmt)) {
        for clause in &self.clauses {
            visit_block(&clause.body, f);
        }
    }
}

pub(crate) fn visit_block<'a>(stmts: &'a [Stmt], f: &mut dyn FnMut(&'a Stmt)) {
    for s in stmts {
        f(s);
        match &s.kind {
            StmtKind::If {
                then_body, else_body, ..
            } => {
                visit_block(then_body, f);
                visit_block(else_body, f);
            }
            StmtKind::Unroll { body, .. } => visit_block(body, f),
            _ => {}
        }
    }
}

impl Expr {
    /// Pre-order traversal over this expression and its children.
    pub fn visit(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Map { keys, .. } => keys.iter().for_each(|k| k.visit(f)),
            ExprKind::Field { base, .. } => base.visit(f),
            ExprKind::Cast { expr, .. } | ExprKind::Unary { expr, .. } => expr.visit(f),
            ExprKind::Binary { lhs, rhs, .. } => {
                lhs.visit(f);
                rhs.visit(f);
            }
            ExprKind::Call { args, .. } => args.iter().for_each(|a| a.visit(f)),
            ExprKind::Int { .. } | ExprKind::Str(_) | ExprKind::Builtin(_) | ExprKind::Scratch(_) => {}
        }
    }
}
