//! Seeded program generators.
//!
//! `oracle_program` builds small annotated programs over 8-bit `args.*`
//! inputs whose verdicts can be checked by enumeration. `roundtrip_program`
//! covers as much of the syntax as the parser accepts, for render/parse
//! tests.

use bpfsynth::btparse::{
    BinOp, Builtin, Expr, ExprKind, Func, ProbeClause, ProbeKind, ProbeSpec, Program, Span, Stmt, StmtKind, UnOp,
};
use bpfsynth::symexec::{FieldType, KernelTypeMap};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

fn cast(ty: &str, e: Expr) -> Expr {
    Expr::new(ExprKind::Cast {
        ty: ty.into(),
        expr: Box::new(e),
    })
}

fn unary(op: UnOp, e: Expr) -> Expr {
    Expr::new(ExprKind::Unary { op, expr: Box::new(e) })
}

fn stmt(kind: StmtKind) -> Stmt {
    Stmt::new(kind)
}

/// A generated program for the enumeration oracle.
pub struct OracleCase {
    pub program: Program,
    /// `(args.<field>, width, signed)` for each input.
    pub symbols: Vec<(String, u32, bool)>,
    pub types: KernelTypeMap,
}

struct Oracle<'r> {
    rng: &'r mut ChaCha8Rng,
    fields: Vec<String>,
    vars: Vec<String>,
    ifs: usize,
    unrolls: usize,
}

const ARITH: [BinOp; 11] = [
    BinOp::Add,
    BinOp::Sub,
    BinOp::Mul,
    BinOp::BitAnd,
    BinOp::BitOr,
    BinOp::BitXor,
    BinOp::Shl,
    BinOp::Shr,
    BinOp::Div,
    BinOp::Mod,
    BinOp::Add,
];

const CMP: [BinOp; 6] = [BinOp::Eq, BinOp::Ne, BinOp::Lt, BinOp::Le, BinOp::Gt, BinOp::Ge];

impl Oracle<'_> {
    fn lit(&mut self) -> Expr {
        let ty = *["uint8", "int8", "uint8", "uint16"].choose(self.rng).unwrap();
        let v = match self.rng.gen_range(0..4) {
            0 => self.rng.gen_range(0..4),
            1 => 255,
            _ => self.rng.gen_range(0..256),
        };
        cast(ty, Expr::int(v))
    }

    fn leaf(&mut self) -> Expr {
        match self.rng.gen_range(0..10) {
            0..=4 => {
                let f = self.fields.choose(self.rng).unwrap().clone();
                Expr::new(ExprKind::Builtin(Builtin::Args(f)))
            }
            5..=6 if !self.vars.is_empty() => Expr::scratch(self.vars.choose(self.rng).unwrap().clone()),
            _ => self.lit(),
        }
    }

    fn term(&mut self, depth: u32) -> Expr {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return self.leaf();
        }
        match self.rng.gen_range(0..10) {
            0 => unary(*[UnOp::Neg, UnOp::BitNot].choose(self.rng).unwrap(), self.leaf()),
            1 => {
                let ty = *["uint8", "int8", "uint16", "int16"].choose(self.rng).unwrap();
                cast(ty, self.term(depth - 1))
            }
            _ => {
                let op = *ARITH.choose(self.rng).unwrap();
                let lhs = self.term(depth - 1);
                let mut rhs = self.term(depth - 1);
                if matches!(op, BinOp::Div | BinOp::Mod) && self.rng.gen_bool(0.6) {
                    rhs = Expr::binary(BinOp::BitOr, rhs, cast("uint8", Expr::int(1)));
                }
                if matches!(op, BinOp::Shl | BinOp::Shr) && self.rng.gen_bool(0.5) {
                    rhs = cast("uint8", Expr::int(self.rng.gen_range(0..9)));
                }
                Expr::binary(op, lhs, rhs)
            }
        }
    }

    fn cond(&mut self, depth: u32) -> Expr {
        match self.rng.gen_range(0..10) {
            0 if depth > 0 => {
                let op = *[BinOp::And, BinOp::Or].choose(self.rng).unwrap();
                let l = self.cond(depth - 1);
                let r = self.cond(depth - 1);
                Expr::binary(op, l, r)
            }
            1 if depth > 0 => unary(UnOp::Not, self.cond(depth - 1)),
            2 => self.term(1),
            3 | 4 => {
                let op = *CMP.choose(self.rng).unwrap();
                let l = self.term(1);
                Expr::binary(op, l, Expr::int(self.rng.gen_range(0..256)))
            }
            _ => {
                let op = *CMP.choose(self.rng).unwrap();
                let l = self.term(2);
                let r = self.term(1);
                Expr::binary(op, l, r)
            }
        }
    }

    /// Assertions that often hold, so both verdicts show up.
    fn likely_valid(&mut self) -> Expr {
        let e = self.term(2);
        match self.rng.gen_range(0..4) {
            0 => Expr::binary(BinOp::Le, cast("uint8", e), Expr::int(255)),
            1 => Expr::binary(
                BinOp::Le,
                Expr::binary(BinOp::BitAnd, e, cast("uint8", Expr::int(15))),
                Expr::int(15),
            ),
            2 => Expr::binary(BinOp::Eq, e.clone(), e),
            _ => Expr::binary(BinOp::Ge, cast("uint16", e), Expr::int(0)),
        }
    }

    fn check(&mut self) -> Stmt {
        if self.rng.gen_bool(0.4) {
            stmt(StmtKind::Assert(self.likely_valid()))
        } else {
            stmt(StmtKind::Assert(self.cond(1)))
        }
    }

    fn top(&mut self) -> Stmt {
        match self.rng.gen_range(0..12) {
            0..=3 => {
                let value = self.term(2);
                let var = format!("v{}", self.vars.len());
                self.vars.push(var.clone());
                stmt(StmtKind::Assign { var, value })
            }
            4 => stmt(StmtKind::Assume(self.cond(1))),
            5 => stmt(StmtKind::Printf {
                format: "%d\n".into(),
                args: vec![self.term(2)],
            }),
            6 | 7 if self.ifs < 2 => {
                self.ifs += 1;
                let cond = self.cond(1);
                let then_body = self.inner();
                let else_body = if self.rng.gen_bool(0.5) {
                    self.inner()
                } else {
                    Vec::new()
                };
                stmt(StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                })
            }
            8 if self.unrolls < 1 && !self.vars.is_empty() => {
                self.unrolls += 1;
                let count = self.rng.gen_range(1..=4);
                let body = self.inner();
                stmt(StmtKind::Unroll { count, body })
            }
            _ => self.check(),
        }
    }

    /// Statements for nested blocks: only reassignments and checks, so every
    /// variable is defined on every path.
    fn inner(&mut self) -> Vec<Stmt> {
        let n = self.rng.gen_range(1..3);
        (0..n)
            .map(|_| {
                if !self.vars.is_empty() && self.rng.gen_bool(0.5) {
                    let var = self.vars.choose(self.rng).unwrap().clone();
                    let value = self.term(2);
                    stmt(StmtKind::Assign { var, value })
                } else {
                    self.check()
                }
            })
            .collect()
    }
}

/// An annotated program over one to three 8-bit inputs with at most two
/// `if`s and one `unroll` of at most four iterations.
pub fn oracle_program(rng: &mut ChaCha8Rng) -> OracleCase {
    let n = match rng.gen_range(0..20) {
        0 => 3,
        1..=9 => 2,
        _ => 1,
    };
    let names = ["a", "b", "c"];
    let mut types = KernelTypeMap::empty();
    let mut symbols = Vec::new();
    for name in &names[..n] {
        let signed = rng.gen_bool(0.5);
        types.insert(name.to_string(), FieldType { width: 8, signed }).unwrap();
        symbols.push((format!("args.{name}"), 8, signed));
    }
    let mut g = Oracle {
        rng,
        fields: names[..n].iter().map(|s| s.to_string()).collect(),
        vars: Vec::new(),
        ifs: 0,
        unrolls: 0,
    };
    let predicate = if g.rng.gen_bool(0.2) {
        let f = g.fields.choose(g.rng).unwrap().clone();
        let op = *CMP.choose(g.rng).unwrap();
        let v = g.rng.gen_range(0..200);
        Some(Expr::binary(
            op,
            Expr::new(ExprKind::Builtin(Builtin::Args(f))),
            Expr::int(v),
        ))
    } else {
        None
    };
    let len = g.rng.gen_range(2..7);
    let mut body: Vec<Stmt> = (0..len).map(|_| g.top()).collect();
    if !body.iter().any(has_assert) {
        body.push(g.check());
    }
    let clause = ProbeClause {
        attach_points: vec![ProbeSpec::new(ProbeKind::Tracepoint, "t:e")],
        predicate,
        body,
        span: Span::default(),
    };
    OracleCase {
        program: Program { clauses: vec![clause] },
        symbols,
        types,
    }
}

fn has_assert(s: &Stmt) -> bool {
    match &s.kind {
        StmtKind::Assert(_) => true,
        StmtKind::If {
            then_body, else_body, ..
        } => then_body.iter().chain(else_body).any(has_assert),
        StmtKind::Unroll { body, .. } => body.iter().any(has_assert),
        _ => false,
    }
}

pub const INT_TYPES: [&str; 20] = [
    "u8", "u16", "u32", "u64", "s8", "s16", "s32", "s64", "uint8", "uint16", "uint32", "uint64", "int8", "int16",
    "int32", "int64", "int", "char", "long", "short",
];

const NAMES: [&str; 8] = ["x", "sk", "cnt", "ts", "fd", "ret", "port", "n2"];
const FIELDS: [&str; 7] = [
    "sk",
    "dport",
    "__sk_common.skc_dport",
    "len",
    "skc_family",
    "f_path.dentry",
    "pid",
];

struct Rt<'r> {
    rng: &'r mut ChaCha8Rng,
}

impl Rt<'_> {
    fn name(&mut self) -> String {
        NAMES.choose(self.rng).unwrap().to_string()
    }

    fn string(&mut self) -> String {
        let alphabet: Vec<char> = "abcXYZ019 %:-_.\n\t\"\\".chars().collect();
        let len = self.rng.gen_range(0..12);
        (0..len).map(|_| *alphabet.choose(self.rng).unwrap()).collect()
    }

    fn int(&mut self) -> u64 {
        match self.rng.gen_range(0..4) {
            0 => self.rng.gen_range(0..10),
            1 => self.rng.gen(),
            _ => self.rng.gen_range(0..100_000),
        }
    }

    fn builtin(&mut self) -> Builtin {
        match self.rng.gen_range(0..6) {
            0 => Builtin::Tid,
            1 => Builtin::Pid,
            2 => Builtin::Comm,
            3 => Builtin::Retval,
            4 => Builtin::Arg(self.rng.gen_range(0..10)),
            _ => Builtin::Args(self.name()),
        }
    }

    fn keys(&mut self, depth: u32) -> Vec<Expr> {
        let n = self.rng.gen_range(0..4);
        (0..n).map(|_| self.expr(depth.saturating_sub(1), false)).collect()
    }

    fn leaf(&mut self) -> Expr {
        Expr::new(match self.rng.gen_range(0..5) {
            0 => ExprKind::Int {
                value: self.int(),
                width: 64,
            },
            1 => ExprKind::Str(self.string()),
            2 => ExprKind::Builtin(self.builtin()),
            3 => ExprKind::Scratch(self.name()),
            _ => ExprKind::Map {
                name: self.name(),
                keys: Vec::new(),
            },
        })
    }

    fn field(&mut self, depth: u32) -> Expr {
        let base = match self.rng.gen_range(0..5) {
            0 => Expr::scratch(self.name()),
            1 => Expr::new(ExprKind::Builtin(self.builtin())),
            2 => cast("struct sock *", Expr::new(ExprKind::Builtin(Builtin::Arg(0)))),
            3 => Expr::new(ExprKind::Map {
                name: self.name(),
                keys: self.keys(depth),
            }),
            _ => Expr::new(ExprKind::Call {
                func: Func::Str,
                args: vec![Expr::scratch(self.name())],
            }),
        };
        let n = self.rng.gen_range(1..4);
        let fields = (0..n).map(|_| FIELDS.choose(self.rng).unwrap().to_string()).collect();
        Expr::new(ExprKind::Field {
            base: Box::new(base),
            fields,
        })
    }

    /// `no_div` keeps `/` out so the expression can sit in a predicate.
    fn expr(&mut self, depth: u32, no_div: bool) -> Expr {
        if depth == 0 || self.rng.gen_bool(0.2) {
            return self.leaf();
        }
        let d = depth - 1;
        match self.rng.gen_range(0..12) {
            0 => Expr::new(ExprKind::Map {
                name: self.name(),
                keys: self.keys(depth),
            }),
            1 => self.field(depth),
            2 => {
                let ty = if self.rng.gen_bool(0.2) {
                    "struct sock *".to_string()
                } else {
                    INT_TYPES.choose(self.rng).unwrap().to_string()
                };
                let inner = self.expr_no_cast(d, no_div);
                cast(&ty, inner)
            }
            3 => {
                let op = *[UnOp::Not, UnOp::Neg, UnOp::BitNot].choose(self.rng).unwrap();
                let inner = loop {
                    let e = self.expr(d, no_div);
                    if !matches!(e.kind, ExprKind::Unary { .. }) {
                        break e;
                    }
                };
                unary(op, inner)
            }
            4 => {
                let func = *[Func::Ntop, Func::Bswap, Func::Sizeof, Func::Time, Func::Str]
                    .choose(self.rng)
                    .unwrap();
                let n = match func {
                    Func::Time => self.rng.gen_range(0..2),
                    Func::Ntop | Func::Str => self.rng.gen_range(1..3),
                    _ => 1,
                };
                let args = (0..n).map(|_| self.expr(d, false)).collect();
                Expr::new(ExprKind::Call { func, args })
            }
            _ => {
                let op = loop {
                    let op = *BinOp::ALL.choose(self.rng).unwrap();
                    if !(no_div && op == BinOp::Div) {
                        break op;
                    }
                };
                let l = self.expr(d, no_div);
                let r = self.expr(d, no_div);
                Expr::binary(op, l, r)
            }
        }
    }

    fn expr_no_cast(&mut self, depth: u32, no_div: bool) -> Expr {
        loop {
            let e = self.expr(depth, no_div);
            if !matches!(e.kind, ExprKind::Cast { .. }) {
                return e;
            }
        }
    }

    fn block(&mut self, depth: u32) -> Vec<Stmt> {
        let n = self.rng.gen_range(0..4);
        (0..n).map(|_| self.stmt(depth)).collect()
    }

    fn stmt(&mut self, depth: u32) -> Stmt {
        stmt(match self.rng.gen_range(0..12) {
            0 => StmtKind::Assign {
                var: self.name(),
                value: self.expr(3, false),
            },
            1 => StmtKind::MapAssign {
                map: self.name(),
                keys: self.keys(2),
                value: self.expr(3, false),
            },
            2 => StmtKind::FieldAssign {
                target: self.field(2),
                value: self.expr(2, false),
            },
            3 => StmtKind::Delete {
                map: self.name(),
                keys: self.keys(2),
            },
            4 => {
                let n = self.rng.gen_range(0..4);
                StmtKind::Printf {
                    format: self.string(),
                    args: (0..n).map(|_| self.expr(2, false)).collect(),
                }
            }
            5 => StmtKind::Expr(Expr::new(ExprKind::Call {
                func: Func::Time,
                args: Vec::new(),
            })),
            6 if depth > 0 => StmtKind::If {
                cond: self.expr(3, false),
                then_body: self.block(depth - 1),
                else_body: if self.rng.gen_bool(0.5) {
                    self.block(depth - 1)
                } else {
                    Vec::new()
                },
            },
            7 if depth > 0 => StmtKind::Unroll {
                count: self.rng.gen_range(1..20),
                body: self.block(depth - 1),
            },
            8 => StmtKind::Assume(self.expr(3, false)),
            9 => StmtKind::Assert(self.expr(3, false)),
            _ => StmtKind::Assign {
                var: self.name(),
                value: self.expr(2, false),
            },
        })
    }

    fn probe(&mut self) -> ProbeSpec {
        let kind = *ProbeKind::ALL.choose(self.rng).unwrap();
        let f = *["tcp_connect", "vfs_read", "do_sys_open", "__x64_sys_kill"]
            .choose(self.rng)
            .unwrap();
        let target = match kind {
            ProbeKind::Kprobe | ProbeKind::Kretprobe => f.to_string(),
            ProbeKind::Tracepoint => format!("syscalls:sys_enter_{}", self.name()),
            ProbeKind::Uprobe | ProbeKind::Uretprobe => format!("/bin/bash:{}", self.name()),
        };
        ProbeSpec::new(kind, target)
    }
}

/// A program drawn from the whole parsed syntax.
pub fn roundtrip_program(rng: &mut ChaCha8Rng) -> Program {
    let mut g = Rt { rng };
    let n = g.rng.gen_range(1..4);
    let clauses = (0..n)
        .map(|_| {
            let points = g.rng.gen_range(1..3);
            ProbeClause {
                attach_points: (0..points).map(|_| g.probe()).collect(),
                predicate: if g.rng.gen_bool(0.4) {
                    Some(g.expr(3, true))
                } else {
                    None
                },
                body: g.block(2),
                span: Span::default(),
            }
        })
        .collect();
    Program { clauses }
}

/// Number of `assume`/`assert` statements at any depth.
pub fn annotation_count(p: &Program) -> usize {
    let mut n = 0;
    p.visit_stmts(&mut |s| {
        if s.is_annotation() {
            n += 1;
        }
    });
    n
}
