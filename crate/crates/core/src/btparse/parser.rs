use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::ParseError;

const INT_TYPES: [&str; 20] = [
    "u8", "u16", "u32", "u64", "s8", "s16", "s32", "s64", "uint8", "uint16", "uint32", "uint64", "int8", "int16",
    "int32", "int64", "int", "char", "long", "short",
];

pub(crate) struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

pub fn parse(source: &str) -> Result<Program, ParseError> {
    let mut p = Parser::new(source)?;
    let mut clauses = Vec::new();
    while !p.at_eof() {
        clauses.push(p.clause()?);
    }
    if clauses.is_empty() {
        return Err(ParseError::EmptyProgram);
    }
    Ok(Program { clauses })
}

/// Parse a standalone expression, e.g. a contract subject such as
/// `$sk->__sk_common.skc_num`.
pub fn parse_expr(source: &str) -> Result<Expr, ParseError> {
    // Expressions are lexed in statement context, so wrap them in a body.
    let wrapped = format!("kprobe:__expr {{\n{source}\n}}");
    let inner = || -> Result<Expr, ParseError> {
        let mut p = Parser::new(&wrapped)?;
        p.next();
        p.expect("{")?;
        let e = p.expr()?;
        if !p.is_punct("}") {
            return Err(p.error_here("trailing input after expression"));
        }
        Ok(e)
    };
    inner().map_err(|e| match e {
        ParseError::Syntax { line, column, message } => ParseError::Syntax {
            line: line.saturating_sub(1).max(1),
            column,
            message,
        },
        other => other,
    })
}

impl Parser {
    fn new(source: &str) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: tokenize(source)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        let i = (self.pos + 1).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn eat(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.next();
            true
        } else {
            false
        }
    }

    fn error_here(&self, msg: impl Into<String>) -> ParseError {
        let span = self.span();
        ParseError::Syntax {
            line: span.line,
            column: span.column,
            message: msg.into(),
        }
    }

    fn describe(tok: &Tok) -> String {
        match tok {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(v) => format!("integer `{v}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::Scratch(s) => format!("`${s}`"),
            Tok::Map(s) => format!("`@{s}`"),
            Tok::Probe { kind, target } => format!("probe `{kind}:{target}`"),
            Tok::PredOpen | Tok::PredClose => "`/`".into(),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn expect(&mut self, p: &str) -> Result<(), ParseError> {
        if self.eat(p) {
            Ok(())
        } else {
            Err(self.error_here(format!("expected `{p}`, found {}", Self::describe(self.peek()))))
        }
    }

    fn clause(&mut self) -> Result<ProbeClause, ParseError> {
        let span = self.span();
        let mut attach_points = vec![self.probe()?];
        while self.eat(",") {
            attach_points.push(self.probe()?);
        }
        let predicate = if matches!(self.peek(), Tok::PredOpen) {
            self.next();
            let e = self.expr()?;
            if !matches!(self.peek(), Tok::PredClose) {
                return Err(self.error_here(format!(
                    "expected `/` closing the predicate, found {}",
                    Self::describe(self.peek())
                )));
            }
            self.next();
            Some(e)
        } else {
            None
        };
        let body = self.block()?;
        Ok(ProbeClause {
            attach_points,
            predicate,
            body,
            span,
        })
    }

    fn probe(&mut self) -> Result<ProbeSpec, ParseError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Probe { kind, target } => {
                let Some(k) = ProbeKind::from_name(&kind) else {
                    return Err(self.error_here(format!(
                        "unsupported probe type `{kind}` (expected kprobe, kretprobe, tracepoint, uprobe or uretprobe)"
                    )));
                };
                if target.is_empty() {
                    return Err(self.error_here("probe target is empty"));
                }
                self.next();
                Ok(ProbeSpec { kind: k, target, span })
            }
            other => Err(self.error_here(format!(
                "expected a probe such as `kprobe:<function>`, found {}",
                Self::describe(&other)
            ))),
        }
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect("{")?;
        let mut body = Vec::new();
        loop {
            while self.eat(";") {}
            if self.eat("}") {
                return Ok(body);
            }
            if self.at_eof() {
                return Err(self.error_here("unexpected end of input, expected `}`"));
            }
            let stmt = self.stmt()?;
            let needs_semi = !matches!(stmt.kind, StmtKind::If { .. } | StmtKind::Unroll { .. });
            body.push(stmt);
            if needs_semi && !self.eat(";") && !self.is_punct("}") {
                return Err(self.error_here(format!("expected `;`, found {}", Self::describe(self.peek()))));
            }
        }
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let span = self.span();
        let kind = match self.peek().clone() {
            Tok::Ident(id) if id == "if" => {
                self.next();
                self.expect("(")?;
                let cond = self.expr()?;
                self.expect(")")?;
                let then_body = self.block()?;
                let else_body = if matches!(self.peek(), Tok::Ident(s) if s == "else") {
                    self.next();
                    if matches!(self.peek(), Tok::Ident(s) if s == "if") {
                        vec![self.stmt()?]
                    } else {
                        self.block()?
                    }
                } else {
                    Vec::new()
                };
                StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                }
            }
            Tok::Ident(id) if id == "unroll" => {
                self.next();
                self.expect("(")?;
                let count = match self.peek().clone() {
                    Tok::Int(v) if v > 0 => {
                        self.next();
                        v
                    }
                    _ => return Err(self.error_here("unroll count must be a positive integer literal")),
                };
                self.expect(")")?;
                let body = self.block()?;
                StmtKind::Unroll { count, body }
            }
            Tok::Ident(id) if (id == "assume" || id == "assert") && self.peek2() == &Tok::Punct("(") => {
                self.next();
                self.expect("(")?;
                let e = self.expr()?;
                self.expect(")")?;
                if id == "assume" {
                    StmtKind::Assume(e)
                } else {
                    StmtKind::Assert(e)
                }
            }
            Tok::Ident(id) if id == "printf" => {
                self.next();
                self.expect("(")?;
                let format = match self.next().tok {
                    Tok::Str(s) => s,
                    _ => {
                        return Err(ParseError::Syntax {
                            line: span.line,
                            column: span.column,
                            message: "printf expects a format string as its first argument".into(),
                        })
                    }
                };
                let mut args = Vec::new();
                while self.eat(",") {
                    args.push(self.expr()?);
                }
                self.expect(")")?;
                StmtKind::Printf { format, args }
            }
            Tok::Ident(id) if id == "delete" => {
                self.next();
                self.expect("(")?;
                let (map, keys) = match self.peek().clone() {
                    Tok::Map(name) => {
                        self.next();
                        (name, self.map_keys()?)
                    }
                    other => {
                        return Err(
                            self.error_here(format!("delete expects a map access, found {}", Self::describe(&other)))
                        )
                    }
                };
                self.expect(")")?;
                StmtKind::Delete { map, keys }
            }
            Tok::Scratch(name) if self.peek2() == &Tok::Punct("=") => {
                self.next();
                self.next();
                StmtKind::Assign {
                    var: name,
                    value: self.expr()?,
                }
            }
            Tok::Map(name) => {
                let save = self.pos;
                self.next();
                let keys = self.map_keys()?;
                if self.eat("=") {
                    StmtKind::MapAssign {
                        map: name,
                        keys,
                        value: self.expr()?,
                    }
                } else {
                    self.pos = save;
                    self.expr_stmt(span)?
                }
            }
            _ => self.expr_stmt(span)?,
        };
        Ok(Stmt { kind, span })
    }

    /// An expression statement, or a field assignment when `=` follows.
    fn expr_stmt(&mut self, span: Span) -> Result<StmtKind, ParseError> {
        let e = self.expr()?;
        if !self.eat("=") {
            return Ok(StmtKind::Expr(e));
        }
        if !matches!(e.kind, ExprKind::Field { .. }) {
            return Err(ParseError::Syntax {
                line: span.line,
                column: span.column,
                message: "invalid assignment target".into(),
            });
        }
        Ok(StmtKind::FieldAssign {
            target: e,
            value: self.expr()?,
        })
    }

    fn map_keys(&mut self) -> Result<Vec<Expr>, ParseError> {
        let mut keys = Vec::new();
        if self.eat("[") {
            keys.push(self.expr()?);
            while self.eat(",") {
                keys.push(self.expr()?);
            }
            self.expect("]")?;
        }
        Ok(keys)
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(1)
    }

    fn peek_binop(&self) -> Option<BinOp> {
        let Tok::Punct(p) = self.peek() else {
            return None;
        };
        BinOp::ALL.into_iter().find(|op| op.as_str() == *p)
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.peek_binop() {
            let prec = op.precedence();
            if prec < min_prec {
                break;
            }
            let span = self.span();
            self.next();
            let rhs = self.binary(prec + 1)?;
            lhs = Expr {
                kind: ExprKind::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                span,
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        let op = match self.peek() {
            Tok::Punct("!") => Some(UnOp::Not),
            Tok::Punct("-") => Some(UnOp::Neg),
            Tok::Punct("~") => Some(UnOp::BitNot),
            _ => None,
        };
        if let Some(op) = op {
            self.next();
            let e = self.unary()?;
            return Ok(Expr {
                kind: ExprKind::Unary { op, expr: Box::new(e) },
                span,
            });
        }
        if self.is_punct("(") && self.cast_ahead() {
            self.next();
            let ty = self.type_name()?;
            self.expect(")")?;
            let e = self.unary()?;
            return Ok(Expr {
                kind: ExprKind::Cast { ty, expr: Box::new(e) },
                span,
            });
        }
        self.postfix()
    }

    fn cast_ahead(&self) -> bool {
        match self.peek2() {
            Tok::Ident(s) => s == "struct" || INT_TYPES.contains(&s.as_str()),
            _ => false,
        }
    }

    fn type_name(&mut self) -> Result<String, ParseError> {
        let mut ty = match self.next().tok {
            Tok::Ident(s) if s == "struct" => match self.next().tok {
                Tok::Ident(name) => format!("struct {name}"),
                _ => return Err(self.error_here("expected a struct name")),
            },
            Tok::Ident(s) => s,
            _ => return Err(self.error_here("expected a type name")),
        };
        let mut stars = 0;
        while self.eat("*") {
            stars += 1;
        }
        if stars > 0 {
            ty.push(' ');
            ty.push_str(&"*".repeat(stars));
        }
        Ok(ty)
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.primary()?;
        while self.is_punct("->") {
            let span = e.span;
            let mut fields = Vec::new();
            while self.eat("->") {
                fields.push(self.field_path()?);
            }
            e = match e.kind {
                // `a->b` followed by another chain stays one flat chain.
                ExprKind::Field { base, fields: mut prev } => {
                    prev.extend(fields);
                    Expr {
                        kind: ExprKind::Field { base, fields: prev },
                        span,
                    }
                }
                kind => Expr {
                    kind: ExprKind::Field {
                        base: Box::new(Expr { kind, span }),
                        fields,
                    },
                    span,
                },
            };
        }
        Ok(e)
    }

    fn field_path(&mut self) -> Result<String, ParseError> {
        let mut path = match self.next().tok {
            Tok::Ident(s) => s,
            other => {
                return Err(self.error_here(format!(
                    "expected a field name after `->`, found {}",
                    Self::describe(&other)
                )))
            }
        };
        while self.is_punct(".") {
            self.next();
            match self.next().tok {
                Tok::Ident(s) => {
                    path.push('.');
                    path.push_str(&s);
                }
                other => {
                    return Err(self.error_here(format!(
                        "expected a field name after `.`, found {}",
                        Self::describe(&other)
                    )))
                }
            }
        }
        Ok(path)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        let t = self.next();
        let kind = match t.tok {
            Tok::Int(v) => ExprKind::Int { value: v, width: 64 },
            Tok::Str(s) => ExprKind::Str(s),
            Tok::Scratch(name) => ExprKind::Scratch(name),
            Tok::Map(name) => {
                let keys = self.map_keys()?;
                ExprKind::Map { name, keys }
            }
            Tok::Punct("(") => {
                let e = self.expr()?;
                self.expect(")")?;
                return Ok(e);
            }
            Tok::Ident(id) if id == "args" => {
                if !self.eat(".") {
                    return Err(self.error_here("expected `.` after `args`"));
                }
                match self.next().tok {
                    Tok::Ident(field) => ExprKind::Builtin(Builtin::Args(field)),
                    _ => return Err(self.error_here("expected a field name after `args.`")),
                }
            }
            Tok::Ident(id) => {
                if let Some(b) = Builtin::from_ident(&id) {
                    ExprKind::Builtin(b)
                } else if let Some(func) = Func::from_ident(&id) {
                    self.expect("(")?;
                    let mut args = Vec::new();
                    if !self.is_punct(")") {
                        args.push(self.expr()?);
                        while self.eat(",") {
                            args.push(self.expr()?);
                        }
                    }
                    self.expect(")")?;
                    ExprKind::Call { func, args }
                } else {
                    return Err(ParseError::Syntax {
                        line: span.line,
                        column: span.column,
                        message: format!("unknown identifier `{id}`"),
                    });
                }
            }
            other => {
                return Err(ParseError::Syntax {
                    line: span.line,
                    column: span.column,
                    message: format!("expected an expression, found {}", Self::describe(&other)),
                })
            }
        };
        Ok(Expr { kind, span })
    }
}
