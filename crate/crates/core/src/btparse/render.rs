use std::fmt::Write;

use super::ast::*;
use super::lexer::escape_str;

const INDENT: &str = "    ";

pub fn render(p: &Program) -> String {
    let mut out = String::new();
    for (i, clause) in p.clauses.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        render_clause(clause, &mut out);
    }
    out
}

fn render_clause(c: &ProbeClause, out: &mut String) {
    let points: Vec<String> = c.attach_points.iter().map(|p| p.to_string()).collect();
    out.push_str(&points.join(", "));
    out.push('\n');
    if let Some(pred) = &c.predicate {
        let mut has_div = false;
        pred.visit(&mut |e| {
            if matches!(e.kind, ExprKind::Binary { op: BinOp::Div, .. }) {
                has_div = true;
            }
        });
        // A bare `/` would close the predicate early.
        if has_div {
            let _ = writeln!(out, "/({})/", render_expr(pred));
        } else {
            let _ = writeln!(out, "/{}/", render_expr(pred));
        }
    }
    out.push_str("{\n");
    render_block(&c.body, 1, out);
    out.push_str("}\n");
}

fn render_block(stmts: &[Stmt], depth: usize, out: &mut String) {
    for s in stmts {
        render_stmt(s, depth, out);
    }
}

fn render_stmt(s: &Stmt, depth: usize, out: &mut String) {
    let pad = INDENT.repeat(depth);
    out.push_str(&pad);
    match &s.kind {
        StmtKind::Assign { var, value } => {
            let _ = writeln!(out, "${var} = {};", render_expr(value));
        }
        StmtKind::MapAssign { map, keys, value } => {
            let _ = writeln!(out, "{} = {};", render_map(map, keys), render_expr(value));
        }
        StmtKind::FieldAssign { target, value } => {
            let _ = writeln!(out, "{} = {};", render_expr(target), render_expr(value));
        }
        StmtKind::Delete { map, keys } => {
            let _ = writeln!(out, "delete({});", render_map(map, keys));
        }
        StmtKind::Printf { format, args } => {
            out.push_str("printf(");
            out.push_str(&escape_str(format));
            for a in args {
                out.push_str(", ");
                out.push_str(&render_expr(a));
            }
            out.push_str(");\n");
        }
        StmtKind::Expr(e) => {
            let _ = writeln!(out, "{};", render_expr(e));
        }
        StmtKind::If {
            cond,
            then_body,
            else_body,
        } => {
            let _ = writeln!(out, "if ({}) {{", render_expr(cond));
            render_block(then_body, depth + 1, out);
            if else_body.is_empty() {
                let _ = writeln!(out, "{pad}}}");
            } else {
                let _ = writeln!(out, "{pad}}} else {{");
                render_block(else_body, depth + 1, out);
                let _ = writeln!(out, "{pad}}}");
            }
        }
        StmtKind::Unroll { count, body } => {
            let _ = writeln!(out, "unroll({count}) {{");
            render_block(body, depth + 1, out);
            let _ = writeln!(out, "{pad}}}");
        }
        StmtKind::Assume(e) => {
            let _ = writeln!(out, "assume({});", render_expr(e));
        }
        StmtKind::Assert(e) => {
            let _ = writeln!(out, "assert({});", render_expr(e));
        }
    }
}

fn render_map(name: &str, keys: &[Expr]) -> String {
    if keys.is_empty() {
        format!("@{name}")
    } else {
        let ks: Vec<String> = keys.iter().map(render_expr).collect();
        format!("@{name}[{}]", ks.join(", "))
    }
}

/// Render an expression with the minimum parentheses needed to re-parse to
/// the same tree.
pub fn render_expr(e: &Expr) -> String {
    match &e.kind {
        ExprKind::Int { value, .. } => value.to_string(),
        ExprKind::Str(s) => escape_str(s),
        ExprKind::Builtin(b) => b.name(),
        ExprKind::Scratch(n) => format!("${n}"),
        ExprKind::Map { name, keys } => render_map(name, keys),
        ExprKind::Field { base, fields } => {
            let b = match base.kind {
                ExprKind::Binary { .. } | ExprKind::Unary { .. } | ExprKind::Cast { .. } => {
                    format!("({})", render_expr(base))
                }
                _ => render_expr(base),
            };
            format!("{b}->{}", fields.join("->"))
        }
        ExprKind::Cast { ty, expr } => format!("({ty}) {}", render_operand(expr)),
        ExprKind::Unary { op, expr } => format!("{}{}", op.as_str(), render_operand(expr)),
        ExprKind::Binary { op, lhs, rhs } => {
            let prec = op.precedence();
            let l = match &lhs.kind {
                ExprKind::Binary { op: lop, .. } if lop.precedence() < prec => {
                    format!("({})", render_expr(lhs))
                }
                _ => render_expr(lhs),
            };
            let r = match &rhs.kind {
                ExprKind::Binary { op: rop, .. } if rop.precedence() <= prec => {
                    format!("({})", render_expr(rhs))
                }
                _ => render_expr(rhs),
            };
            format!("{l} {} {r}", op.as_str())
        }
        ExprKind::Call { func, args } => {
            let a: Vec<String> = args.iter().map(render_expr).collect();
            format!("{}({})", func.as_str(), a.join(", "))
        }
    }
}

fn render_operand(e: &Expr) -> String {
    match e.kind {
        ExprKind::Binary { .. } => format!("({})", render_expr(e)),
        _ => render_expr(e),
    }
}
