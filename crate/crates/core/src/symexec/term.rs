//! Bit-vector/boolean terms with constant-folding constructors.

use std::fmt;
use std::sync::Arc;

pub type T = Arc<Term>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ult,
    Ule,
    Slt,
    Sle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BvUnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BvBinOp {
    Add,
    Sub,
    Mul,
    Udiv,
    Urem,
    Sdiv,
    Srem,
    And,
    Or,
    Xor,
    Shl,
    Lshr,
    Ashr,
}

/// A symbolic value. Boolean terms have width 0.
#[derive(Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Bool(bool),
    Bv {
        value: u128,
        width: u32,
    },
    Var {
        name: String,
        width: u32,
    },
    /// Uninterpreted function application.
    Uf {
        name: String,
        args: Vec<T>,
        width: u32,
    },
    Not(T),
    And(Vec<T>),
    Or(Vec<T>),
    Cmp {
        op: CmpOp,
        lhs: T,
        rhs: T,
    },
    Ite {
        cond: T,
        then: T,
        els: T,
    },
    Un {
        op: BvUnOp,
        arg: T,
    },
    Bin {
        op: BvBinOp,
        lhs: T,
        rhs: T,
    },
    Extract {
        hi: u32,
        lo: u32,
        arg: T,
    },
    Concat {
        hi: T,
        lo: T,
    },
    ZeroExt {
        by: u32,
        arg: T,
    },
    SignExt {
        by: u32,
        arg: T,
    },
}

impl Term {
    pub fn width(&self) -> u32 {
        match self {
            Term::Bool(_) | Term::Not(_) | Term::And(_) | Term::Or(_) | Term::Cmp { .. } => 0,
            Term::Bv { width, .. } | Term::Var { width, .. } | Term::Uf { width, .. } => *width,
            Term::Ite { then, .. } => then.width(),
            Term::Un { arg, .. } => arg.width(),
            Term::Bin { lhs, .. } => lhs.width(),
            Term::Extract { hi, lo, .. } => hi - lo + 1,
            Term::Concat { hi, lo } => hi.width() + lo.width(),
            Term::ZeroExt { by, arg } | Term::SignExt { by, arg } => arg.width() + by,
        }
    }

    pub fn is_bool(&self) -> bool {
        self.width() == 0
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Term::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_bv(&self) -> Option<u128> {
        match self {
            Term::Bv { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn children(&self) -> Vec<&T> {
        match self {
            Term::Bool(_) | Term::Bv { .. } | Term::Var { .. } => vec![],
            Term::Uf { args, .. } | Term::And(args) | Term::Or(args) => args.iter().collect(),
            Term::Not(a) | Term::Un { arg: a, .. } | Term::Extract { arg: a, .. } => vec![a],
            Term::ZeroExt { arg, .. } | Term::SignExt { arg, .. } => vec![arg],
            Term::Cmp { lhs, rhs, .. } | Term::Bin { lhs, rhs, .. } => vec![lhs, rhs],
            Term::Concat { hi, lo } => vec![hi, lo],
            Term::Ite { cond, then, els } => vec![cond, then, els],
        }
    }
}

/// Concrete bit-vector arithmetic shared by constant folding and model
/// evaluation. Values are kept masked to their width; division by zero
/// follows SMT-LIB (`udiv x 0 = ~0`, `urem x 0 = x`).
pub mod bv {
    use super::{BvBinOp, BvUnOp, CmpOp};

    pub fn mask(width: u32) -> u128 {
        if width >= 128 {
            u128::MAX
        } else {
            (1u128 << width) - 1
        }
    }

    pub fn msb(v: u128, width: u32) -> bool {
        (v >> (width - 1)) & 1 == 1
    }

    pub fn to_signed(v: u128, width: u32) -> i128 {
        if width >= 128 {
            v as i128
        } else if msb(v, width) {
            (v | !mask(width)) as i128
        } else {
            v as i128
        }
    }

    fn neg(v: u128, w: u32) -> u128 {
        v.wrapping_neg() & mask(w)
    }

    fn udiv(a: u128, b: u128, w: u32) -> u128 {
        a.checked_div(b).unwrap_or(mask(w))
    }

    fn urem(a: u128, b: u128) -> u128 {
        if b == 0 {
            a
        } else {
            a % b
        }
    }

    fn abs(v: u128, w: u32) -> u128 {
        if msb(v, w) {
            neg(v, w)
        } else {
            v
        }
    }

    pub fn un(op: BvUnOp, a: u128, w: u32) -> u128 {
        match op {
            BvUnOp::Neg => neg(a, w),
            BvUnOp::Not => !a & mask(w),
        }
    }

    pub fn bin(op: BvBinOp, a: u128, b: u128, w: u32) -> u128 {
        let m = mask(w);
        let shift_ok = b < u128::from(w);
        let r = match op {
            BvBinOp::Add => a.wrapping_add(b),
            BvBinOp::Sub => a.wrapping_sub(b),
            BvBinOp::Mul => a.wrapping_mul(b),
            BvBinOp::Udiv => udiv(a, b, w),
            BvBinOp::Urem => urem(a, b),
            BvBinOp::Sdiv => {
                let q = udiv(abs(a, w), abs(b, w), w);
                if msb(a, w) != msb(b, w) {
                    neg(q, w)
                } else {
                    q
                }
            }
            BvBinOp::Srem => {
                let r = urem(abs(a, w), abs(b, w));
                if msb(a, w) {
                    neg(r, w)
                } else {
                    r
                }
            }
            BvBinOp::And => a & b,
            BvBinOp::Or => a | b,
            BvBinOp::Xor => a ^ b,
            BvBinOp::Shl => {
                if shift_ok {
                    a << b
                } else {
                    0
                }
            }
            BvBinOp::Lshr => {
                if shift_ok {
                    a >> b
                } else {
                    0
                }
            }
            BvBinOp::Ashr => {
                let s = if shift_ok { b as u32 } else { w - 1 };
                let shifted = a >> s;
                if msb(a, w) && s > 0 {
                    shifted | (m & !(m >> s))
                } else {
                    shifted
                }
            }
        };
        r & m
    }

    pub fn cmp(op: CmpOp, a: u128, b: u128, w: u32) -> bool {
        match op {
            CmpOp::Eq => a == b,
            CmpOp::Ult => a < b,
            CmpOp::Ule => a <= b,
            CmpOp::Slt => to_signed(a, w) < to_signed(b, w),
            CmpOp::Sle => to_signed(a, w) <= to_signed(b, w),
        }
    }

    pub fn extract(v: u128, hi: u32, lo: u32) -> u128 {
        (v >> lo) & mask(hi - lo + 1)
    }

    pub fn sext(v: u128, from: u32, by: u32) -> u128 {
        (to_signed(v, from) as u128) & mask(from + by)
    }
}

pub fn tt() -> T {
    Arc::new(Term::Bool(true))
}

pub fn ff() -> T {
    Arc::new(Term::Bool(false))
}

pub fn boolean(b: bool) -> T {
    Arc::new(Term::Bool(b))
}

pub fn lit(value: u128, width: u32) -> T {
    assert!((1..=128).contains(&width), "bit-vector width {width} out of range");
    Arc::new(Term::Bv {
        value: value & bv::mask(width),
        width,
    })
}

pub fn var(name: impl Into<String>, width: u32) -> T {
    Arc::new(Term::Var {
        name: name.into(),
        width,
    })
}

pub fn uf(name: impl Into<String>, args: Vec<T>, width: u32) -> T {
    Arc::new(Term::Uf {
        name: name.into(),
        args,
        width,
    })
}

pub fn not(a: T) -> T {
    match &*a {
        Term::Bool(b) => boolean(!b),
        Term::Not(inner) => inner.clone(),
        _ => Arc::new(Term::Not(a)),
    }
}

pub fn and(items: Vec<T>) -> T {
    let mut out = Vec::with_capacity(items.len());
    for t in items {
        match &*t {
            Term::Bool(true) => {}
            Term::Bool(false) => return ff(),
            Term::And(inner) => out.extend(inner.iter().cloned()),
            _ => out.push(t),
        }
    }
    match out.len() {
        0 => tt(),
        1 => out.pop().expect("one item"),
        _ => Arc::new(Term::And(out)),
    }
}

pub fn or(items: Vec<T>) -> T {
    let mut out = Vec::with_capacity(items.len());
    for t in items {
        match &*t {
            Term::Bool(false) => {}
            Term::Bool(true) => return tt(),
            Term::Or(inner) => out.extend(inner.iter().cloned()),
            _ => out.push(t),
        }
    }
    match out.len() {
        0 => ff(),
        1 => out.pop().expect("one item"),
        _ => Arc::new(Term::Or(out)),
    }
}

pub fn cmp(op: CmpOp, lhs: T, rhs: T) -> T {
    assert_eq!(lhs.width(), rhs.width(), "comparison operands differ in width");
    if let (Some(a), Some(b)) = (lhs.as_bv(), rhs.as_bv()) {
        return boolean(bv::cmp(op, a, b, lhs.width()));
    }
    if Arc::ptr_eq(&lhs, &rhs) || lhs == rhs {
        return boolean(matches!(op, CmpOp::Eq | CmpOp::Ule | CmpOp::Sle));
    }
    Arc::new(Term::Cmp { op, lhs, rhs })
}

pub fn eq(lhs: T, rhs: T) -> T {
    if lhs.is_bool() {
        // Boolean equivalence.
        return or(vec![and(vec![lhs.clone(), rhs.clone()]), and(vec![not(lhs), not(rhs)])]);
    }
    cmp(CmpOp::Eq, lhs, rhs)
}

pub fn ite(cond: T, then: T, els: T) -> T {
    assert_eq!(then.width(), els.width(), "ite branches differ in width");
    match cond.as_bool() {
        Some(true) => then,
        Some(false) => els,
        None if then == els => then,
        None => Arc::new(Term::Ite { cond, then, els }),
    }
}

pub fn un(op: BvUnOp, arg: T) -> T {
    if let Some(a) = arg.as_bv() {
        return lit(bv::un(op, a, arg.width()), arg.width());
    }
    Arc::new(Term::Un { op, arg })
}

pub fn bin(op: BvBinOp, lhs: T, rhs: T) -> T {
    assert_eq!(lhs.width(), rhs.width(), "operands differ in width");
    let w = lhs.width();
    if let (Some(a), Some(b)) = (lhs.as_bv(), rhs.as_bv()) {
        return lit(bv::bin(op, a, b, w), w);
    }
    Arc::new(Term::Bin { op, lhs, rhs })
}

pub fn extract(hi: u32, lo: u32, arg: T) -> T {
    assert!(
        hi >= lo && hi < arg.width(),
        "bad extract [{hi}:{lo}] of width {}",
        arg.width()
    );
    if lo == 0 && hi + 1 == arg.width() {
        return arg;
    }
    if let Some(a) = arg.as_bv() {
        return lit(bv::extract(a, hi, lo), hi - lo + 1);
    }
    Arc::new(Term::Extract { hi, lo, arg })
}

pub fn concat(hi: T, lo: T) -> T {
    if let (Some(a), Some(b)) = (hi.as_bv(), lo.as_bv()) {
        let w = hi.width() + lo.width();
        return lit((a << lo.width()) | b, w);
    }
    Arc::new(Term::Concat { hi, lo })
}

pub fn zext(by: u32, arg: T) -> T {
    if by == 0 {
        return arg;
    }
    if let Some(a) = arg.as_bv() {
        return lit(a, arg.width() + by);
    }
    Arc::new(Term::ZeroExt { by, arg })
}

pub fn sext(by: u32, arg: T) -> T {
    if by == 0 {
        return arg;
    }
    if let Some(a) = arg.as_bv() {
        return lit(bv::sext(a, arg.width(), by), arg.width() + by);
    }
    Arc::new(Term::SignExt { by, arg })
}

/// Change width to `to`, truncating or extending (signed or not).
pub fn resize(arg: T, to: u32, signed: bool) -> T {
    let w = arg.width();
    if to < w {
        extract(to - 1, 0, arg)
    } else if signed {
        sext(to - w, arg)
    } else {
        zext(to - w, arg)
    }
}

/// Reverse the byte order. Width must be a multiple of 8.
pub fn bswap(arg: T) -> T {
    let w = arg.width();
    assert!(w.is_multiple_of(8) && w > 0, "bswap needs a whole number of bytes");
    let mut acc = extract(7, 0, arg.clone());
    for i in 1..w / 8 {
        acc = concat(acc, extract(8 * i + 7, 8 * i, arg.clone()));
    }
    acc
}

/// Boolean `t != 0` for bit-vectors; booleans are returned unchanged.
pub fn truthy(t: T) -> T {
    if t.is_bool() {
        return t;
    }
    let w = t.width();
    not(cmp(CmpOp::Eq, t, lit(0, w)))
}

/// `ite(b, 1, 0)` at `width` bits.
pub fn bool_to_bv(b: T, width: u32) -> T {
    if !b.is_bool() {
        return b;
    }
    ite(b, lit(1, width), lit(0, width))
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Bool(b) => write!(f, "{b}"),
            Term::Bv { value, width } => write!(f, "{value:#x}:{width}"),
            Term::Var { name, .. } => f.write_str(name),
            Term::Uf { name, args, .. } => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Term::Not(a) => write!(f, "(not {a})"),
            Term::And(xs) | Term::Or(xs) => {
                f.write_str(if matches!(self, Term::And(_)) { "(and" } else { "(or" })?;
                for x in xs {
                    write!(f, " {x}")?;
                }
                f.write_str(")")
            }
            Term::Cmp { op, lhs, rhs } => write!(f, "({op:?} {lhs} {rhs})"),
            Term::Ite { cond, then, els } => write!(f, "(ite {cond} {then} {els})"),
            Term::Un { op, arg } => write!(f, "({op:?} {arg})"),
            Term::Bin { op, lhs, rhs } => write!(f, "({op:?} {lhs} {rhs})"),
            Term::Extract { hi, lo, arg } => write!(f, "({arg})[{hi}:{lo}]"),
            Term::Concat { hi, lo } => write!(f, "(concat {hi} {lo})"),
            Term::ZeroExt { by, arg } => write!(f, "(zext{by} {arg})"),
            Term::SignExt { by, arg } => write!(f, "(sext{by} {arg})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bswap_concrete() {
        assert_eq!(bswap(lit(0x1234, 16)).as_bv(), Some(0x3412));
        assert_eq!(bswap(lit(0x1122_3344, 32)).as_bv(), Some(0x4433_2211));
        assert_eq!(bswap(lit(0xab, 8)).as_bv(), Some(0xab));
    }

    #[test]
    fn folding_identities() {
        let x = var("x", 8);
        assert_eq!(cmp(CmpOp::Eq, x.clone(), x.clone()).as_bool(), Some(true));
        assert_eq!(and(vec![tt(), truthy(x.clone())]).width(), 0);
        assert_eq!(not(not(truthy(x.clone()))), truthy(x));
        assert_eq!(resize(lit(0xff, 8), 16, true).as_bv(), Some(0xffff));
        assert_eq!(resize(lit(0xff, 8), 16, false).as_bv(), Some(0xff));
        assert_eq!(resize(lit(0x1ff, 16), 8, false).as_bv(), Some(0xff));
    }

    #[test]
    fn smtlib_division_semantics() {
        use bv::bin;
        assert_eq!(bin(BvBinOp::Udiv, 7, 0, 8), 0xff);
        assert_eq!(bin(BvBinOp::Urem, 7, 0, 8), 7);
        // -7 / 2 = -3, -7 % 2 = -1
        assert_eq!(bin(BvBinOp::Sdiv, 0xf9, 2, 8), 0xfd);
        assert_eq!(bin(BvBinOp::Srem, 0xf9, 2, 8), 0xff);
        // 7 % -2 = 1
        assert_eq!(bin(BvBinOp::Srem, 7, 0xfe, 8), 1);
        assert_eq!(bin(BvBinOp::Sdiv, 0xf9, 0, 8), 1);
        assert_eq!(bin(BvBinOp::Sdiv, 7, 0, 8), 0xff);
        assert_eq!(bin(BvBinOp::Ashr, 0x80, 3, 8), 0xf0);
        assert_eq!(bin(BvBinOp::Ashr, 0x80, 9, 8), 0xff);
        assert_eq!(bin(BvBinOp::Shl, 1, 8, 8), 0);
        assert_eq!(bin(BvBinOp::Mul, u128::MAX, 2, 128), u128::MAX - 1);
    }
}
