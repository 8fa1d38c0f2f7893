//! Bit-blasting decision procedure: terms are lowered to CNF via Tseitin
//! gates with constant folding, uninterpreted functions are eliminated by
//! Ackermann constraints, and the result is handed to a CDCL SAT solver.

use std::collections::HashMap;
use std::sync::Arc;

use varisat::{ExtendFormula, Lit, Solver};

use super::{SatResult, SolverError};
use crate::symexec::model::{Model, ModelValue, UfEntry};
use crate::symexec::term::{BvBinOp, BvUnOp, CmpOp, Term, T};

type Bits = Vec<Lit>;

struct UfApp {
    name: String,
    args: Vec<Bits>,
    out: Bits,
}

struct Blaster {
    sat: Solver<'static>,
    tru: Lit,
    cache: HashMap<*const Term, Bits>,
    vars: HashMap<String, Bits>,
    var_order: Vec<String>,
    ufs: Vec<UfApp>,
    gates: HashMap<(u8, usize, usize), Lit>,
}

pub fn check(constraints: &[T], goal: &T) -> Result<SatResult, SolverError> {
    let mut b = Blaster::new();
    for c in constraints {
        let l = b.boolean(c)?;
        b.sat.add_clause(&[l]);
    }
    let g = b.boolean(goal)?;
    b.sat.add_clause(&[!g]);
    let sat = b
        .sat
        .solve()
        .map_err(|e| SolverError(format!("SAT solver failed: {e}")))?;
    if !sat {
        return Ok(SatResult::Unsat);
    }
    let assignment = b
        .sat
        .model()
        .ok_or_else(|| SolverError("SAT solver returned no model".into()))?;
    Ok(SatResult::Sat(b.model(&assignment)))
}

impl Blaster {
    fn new() -> Self {
        let mut sat = Solver::new();
        let tru = sat.new_lit();
        sat.add_clause(&[tru]);
        Blaster {
            sat,
            tru,
            cache: HashMap::new(),
            vars: HashMap::new(),
            var_order: Vec::new(),
            ufs: Vec::new(),
            gates: HashMap::new(),
        }
    }

    fn model(&self, assignment: &[Lit]) -> Model {
        let mut truth = vec![false; self.sat_var_count(assignment)];
        for l in assignment {
            truth[l.index()] = l.is_positive();
        }
        let value = |bits: &Bits| -> u128 {
            bits.iter().enumerate().fold(0u128, |acc, (i, l)| {
                let v = truth.get(l.index()).copied().unwrap_or(false) == l.is_positive();
                acc | (u128::from(v) << i)
            })
        };
        let mut m = Model::default();
        for name in &self.var_order {
            let bits = &self.vars[name];
            m.vars.insert(
                name.clone(),
                ModelValue {
                    value: value(bits),
                    width: bits.len() as u32,
                },
            );
        }
        for app in &self.ufs {
            let args: Vec<u128> = app.args.iter().map(&value).collect();
            let v = value(&app.out);
            if m.uf(&app.name, &args).is_none() {
                m.ufs.push(UfEntry {
                    name: app.name.clone(),
                    args,
                    value: v,
                });
            }
        }
        m
    }

    fn sat_var_count(&self, assignment: &[Lit]) -> usize {
        assignment.iter().map(|l| l.index() + 1).max().unwrap_or(0)
    }

    fn fls(&self) -> Lit {
        !self.tru
    }

    fn konst(&self, b: bool) -> Lit {
        if b {
            self.tru
        } else {
            !self.tru
        }
    }

    fn fresh(&mut self) -> Lit {
        self.sat.new_lit()
    }

    fn and2(&mut self, a: Lit, b: Lit) -> Lit {
        let (t, f) = (self.tru, self.fls());
        if a == f || b == f || a == !b {
            return f;
        }
        if a == t || a == b {
            return b;
        }
        if b == t {
            return a;
        }
        let key = (0, a.code().min(b.code()), a.code().max(b.code()));
        if let Some(x) = self.gates.get(&key) {
            return *x;
        }
        let x = self.fresh();
        self.sat.add_clause(&[!x, a]);
        self.sat.add_clause(&[!x, b]);
        self.sat.add_clause(&[x, !a, !b]);
        self.gates.insert(key, x);
        x
    }

    fn or2(&mut self, a: Lit, b: Lit) -> Lit {
        !self.and2(!a, !b)
    }

    fn xor2(&mut self, a: Lit, b: Lit) -> Lit {
        let (t, f) = (self.tru, self.fls());
        if a == f {
            return b;
        }
        if b == f {
            return a;
        }
        if a == t {
            return !b;
        }
        if b == t {
            return !a;
        }
        if a == b {
            return f;
        }
        if a == !b {
            return t;
        }
        // Normalize polarity so x^y and !x^!y share a gate.
        let flip = a.is_negative() != b.is_negative();
        let (pa, pb) = (
            if a.is_negative() { !a } else { a },
            if b.is_negative() { !b } else { b },
        );
        let key = (1, pa.code().min(pb.code()), pa.code().max(pb.code()));
        let x = if let Some(x) = self.gates.get(&key) {
            *x
        } else {
            let x = self.fresh();
            self.sat.add_clause(&[!x, pa, pb]);
            self.sat.add_clause(&[!x, !pa, !pb]);
            self.sat.add_clause(&[x, !pa, pb]);
            self.sat.add_clause(&[x, pa, !pb]);
            self.gates.insert(key, x);
            x
        };
        if flip {
            !x
        } else {
            x
        }
    }

    fn mux(&mut self, c: Lit, t: Lit, e: Lit) -> Lit {
        if c == self.tru || t == e {
            return t;
        }
        if c == self.fls() {
            return e;
        }
        if t == self.tru {
            return self.or2(c, e);
        }
        if t == self.fls() {
            return self.and2(!c, e);
        }
        if e == self.tru {
            return self.or2(!c, t);
        }
        if e == self.fls() {
            return self.and2(c, t);
        }
        let x = self.fresh();
        self.sat.add_clause(&[!c, !t, x]);
        self.sat.add_clause(&[!c, t, !x]);
        self.sat.add_clause(&[c, !e, x]);
        self.sat.add_clause(&[c, e, !x]);
        self.sat.add_clause(&[!t, !e, x]);
        self.sat.add_clause(&[t, e, !x]);
        x
    }

    fn and_all(&mut self, lits: &[Lit]) -> Lit {
        lits.iter().fold(self.tru, |acc, l| self.and2(acc, *l))
    }

    fn or_all(&mut self, lits: &[Lit]) -> Lit {
        lits.iter().fold(self.fls(), |acc, l| self.or2(acc, *l))
    }

    fn mux_bits(&mut self, c: Lit, t: &Bits, e: &Bits) -> Bits {
        t.iter().zip(e).map(|(a, b)| self.mux(c, *a, *b)).collect()
    }

    fn const_bits(&self, value: u128, width: u32) -> Bits {
        (0..width).map(|i| self.konst((value >> i) & 1 == 1)).collect()
    }

    /// Ripple-carry addition; returns the sum and the carry out.
    fn add(&mut self, a: &Bits, b: &Bits, carry_in: Lit) -> (Bits, Lit) {
        let mut carry = carry_in;
        let mut sum = Vec::with_capacity(a.len());
        for (x, y) in a.iter().zip(b) {
            let p = self.xor2(*x, *y);
            sum.push(self.xor2(p, carry));
            let g = self.and2(*x, *y);
            let pc = self.and2(p, carry);
            carry = self.or2(g, pc);
        }
        (sum, carry)
    }

    fn not_bits(&self, a: &Bits) -> Bits {
        a.iter().map(|l| !*l).collect()
    }

    /// `a - b` and whether `a >= b` unsigned.
    fn sub(&mut self, a: &Bits, b: &Bits) -> (Bits, Lit) {
        let nb = self.not_bits(b);
        self.add(a, &nb, self.tru)
    }

    fn neg(&mut self, a: &Bits) -> Bits {
        let zero = self.const_bits(0, a.len() as u32);
        self.sub(&zero, a).0
    }

    fn mul(&mut self, a: &Bits, b: &Bits) -> Bits {
        let w = a.len();
        let mut acc = self.const_bits(0, w as u32);
        for (i, bi) in b.iter().enumerate() {
            if *bi == self.fls() {
                continue;
            }
            let mut partial = vec![self.fls(); w];
            for j in 0..w - i {
                partial[i + j] = self.and2(a[j], *bi);
            }
            acc = self.add(&acc, &partial, self.fls()).0;
        }
        acc
    }

    /// Restoring division. A zero divisor yields all-ones quotient and the
    /// dividend as remainder, as in SMT-LIB.
    fn udivrem(&mut self, a: &Bits, b: &Bits) -> (Bits, Bits) {
        let w = a.len();
        let mut bx = b.clone();
        bx.push(self.fls());
        let mut rem = vec![self.fls(); w + 1];
        let mut q = vec![self.fls(); w];
        for i in (0..w).rev() {
            let mut shifted = Vec::with_capacity(w + 1);
            shifted.push(a[i]);
            shifted.extend_from_slice(&rem[..w]);
            let (diff, ge) = self.sub(&shifted, &bx);
            q[i] = ge;
            rem = self.mux_bits(ge, &diff, &shifted);
        }
        rem.truncate(w);
        (q, rem)
    }

    fn abs(&mut self, a: &Bits) -> Bits {
        let msb = *a.last().expect("non-empty");
        let n = self.neg(a);
        self.mux_bits(msb, &n, a)
    }

    fn ult(&mut self, a: &Bits, b: &Bits) -> Lit {
        !self.sub(a, b).1
    }

    fn slt(&mut self, a: &Bits, b: &Bits) -> Lit {
        let mut a2 = a.clone();
        let mut b2 = b.clone();
        let last = a.len() - 1;
        a2[last] = !a2[last];
        b2[last] = !b2[last];
        self.ult(&a2, &b2)
    }

    fn eq_bits(&mut self, a: &Bits, b: &Bits) -> Lit {
        let xs: Vec<Lit> = a.iter().zip(b).map(|(x, y)| !self.xor2(*x, *y)).collect();
        self.and_all(&xs)
    }

    fn shift(&mut self, op: BvBinOp, a: &Bits, s: &Bits) -> Bits {
        let w = a.len();
        let fill = match op {
            BvBinOp::Ashr => *a.last().expect("non-empty"),
            _ => self.fls(),
        };
        let mut stages = 0;
        while (1usize << stages) < w {
            stages += 1;
        }
        let mut cur = a.clone();
        for (k, sk) in s.iter().enumerate().take(stages) {
            let amount = 1usize << k;
            let shifted: Bits = (0..w)
                .map(|i| match op {
                    BvBinOp::Shl => {
                        if i >= amount {
                            cur[i - amount]
                        } else {
                            self.fls()
                        }
                    }
                    _ => {
                        if i + amount < w {
                            cur[i + amount]
                        } else {
                            fill
                        }
                    }
                })
                .collect();
            cur = self.mux_bits(*sk, &shifted, &cur);
        }
        // Amounts >= width shift everything out.
        let over = if s.len() < 128 && (w as u128) >= (1u128 << s.len()) {
            self.fls()
        } else {
            let wbits = self.const_bits(w as u128, s.len() as u32);
            !self.ult(s, &wbits)
        };
        let all_fill = vec![fill; w];
        self.mux_bits(over, &all_fill, &cur)
    }

    fn boolean(&mut self, t: &T) -> Result<Lit, SolverError> {
        let bits = self.blast(t)?;
        if bits.len() != 1 || !t.is_bool() {
            return Err(SolverError(format!("expected a boolean term, found {t}")));
        }
        Ok(bits[0])
    }

    fn blast(&mut self, t: &T) -> Result<Bits, SolverError> {
        let key = Arc::as_ptr(t);
        if let Some(b) = self.cache.get(&key) {
            return Ok(b.clone());
        }
        let bits: Bits = match &**t {
            Term::Bool(b) => vec![self.konst(*b)],
            Term::Bv { value, width } => self.const_bits(*value, *width),
            Term::Var { name, width } => {
                if let Some(b) = self.vars.get(name) {
                    if b.len() != *width as usize {
                        return Err(SolverError(format!(
                            "symbol `{name}` used at widths {} and {width}",
                            b.len()
                        )));
                    }
                    b.clone()
                } else {
                    let b: Bits = (0..*width).map(|_| self.fresh()).collect();
                    self.vars.insert(name.clone(), b.clone());
                    self.var_order.push(name.clone());
                    b
                }
            }
            Term::Uf { name, args, width } => {
                let arg_bits = args.iter().map(|a| self.blast(a)).collect::<Result<Vec<_>, _>>()?;
                let out: Bits = (0..*width).map(|_| self.fresh()).collect();
                let earlier: Vec<(Vec<Bits>, Bits)> = self
                    .ufs
                    .iter()
                    .filter(|u| u.name == *name && u.args.len() == arg_bits.len())
                    .map(|u| (u.args.clone(), u.out.clone()))
                    .collect();
                for (prev_args, prev_out) in earlier {
                    if prev_out.len() != out.len() || prev_args.iter().zip(&arg_bits).any(|(p, a)| p.len() != a.len()) {
                        return Err(SolverError(format!("function `{name}` used with inconsistent widths")));
                    }
                    let eqs: Vec<Lit> = prev_args
                        .iter()
                        .zip(&arg_bits)
                        .map(|(p, a)| self.eq_bits(p, a))
                        .collect();
                    let same = self.and_all(&eqs);
                    for (o1, o2) in prev_out.iter().zip(&out) {
                        self.sat.add_clause(&[!same, !*o1, *o2]);
                        self.sat.add_clause(&[!same, *o1, !*o2]);
                    }
                }
                self.ufs.push(UfApp {
                    name: name.clone(),
                    args: arg_bits,
                    out: out.clone(),
                });
                out
            }
            Term::Not(a) => vec![!self.boolean(a)?],
            Term::And(xs) | Term::Or(xs) => {
                let lits = xs.iter().map(|x| self.boolean(x)).collect::<Result<Vec<_>, _>>()?;
                if matches!(&**t, Term::And(_)) {
                    vec![self.and_all(&lits)]
                } else {
                    vec![self.or_all(&lits)]
                }
            }
            Term::Cmp { op, lhs, rhs } => {
                let (a, b) = (self.blast(lhs)?, self.blast(rhs)?);
                vec![match op {
                    CmpOp::Eq => self.eq_bits(&a, &b),
                    CmpOp::Ult => self.ult(&a, &b),
                    CmpOp::Ule => !self.ult(&b, &a),
                    CmpOp::Slt => self.slt(&a, &b),
                    CmpOp::Sle => !self.slt(&b, &a),
                }]
            }
            Term::Ite { cond, then, els } => {
                let c = self.boolean(cond)?;
                let (x, y) = (self.blast(then)?, self.blast(els)?);
                self.mux_bits(c, &x, &y)
            }
            Term::Un { op, arg } => {
                let a = self.blast(arg)?;
                match op {
                    BvUnOp::Neg => self.neg(&a),
                    BvUnOp::Not => self.not_bits(&a),
                }
            }
            Term::Bin { op, lhs, rhs } => {
                let (a, b) = (self.blast(lhs)?, self.blast(rhs)?);
                match op {
                    BvBinOp::Add => self.add(&a, &b, self.fls()).0,
                    BvBinOp::Sub => self.sub(&a, &b).0,
                    BvBinOp::Mul => self.mul(&a, &b),
                    BvBinOp::Udiv => self.udivrem(&a, &b).0,
                    BvBinOp::Urem => self.udivrem(&a, &b).1,
                    BvBinOp::Sdiv | BvBinOp::Srem => {
                        let sa = *a.last().expect("non-empty");
                        let sb = *b.last().expect("non-empty");
                        let (ua, ub) = (self.abs(&a), self.abs(&b));
                        let (q, r) = self.udivrem(&ua, &ub);
                        if *op == BvBinOp::Sdiv {
                            let nq = self.neg(&q);
                            let flip = self.xor2(sa, sb);
                            self.mux_bits(flip, &nq, &q)
                        } else {
                            let nr = self.neg(&r);
                            self.mux_bits(sa, &nr, &r)
                        }
                    }
                    BvBinOp::And => a.iter().zip(&b).map(|(x, y)| self.and2(*x, *y)).collect(),
                    BvBinOp::Or => a.iter().zip(&b).map(|(x, y)| self.or2(*x, *y)).collect(),
                    BvBinOp::Xor => a.iter().zip(&b).map(|(x, y)| self.xor2(*x, *y)).collect(),
                    BvBinOp::Shl | BvBinOp::Lshr | BvBinOp::Ashr => self.shift(*op, &a, &b),
                }
            }
            Term::Extract { hi, lo, arg } => {
                let a = self.blast(arg)?;
                a[*lo as usize..=*hi as usize].to_vec()
            }
            Term::Concat { hi, lo } => {
                let mut out = self.blast(lo)?;
                out.extend(self.blast(hi)?);
                out
            }
            Term::ZeroExt { by, arg } => {
                let mut a = self.blast(arg)?;
                a.extend(std::iter::repeat_n(self.fls(), *by as usize));
                a
            }
            Term::SignExt { by, arg } => {
                let mut a = self.blast(arg)?;
                let msb = *a.last().expect("non-empty");
                a.extend(std::iter::repeat_n(msb, *by as usize));
                a
            }
        };
        self.cache.insert(key, bits.clone());
        Ok(bits)
    }
}
