use super::{SatResult, SolverError};
use crate::symexec::model::{Compiled, Model, ModelValue};
use crate::symexec::term::T;

/// Largest total number of input bits searched exhaustively.
pub const ENUMERATION_LIMIT_BITS: u32 = 24;

pub fn check(constraints: &[T], goal: &T) -> Result<SatResult, SolverError> {
    let mut roots = constraints.to_vec();
    roots.push(goal.clone());
    let compiled = Compiled::new(&roots).map_err(|e| SolverError(format!("cannot enumerate: {e}")))?;
    let total: u32 = compiled.inputs.iter().map(|(_, w)| *w).sum();
    if total > ENUMERATION_LIMIT_BITS {
        return Err(SolverError(format!(
            "cannot enumerate {total} input bits (limit {ENUMERATION_LIMIT_BITS})"
        )));
    }
    let (mut regs, mut out) = (Vec::new(), Vec::new());
    let mut inputs = vec![0u128; compiled.inputs.len()];
    for code in 0u64..(1u64 << total) {
        let mut rest = code;
        for (slot, (_, w)) in inputs.iter_mut().zip(&compiled.inputs) {
            *slot = u128::from(rest & ((1u64 << w) - 1));
            rest >>= w;
        }
        compiled.run(&inputs, &mut regs, &mut out);
        let (goal_val, cons) = out.split_last().expect("goal is a root");
        if *goal_val == 0 && cons.iter().all(|c| *c != 0) {
            let mut m = Model::default();
            for ((name, width), value) in compiled.inputs.iter().zip(&inputs) {
                m.vars.insert(
                    name.clone(),
                    ModelValue {
                        value: *value,
                        width: *width,
                    },
                );
            }
            return Ok(SatResult::Sat(m));
        }
    }
    Ok(SatResult::Unsat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexec::term::*;

    #[test]
    fn finds_the_first_counterexample() {
        let x = var("x", 8);
        let goal = cmp(CmpOp::Ult, x.clone(), lit(200, 8));
        match check(&[], &goal).unwrap() {
            SatResult::Sat(m) => assert_eq!(m.var("x"), Some(200)),
            other => panic!("{other:?}"),
        }
        let c = cmp(CmpOp::Ult, x.clone(), lit(10, 8));
        assert_eq!(check(&[c], &goal).unwrap(), SatResult::Unsat);
    }

    #[test]
    fn refuses_large_or_uninterpreted_inputs() {
        assert!(check(&[], &cmp(CmpOp::Eq, var("x", 32), lit(0, 32))).is_err());
        assert!(check(&[], &cmp(CmpOp::Eq, uf("f/0", vec![], 8), lit(0, 8))).is_err());
    }
}
