//! Symbolic execution of annotated programs over bit-vector terms.
//!
//! Each clause runs from a fresh state with every builtin and field read
//! symbolic. `assume` statements constrain the state, and each `assert` is
//! checked for all assignments satisfying the path and the assumptions.

mod exec;
pub mod model;
pub mod smtlib;
pub mod solver;
pub mod term;

pub use exec::{
    verify, verify_detailed, FieldType, KernelTypeMap, SymexecError, TypeMapError, Verdict, VerifyOptions,
    VerifyOutcome, DEFAULT_BUDGET, DEFAULT_FORK_CAP,
};
pub use model::{Model, ModelValue, UfEntry};
pub use smtlib::emit_smtlib;
pub use solver::{SatResult, SolverBackend, SolverError};
