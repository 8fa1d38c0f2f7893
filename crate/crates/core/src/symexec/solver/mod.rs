//! Decision procedures for validity queries over bit-vector terms.

mod bitblast;
mod enumerate;
mod external;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use super::model::Model;
use super::term::T;

pub use enumerate::ENUMERATION_LIMIT_BITS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SatResult {
    /// A model of `constraints ∧ ¬goal`.
    Sat(Model),
    Unsat,
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct SolverError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SolverBackend {
    /// In-process CNF encoding decided by a CDCL SAT solver.
    #[default]
    BitBlast,
    /// Exhaustive search over every assignment. Only for small formulas
    /// without function applications.
    Enumerate,
    /// An SMT-LIB 2 solver process reading the query on stdin, for
    /// example `z3 -in`.
    External { command: Vec<String> },
}

impl SolverBackend {
    /// Search for an assignment satisfying every constraint but falsifying
    /// `goal`.
    pub fn check(&self, constraints: &[T], goal: &T, timeout: Duration) -> Result<SatResult, SolverError> {
        match self {
            SolverBackend::BitBlast => bitblast::check(constraints, goal),
            SolverBackend::Enumerate => enumerate::check(constraints, goal),
            SolverBackend::External { command } => external::check(command, constraints, goal, timeout),
        }
    }

    pub fn name(&self) -> String {
        match self {
            SolverBackend::BitBlast => "bitblast".into(),
            SolverBackend::Enumerate => "enumerate".into(),
            SolverBackend::External { command } => format!("external:{}", command.join(" ")),
        }
    }
}

impl fmt::Display for SolverBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for SolverBackend {
    type Err = String;

    /// `bitblast`, `enumerate`, or `external:<command line>`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bitblast" => Ok(SolverBackend::BitBlast),
            "enumerate" => Ok(SolverBackend::Enumerate),
            _ => match s.strip_prefix("external:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(SolverBackend::External {
                    command: cmd.split_whitespace().map(str::to_string).collect(),
                }),
                _ => Err(format!(
                    "unknown solver backend `{s}` (expected bitblast, enumerate or external:<command>)"
                )),
            },
        }
    }
}
