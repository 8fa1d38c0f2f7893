#![allow(dead_code)]

pub mod gen;
pub mod interp;

use std::path::{Path, PathBuf};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture(rel: &str) -> String {
    std::fs::read_to_string(fixtures().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

/// Copy a fixture directory tree into `dest`.
pub fn copy_tree(src: &Path, dest: &Path) {
    std::fs::create_dir_all(dest).unwrap();
    for entry in std::fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let to = dest.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &to);
        } else {
            std::fs::copy(entry.path(), &to).unwrap();
        }
    }
}

/// Verify a generated case and compare with enumeration. `Ok(true)` means
/// both found a violation and the counterexample reproduces it.
pub fn oracle_check(case: &gen::OracleCase, opts: &bpfsynth::symexec::VerifyOptions) -> Result<bool, String> {
    use bpfsynth::btparse::{parse, render};
    use bpfsynth::symexec::{verify, Verdict};

    let text = render(&case.program);
    let program = parse(&text).map_err(|e| format!("{e}\n{text}"))?;
    let verdict = verify(&program, &case.types, opts).map_err(|e| format!("{e}\n{text}"))?;
    let witness = interp::find_failure(&program, &case.symbols);
    match (&verdict, witness) {
        (Verdict::Verified, None) => Ok(false),
        (
            Verdict::AssertViolation {
                location,
                counterexample,
                ..
            },
            Some(_),
        ) => {
            let mut inputs = interp::zero_inputs(&case.symbols);
            for (name, width, signed) in &case.symbols {
                let v = counterexample.var(name).unwrap_or(0) as u64;
                inputs.insert(name.clone(), interp::CVal::new(v, *width, *signed));
            }
            let run = interp::run(&program, &inputs);
            if run.failures.contains(&location.line) {
                Ok(true)
            } else {
                Err(format!(
                    "counterexample {:?} does not fail line {}: {run:?}\n{text}",
                    counterexample.describe(),
                    location.line
                ))
            }
        }
        (v, w) => Err(format!("executor says {v}, enumeration found {w:?}\n{text}")),
    }
}
