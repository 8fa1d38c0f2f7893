mod common;

use std::time::Instant;

use bpfsynth::btparse::parse;
use bpfsynth::symexec::{verify, FieldType, KernelTypeMap, SolverBackend, Verdict, VerifyOptions};
use common::gen;
use proptest::prelude::*;

struct Tally {
    verified: usize,
    violated: usize,
}

fn check_case(case: &gen::OracleCase, opts: &VerifyOptions) -> bool {
    common::oracle_check(case, opts).unwrap_or_else(|e| panic!("{e}"))
}

fn run_corpus(seed: u64, count: usize, opts: &VerifyOptions) -> Tally {
    let mut rng = gen::rng(seed);
    let mut t = Tally {
        verified: 0,
        violated: 0,
    };
    for _ in 0..count {
        let case = gen::oracle_program(&mut rng);
        if check_case(&case, opts) {
            t.violated += 1;
        } else {
            t.verified += 1;
        }
    }
    t
}

#[test]
fn verdicts_match_enumeration() {
    let start = Instant::now();
    let t = run_corpus(0x0a11_ce02, 220, &VerifyOptions::default());
    let secs = start.elapsed().as_secs_f64();
    eprintln!("{} verified, {} violated in {secs:.1}s", t.verified, t.violated);
    assert!(t.verified >= 20 && t.violated >= 20);
    assert!(secs < 120.0);
}

#[test]
fn enumerating_backend_agrees() {
    let opts = VerifyOptions {
        backend: SolverBackend::Enumerate,
        ..VerifyOptions::default()
    };
    let mut rng = gen::rng(0x0a11_ce03);
    let mut n = 0;
    while n < 30 {
        let case = gen::oracle_program(&mut rng);
        if case.symbols.len() == 1 {
            check_case(&case, &opts);
            n += 1;
        }
    }
}

/// Cross-check against an external SMT solver. Runs only when
/// `BPFSYNTH_Z3` is set and z3 is on the PATH.
#[test]
fn external_solver_agrees() {
    if std::env::var_os("BPFSYNTH_Z3").is_none() {
        return;
    }
    if std::process::Command::new("z3").arg("-version").output().is_err() {
        eprintln!("z3 not found, skipping");
        return;
    }
    let opts = VerifyOptions {
        backend: SolverBackend::External {
            command: vec!["z3".into(), "-in".into()],
        },
        ..VerifyOptions::default()
    };
    run_corpus(0x0a11_ce04, 40, &opts);
}

fn uint_type(width: u32) -> &'static str {
    match width {
        16 => "uint16",
        32 => "uint32",
        _ => "uint64",
    }
}

fn swap(v: u64, width: u32) -> u64 {
    match width {
        16 => (v as u16).swap_bytes() as u64,
        32 => (v as u32).swap_bytes() as u64,
        _ => v.swap_bytes(),
    }
}

fn verify_src(src: &str, types: &KernelTypeMap) -> Verdict {
    verify(&parse(src).unwrap(), types, &VerifyOptions::default()).unwrap()
}

#[test]
fn bswap_concrete_value() {
    let v = verify_src(
        "kprobe:f {\n    assert(bswap((uint16) 4660) == 13330);\n}\n",
        &KernelTypeMap::empty(),
    );
    assert!(v.is_verified(), "{v}");
    assert_eq!(swap(0x1234, 16), 0x3412);
}

#[test]
fn bswap_is_an_involution() {
    let mut types = KernelTypeMap::empty();
    for w in [16, 32, 64] {
        types.insert(format!("x{w}"), FieldType::unsigned(w)).unwrap();
        let src = format!("tracepoint:t:e {{\n    assert(bswap(bswap(args.x{w})) == args.x{w});\n}}\n");
        let v = verify_src(&src, &types);
        assert!(v.is_verified(), "width {w}: {v}");
        let src = format!("tracepoint:t:e {{\n    assert(bswap(args.x{w}) == args.x{w});\n}}\n");
        match verify_src(&src, &types) {
            Verdict::AssertViolation { counterexample, .. } => {
                let x = counterexample.var(&format!("args.x{w}")).unwrap_or(0) as u64;
                assert_ne!(swap(x, w), x);
            }
            other => panic!("width {w}: {other}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bswap_matches_swap_bytes(v in any::<u64>(), wi in 0usize..3) {
        let w = [16, 32, 64][wi];
        let ty = uint_type(w);
        let lit = v & if w == 64 { u64::MAX } else { (1u64 << w) - 1 };
        let good = format!("kprobe:f {{\n    assert(bswap(({ty}) {lit}) == {});\n}}\n", swap(lit, w));
        prop_assert!(verify_src(&good, &KernelTypeMap::empty()).is_verified());
        let bad = format!("kprobe:f {{\n    assert(bswap(({ty}) {lit}) == {});\n}}\n", swap(lit, w) ^ 1);
        let is_violation = matches!(verify_src(&bad, &KernelTypeMap::empty()), Verdict::AssertViolation { .. });
        prop_assert!(is_violation);
    }

    #[test]
    fn generated_verdicts_match_enumeration(seed in any::<u64>()) {
        let case = gen::oracle_program(&mut gen::rng(seed));
        if case.symbols.len() < 3 {
            check_case(&case, &VerifyOptions::default());
        }
    }
}
