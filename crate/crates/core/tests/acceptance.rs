//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the terminal.

mod common;

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bpfsynth::btparse::{count_annotations, parse, render, strip_annotations, ProbeKind, ProbeSpec};
use bpfsynth::config::CliConfig;
use bpfsynth::contracts::ContractStore;
use bpfsynth::eval::{load_cases, run_eval, EvalReport};
use bpfsynth::example_store::{Embedder, ExampleStore};
use bpfsynth::llm::LlmBackend;
use bpfsynth::orchestrator::{run_session, AnnotationMode, SessionConfig, SessionStatus};
use bpfsynth::symexec::{verify, FieldType, KernelTypeMap, Verdict, VerifyOptions};
use common::gen;

const CASE_STUDY_LIMIT: Duration = Duration::from_secs(30);
const ORACLE_LIMIT: Duration = Duration::from_secs(120);
const ROUNDTRIP_LIMIT: Duration = Duration::from_secs(10);
const ORACLE_PROGRAMS: usize = 200;
const ROUNDTRIP_PROGRAMS: usize = 200;
/// Rates are compared after rounding to three decimals.
const RATE_TOLERANCE: f64 = 0.0005;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn temp_fixtures(subdirs: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for sub in subdirs {
        common::copy_tree(&common::fixtures().join(sub), &dir.path().join(sub));
    }
    dir
}

fn case_study() -> Outcome {
    let dir = temp_fixtures(&["case_study"]);
    let cs = dir.path().join("case_study");
    let cfg = CliConfig::load(&cs.join("bpfsynth.toml")).map_err(|e| e.to_string())?;
    let session = cfg.session().map_err(|e| e.to_string())?;
    let prompt = std::fs::read_to_string(cs.join("prompt.txt")).unwrap();
    let start = Instant::now();
    let r = run_session(prompt.trim(), &session).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(r.trial_count() == 2, || format!("{} trials", r.trial_count()))?;
    match &r.trials[0].verdict {
        Some(Verdict::AssertViolation {
            location, assertion, ..
        }) => ensure(
            location.line == 15 && assertion.contains("bswap") && assertion.contains("dport"),
            || format!("trial 1 failed `{assertion}` at line {}", location.line),
        )?,
        other => return Err(format!("trial 1 verdict {other:?}")),
    }
    ensure(r.trials[1].verdict == Some(Verdict::Verified), || {
        format!("trial 2 verdict {:?}", r.trials[1].verdict)
    })?;
    ensure(r.trials[1].safety.as_ref().is_some_and(|s| s.ok), || {
        "trial 2 not safe".into()
    })?;
    ensure(
        matches!(r.status, SessionStatus::Success { trial_count: 2, .. }),
        || "no success".into(),
    )?;
    ensure(elapsed < CASE_STUDY_LIMIT, || format!("{elapsed:?}"))?;
    Ok(format!(
        "violation at line 15, then verified and safe; 2 trials in {:.3}s",
        elapsed.as_secs_f64()
    ))
}

fn oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = gen::rng(0xacce_0002);
    let (mut verified, mut violated) = (0, 0);
    for i in 0..ORACLE_PROGRAMS {
        let case = gen::oracle_program(&mut rng);
        match common::oracle_check(&case, &VerifyOptions::default()) {
            Ok(true) => violated += 1,
            Ok(false) => verified += 1,
            Err(e) => return Err(format!("program {i}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < ORACLE_LIMIT, || format!("{elapsed:?}"))?;
    Ok(format!(
        "{ORACLE_PROGRAMS}/{ORACLE_PROGRAMS} agree ({verified} verified, {violated} violated, every counterexample reproduces) in {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn bswap() -> Outcome {
    let run = |src: &str, types: &KernelTypeMap| {
        verify(&parse(src).unwrap(), types, &VerifyOptions::default()).map_err(|e| e.to_string())
    };
    let concrete = run(
        "kprobe:f {\n    assert(bswap((uint16) 4660) == 13330);\n}\n",
        &KernelTypeMap::empty(),
    )?;
    ensure(concrete.is_verified(), || format!("bswap(0x1234): {concrete}"))?;
    let mut types = KernelTypeMap::empty();
    for w in [16, 32, 64] {
        types.insert(format!("x{w}"), FieldType::unsigned(w)).unwrap();
        let v = run(
            &format!("tracepoint:t:e {{\n    assert(bswap(bswap(args.x{w})) == args.x{w});\n}}\n"),
            &types,
        )?;
        ensure(v.is_verified(), || format!("width {w}: {v}"))?;
    }
    Ok("bswap(0x1234) = 0x3412; bswap(bswap(x)) == x proven at 16, 32 and 64 bits".into())
}

fn eval_report(dir: &Path, dataset: &str) -> Result<EvalReport, String> {
    let cfg = CliConfig::load(&dir.join("eval/bpfsynth.toml")).map_err(|e| e.to_string())?;
    let cases = load_cases(&dir.join("eval").join(dataset)).map_err(|e| e.to_string())?;
    run_eval(&cases, &cfg.session().map_err(|e| e.to_string())?, cfg.eval_options()).map_err(|e| e.to_string())
}

fn rates() -> Outcome {
    let dir = temp_fixtures(&["eval", "contracts"]);
    let mut lines = Vec::new();
    for (dataset, want) in [
        ("pipeline.jsonl", [0.800, 0.025, 0.175]),
        ("baseline.jsonl", [0.300, 0.025, 0.675]),
    ] {
        let m = eval_report(dir.path(), dataset)?.metrics;
        let got = [m.accuracy().value(), m.fp().value(), m.fn_rate().value()];
        ensure(m.errors == 0, || format!("{dataset}: {} errors", m.errors))?;
        for (g, w) in got.iter().zip(want) {
            ensure((g - w).abs() <= RATE_TOLERANCE, || {
                format!("{dataset}: got {got:?}, want {want:?}")
            })?;
        }
        lines.push(format!("{dataset} {}/{}/{}", m.accuracy(), m.fp(), m.fn_rate()));
    }
    Ok(lines.join(", "))
}

fn contracts() -> Outcome {
    let fragment = r#"{"kretprobe:tcp_connect_init": {"pre": {"sk": "!=null"}}}"#;
    let store = ContractStore::from_json_str(fragment).map_err(|e| e.to_string())?;
    let text = store.to_json_pretty();
    let back = ContractStore::from_json_str(&text).map_err(|e| e.to_string())?;
    ensure(back == store && back.to_json_pretty() == text, || {
        "round-trip changed the store".into()
    })?;
    let mut with_more = store.clone();
    with_more.insert(bpfsynth::contracts::Contract::new("kprobe:vfs_read"));
    with_more.insert(bpfsynth::contracts::Contract::new("kprobe:tcp_sendmsg"));
    let keys: Vec<String> = with_more.to_value().as_object().unwrap().keys().cloned().collect();
    let mut sorted = keys.clone();
    sorted.sort();
    ensure(keys == sorted, || format!("keys not sorted: {keys:?}"))?;
    let hits: Vec<&str> = with_more
        .lookup(&ProbeSpec::new(ProbeKind::Kprobe, "tcp_connect"))
        .iter()
        .map(|c| c.probe_key.as_str())
        .collect();
    ensure(hits == ["kretprobe:tcp_connect_init"], || {
        format!("lookup gave {hits:?}")
    })?;
    Ok("fragment round-trips with sorted keys; kprobe:tcp_connect finds kretprobe:tcp_connect_init".into())
}

fn parser() -> Outcome {
    let start = Instant::now();
    let mut n = 0;
    for f in [
        "programs/tcp_connect_v1.bt",
        "programs/tcp_connect_v1_annotated.bt",
        "programs/tcp_connect_v2.bt",
        "programs/tcp_connect_v2_annotated.bt",
        "programs/kill_trace.bt",
    ] {
        let p = parse(&common::fixture(f)).map_err(|e| format!("{f}: {e}"))?;
        let back = parse(&render(&p)).map_err(|e| format!("{f} re-parse: {e}"))?;
        ensure(back == p, || format!("{f} changed after round-trip"))?;
        n += 1;
    }
    let mut rng = gen::rng(0xacce_0006);
    for i in 0..ROUNDTRIP_PROGRAMS {
        let p = gen::roundtrip_program(&mut rng);
        let text = render(&p);
        let back = parse(&text).map_err(|e| format!("generated {i}: {e}\n{text}"))?;
        ensure(back == p, || format!("generated {i} changed\n{text}"))?;
        let s = strip_annotations(&p);
        let mut before = 0;
        p.visit_stmts(&mut |_| before += 1);
        let mut after = 0;
        s.visit_stmts(&mut |_| after += 1);
        ensure(
            count_annotations(&s) == 0 && after + count_annotations(&p) == before,
            || format!("strip on generated {i}"),
        )?;
        n += 1;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < ROUNDTRIP_LIMIT, || format!("{elapsed:?}"))?;
    Ok(format!(
        "{n} programs round-trip and strip exactly; {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn feedback_order() -> Outcome {
    let script = vec![
        "```\nkprobe:vfs_read {\n    $x = 100 / arg2;\n}\n```".to_string(),
        "```\nkprobe:vfs_read {\n    $f = (struct file *) arg0;\n    $f->f_pos = 0;\n}\n```".to_string(),
        "```\nkprobe:vfs_read {\n    @reads[pid] = arg2;\n}\n```".to_string(),
    ];
    let mut cfg = SessionConfig::new(
        Arc::new(LlmBackend::scripted(script)),
        Arc::new(ContractStore::new()),
        Arc::new(ExampleStore::in_memory(Embedder::HashedBagOfTokens { dimension: 64 })),
    );
    cfg.annotation = AnnotationMode::Direct;
    let r = run_session("count bytes read per process", &cfg).map_err(|e| e.to_string())?;
    let h = r.history();
    ensure(h.len() == 2 && r.trials.len() == 3, || {
        format!("{} failures, {} trials", h.len(), r.trials.len())
    })?;
    let third = &r.trials[2].prompt;
    let (a, b) = (third.find(&h[0].message), third.find(&h[1].message));
    ensure(matches!((a, b), (Some(x), Some(y)) if x < y), || {
        format!("positions {a:?} {b:?}")
    })?;
    Ok("third prompt carries failure 1 before failure 2".into())
}

fn deterministic_eval() -> Outcome {
    let dir = temp_fixtures(&["eval", "contracts"]);
    let a = eval_report(dir.path(), "pipeline.jsonl")?.to_json();
    let b = eval_report(dir.path(), "pipeline.jsonl")?.to_json();
    ensure(a == b, || "reports differ".into())?;
    Ok(format!("two frozen-store runs give identical {}-byte reports", a.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("case study", case_study),
        ("symbolic execution vs enumeration", oracle),
        ("bswap", bswap),
        ("evaluation rates", rates),
        ("contract store", contracts),
        ("parser round-trip", parser),
        ("feedback order", feedback_order),
        ("deterministic evaluation", deterministic_eval),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
