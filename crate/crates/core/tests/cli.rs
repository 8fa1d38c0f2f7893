mod common;

use std::path::Path;
use std::process::{Command, Output};

fn bpfsynth(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpfsynth"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn copy_fixtures(subdirs: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for sub in subdirs {
        common::copy_tree(&common::fixtures().join(sub), &dir.path().join(sub));
    }
    dir
}

#[test]
fn case_study_replays_to_success_on_the_second_trial() {
    let dir = copy_fixtures(&["case_study"]);
    let cs = dir.path().join("case_study");
    let prompt = std::fs::read_to_string(cs.join("prompt.txt")).unwrap();
    let out = bpfsynth(&cs, &["--config", "bpfsynth.toml", "synthesize", prompt.trim()]);
    let err = text(&out.stderr);
    assert_eq!(out.status.code(), Some(0), "{err}");
    assert!(err.contains("trial 1 rejected (symexec)"), "{err}");
    assert!(err.contains("line 15"), "{err}");
    assert!(!err.contains("trial 2 rejected"), "{err}");
    let program = text(&out.stdout);
    assert!(program.contains("bswap($sk->__sk_common.skc_dport)"), "{program}");
    assert!(!program.contains("assert("));
    let list = bpfsynth(&cs, &["--config", "bpfsynth.toml", "examples", "list"]);
    assert_eq!(text(&list.stdout).lines().count(), 6);
}

#[test]
fn exhausted_trials_exit_with_the_synthesis_code() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    std::fs::write(&script, r#"["no program", "still none", "sorry"]"#).unwrap();
    let out = bpfsynth(
        dir.path(),
        &[
            "--script",
            "script.json",
            "--direct-annotate",
            "synthesize",
            "trace reads",
        ],
    );
    let err = text(&out.stderr);
    assert_eq!(out.status.code(), Some(2), "{err}");
    for i in 1..=3 {
        assert!(err.contains(&format!("trial {i} rejected (parse)")), "{err}");
    }
    assert!(out.stdout.is_empty());
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bpfsynth(dir.path(), &["--config", "nope.toml", "verify", "x.bt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).starts_with("bpfsynth: "));
}

#[test]
fn verify_exit_codes_follow_the_verdict() {
    let fx = common::fixtures();
    let out = bpfsynth(&fx, &["verify", "programs/tcp_connect_v1_annotated.bt"]);
    assert_eq!(out.status.code(), Some(4), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("line 15"));

    let out = bpfsynth(&fx, &["verify", "programs/tcp_connect_v2_annotated.bt"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));

    let out = bpfsynth(
        &fx,
        &[
            "--contracts",
            "contracts/tcp_connect_init.json",
            "verify",
            "--show-annotated",
            "programs/tcp_connect_v2.bt",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));

    let out = bpfsynth(&fx, &["verify", "examples/programs/read_bytes.bt"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
}

#[test]
fn check_rejects_kernel_writes() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.bt"),
        "kprobe:vfs_read {\n    $f = (struct file *) arg0;\n    $f->f_pos = 0;\n}\n",
    )
    .unwrap();
    let out = bpfsynth(dir.path(), &["check", "bad.bt"]);
    assert_eq!(out.status.code(), Some(4));
    let kill = common::fixtures().join("programs/kill_trace.bt");
    let out = bpfsynth(dir.path(), &["check", kill.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stdout));
    assert!(text(&out.stdout).ends_with("ok\n"));
}

#[test]
fn build_contracts_skips_malformed_replies() {
    let fx = common::fixtures();
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("contracts.json");
    let out = bpfsynth(
        &fx,
        &[
            "--script",
            "corpus_script.json",
            "build-contracts",
            "corpus",
            out_path.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let store = bpfsynth::contracts::ContractStore::load(&out_path).unwrap();
    assert_eq!(store.len(), 3);
    assert!(store.entries.contains_key("kprobe:tcp_connect_init"));
}

#[test]
fn probes_lists_prefix_matches() {
    let fx = common::fixtures();
    let out = bpfsynth(
        &fx,
        &[
            "--contracts",
            "contracts/tcp_connect_init.json",
            "probes",
            "programs/tcp_connect_v1.bt",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(text(&out.stdout), "kprobe:tcp_connect\tkretprobe:tcp_connect_init\n");
}

#[test]
fn eval_reports_are_reproducible() {
    let dir = copy_fixtures(&["eval", "contracts"]);
    let ev = dir.path().join("eval");
    let run = |report: &str| {
        let out = bpfsynth(
            &ev,
            &[
                "--config",
                "bpfsynth.toml",
                "eval",
                "pipeline.jsonl",
                "--report",
                report,
            ],
        );
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        let table = text(&out.stderr);
        assert!(
            table.contains("accuracy 0.800 (32/40), fp 0.025 (1/40), fn 0.175 (7/40)"),
            "{table}"
        );
        std::fs::read(ev.join(report)).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
    let out = bpfsynth(&ev, &["--config", "bpfsynth.toml", "eval", "baseline.jsonl"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["metrics"]["accuracy"], 0.3);
    assert_eq!(report["metrics"]["fn"], 0.675);
}

#[test]
fn example_store_commands() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.jsonl");
    std::fs::copy(common::fixtures().join("examples/seed.jsonl"), &store).unwrap();
    let args = |rest: &[&str]| {
        let mut v = vec!["--examples", "store.jsonl", "examples"];
        v.extend_from_slice(rest);
        bpfsynth(dir.path(), &v)
    };
    assert_eq!(text(&args(&["list"]).stdout).lines().count(), 5);
    let q = text(&args(&["query", "trace kill signals"]).stdout);
    assert!(q.lines().next().unwrap().contains("Trace kill signals"), "{q}");
    let prog = common::fixtures().join("examples/programs/read_bytes.bt");
    assert_eq!(args(&["freeze"]).status.code(), Some(0));
    let added = args(&["add", "--prompt", "bytes read", prog.to_str().unwrap()]);
    assert_ne!(added.status.code(), Some(0));
    args(&["unfreeze"]);
    let added = args(&["add", "--prompt", "bytes read", prog.to_str().unwrap()]);
    assert_eq!(added.status.code(), Some(0), "{}", text(&added.stderr));
    assert_eq!(text(&args(&["list"]).stdout).lines().count(), 6);
    assert_eq!(args(&["clear"]).status.code(), Some(0));
    assert_eq!(text(&args(&["list"]).stdout).lines().count(), 0);
}
