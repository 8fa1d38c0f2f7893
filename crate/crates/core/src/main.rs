use std::io::{BufRead, IsTerminal, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::Utc;
use clap::{Args, Parser, Subcommand};

use bpfsynth::btparse::{count_annotations, extract_probes, parse, render, strip_annotations, Program};
use bpfsynth::comprehension::{annotate, direct_annotate};
use bpfsynth::config::{AnnotationKey, BackendKind, CliConfig, ConfigError, SafetyKey};
use bpfsynth::contracts::build_dataset;
use bpfsynth::eval::{load_cases, run_eval};
use bpfsynth::example_store::Outcome;
use bpfsynth::orchestrator::{run_session, SessionError, SessionStatus};
use bpfsynth::safety::{self, SafetyError, SafetyMode};
use bpfsynth::symexec::{verify, Verdict};

const EXIT_CONFIG: u8 = 1;
const EXIT_SYNTHESIS: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_VIOLATION: u8 = 4;
const EXIT_TIMEOUT: u8 = 5;

/// Synthesize, annotate, verify and safety-check bpftrace programs.
///
/// Exit status: 0 success, 1 configuration or input error, 2 synthesis
/// failed after every trial, 3 backend or I/O error, 4 assertion violation
/// or unsafe program, 5 verification timeout.
#[derive(Parser)]
#[command(name = "bpfsynth", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    over: Overrides,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Overrides {
    /// LLM backend: http, replay or scripted.
    #[arg(long, global = true, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    /// Answer LLM requests from recorded replies in DIR.
    #[arg(long, global = true, value_name = "DIR")]
    replay: Option<PathBuf>,
    /// Answer LLM requests from a JSON array of canned replies.
    #[arg(long, global = true, value_name = "FILE")]
    script: Option<PathBuf>,
    /// Save every LLM reply in DIR for later replay.
    #[arg(long, global = true, value_name = "DIR")]
    record: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    max_trials: Option<usize>,
    #[arg(long, global = true)]
    budget_seconds: Option<f64>,
    /// Number of retrieved examples per synthesis prompt.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Contract dataset (JSON).
    #[arg(long, global = true, value_name = "FILE")]
    contracts: Option<PathBuf>,
    /// Example store (JSONL).
    #[arg(long, global = true, value_name = "FILE")]
    examples: Option<PathBuf>,
    /// builtin, or external:<command> with `{file}` standing for the program.
    #[arg(long, global = true, value_name = "MODE")]
    safety_mode: Option<SafetyMode>,
    /// Kernel field widths (JSON).
    #[arg(long, global = true, value_name = "FILE")]
    types: Option<PathBuf>,
    /// Annotate from contracts only, without asking the LLM.
    #[arg(long, global = true)]
    direct_annotate: bool,
    /// bitblast, enumerate, or external:<command>.
    #[arg(long, global = true, value_name = "SOLVER")]
    solver: Option<String>,
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    match s {
        "http" => Ok(BackendKind::Http),
        "replay" => Ok(BackendKind::Replay),
        "scripted" => Ok(BackendKind::Scripted),
        _ => Err(format!("unknown backend `{s}` (expected http, replay or scripted)")),
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a program from a request (argument, or stdin when absent).
    Synthesize { prompt: Option<String> },
    /// Verify a program's assertions; unannotated input is annotated from contracts.
    Verify {
        file: PathBuf,
        /// Print the program that was verified to stderr.
        #[arg(long)]
        show_annotated: bool,
    },
    /// Annotate a program and print the result.
    Annotate {
        file: PathBuf,
        /// The request the program was written for.
        #[arg(long, default_value = "")]
        prompt: String,
    },
    /// Build a contract dataset from a directory of kernel C sources.
    BuildContracts { corpus: PathBuf, out: PathBuf },
    /// Run an evaluation dataset and write a JSON report.
    Eval {
        dataset: PathBuf,
        /// Report file; stdout when absent.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Let sessions add records to the example store during the run.
        #[arg(long)]
        no_freeze: bool,
    },
    /// Manage an example store.
    Examples {
        /// Use the comprehension example store instead.
        #[arg(long)]
        comprehension: bool,
        #[command(subcommand)]
        op: ExamplesOp,
    },
    /// Run the safety checks on a program.
    Check { file: PathBuf },
    /// List a program's attach points and the contracts they match.
    Probes { file: PathBuf },
}

#[derive(Subcommand)]
enum ExamplesOp {
    Add {
        #[arg(long)]
        prompt: String,
        /// Program file.
        program: PathBuf,
        #[arg(long, default_value = "curated")]
        outcome: Outcome,
    },
    Query {
        prompt: String,
    },
    List,
    Freeze,
    Unfreeze,
    Clear,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        fail(EXIT_CONFIG, e.to_string())
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("bpfsynth: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: Option<&Path>, o: Overrides) -> Result<CliConfig, Failure> {
    let mut c = match path {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(b) = o.backend {
        c.llm.backend = b;
    }
    if let Some(d) = o.replay {
        c.llm.backend = BackendKind::Replay;
        c.llm.replay_dir = Some(d);
    }
    if let Some(f) = o.script {
        c.llm.backend = BackendKind::Scripted;
        c.llm.script = Some(f);
    }
    if o.record.is_some() {
        c.llm.record_dir = o.record;
    }
    if let Some(m) = o.model {
        c.llm.model = m;
    }
    if let Some(n) = o.max_trials {
        c.session.max_trials = n;
    }
    if let Some(b) = o.budget_seconds {
        c.verify.budget_seconds = b;
    }
    if let Some(k) = o.k {
        c.session.k_examples = k;
    }
    if o.contracts.is_some() {
        c.stores.contracts = o.contracts;
    }
    if o.examples.is_some() {
        c.stores.examples = o.examples;
    }
    if let Some(mode) = o.safety_mode {
        match mode {
            SafetyMode::Builtin => c.safety.mode = SafetyKey::Builtin,
            SafetyMode::External { command } => {
                c.safety.mode = SafetyKey::External;
                c.safety.command = command;
            }
        }
    }
    if o.types.is_some() {
        c.verify.types = o.types;
    }
    if o.direct_annotate {
        c.session.annotation = AnnotationKey::Direct;
    }
    if let Some(s) = o.solver {
        c.verify.solver = s;
    }
    Ok(c)
}

fn run(cli: Cli) -> CmdResult {
    let direct = cli.over.direct_annotate;
    let cfg = load_config(cli.config.as_deref(), cli.over)?;
    match cli.cmd {
        Cmd::Synthesize { prompt } => cmd_synthesize(&cfg, prompt),
        Cmd::Verify { file, show_annotated } => cmd_verify(&cfg, &file, direct, show_annotated),
        Cmd::Annotate { file, prompt } => cmd_annotate(&cfg, &file, &prompt),
        Cmd::BuildContracts { corpus, out } => cmd_build_contracts(&cfg, &corpus, &out),
        Cmd::Eval {
            dataset,
            report,
            iterations,
            workers,
            no_freeze,
        } => {
            let mut opts = cfg.eval_options();
            opts.iterations = iterations.unwrap_or(opts.iterations);
            opts.workers = workers.unwrap_or(opts.workers);
            opts.freeze_examples &= !no_freeze;
            cmd_eval(&cfg, &dataset, report.as_deref(), opts)
        }
        Cmd::Examples { comprehension, op } => cmd_examples(&cfg, comprehension, op),
        Cmd::Check { file } => cmd_check(&cfg, &file),
        Cmd::Probes { file } => cmd_probes(&cfg, &file),
    }
}

fn read_program(path: &Path) -> Result<Program, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))
}

fn session_failure(e: SessionError) -> Failure {
    match e {
        SessionError::Config(m) => fail(EXIT_CONFIG, m),
        other => fail(EXIT_BACKEND, other.to_string()),
    }
}

fn cmd_synthesize(cfg: &CliConfig, prompt: Option<String>) -> CmdResult {
    let from_stdin = prompt.is_none();
    let mut request = match prompt {
        Some(p) => p,
        None => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| fail(EXIT_BACKEND, format!("reading the request from stdin: {e}")))?;
            s.trim().to_string()
        }
    };
    if request.trim().is_empty() {
        return Err(fail(EXIT_CONFIG, "the request is empty"));
    }
    let session = cfg.session()?;
    let interactive = !from_stdin && std::io::stdin().is_terminal();
    let mut asked = false;
    loop {
        let result = run_session(&request, &session).map_err(session_failure)?;
        for t in &result.trials {
            if let Some(f) = &t.feedback {
                eprintln!("trial {} rejected ({}): {}", t.index, f.stage, f.message);
            }
        }
        match result.status {
            SessionStatus::Success { program, trial_count } => {
                eprintln!("verified and safety-checked after {trial_count} trial(s)");
                print!("{}", render(&program));
                return Ok(0);
            }
            SessionStatus::NeedsUserInfo { history } => {
                eprintln!("no verified program after {} trials", history.len());
                if !interactive || asked {
                    return Ok(EXIT_SYNTHESIS);
                }
                asked = true;
                eprint!("Additional information (for example expected variable sizes), empty to give up: ");
                let _ = std::io::stderr().flush();
                let mut hint = String::new();
                std::io::stdin()
                    .lock()
                    .read_line(&mut hint)
                    .map_err(|e| fail(EXIT_BACKEND, e.to_string()))?;
                if hint.trim().is_empty() {
                    return Ok(EXIT_SYNTHESIS);
                }
                request = format!("{request}\n{}", hint.trim());
            }
        }
    }
}

fn cmd_verify(cfg: &CliConfig, file: &Path, reannotate: bool, show: bool) -> CmdResult {
    let p = read_program(file)?;
    let program = if count_annotations(&p) > 0 && !reannotate {
        p
    } else {
        let contracts = cfg.contracts()?;
        direct_annotate(&strip_annotations(&p), &contracts)
            .map_err(|e| fail(EXIT_CONFIG, e.to_string()))?
            .program
    };
    if show {
        eprint!("{}", render(&program));
    }
    let verdict =
        verify(&program, &cfg.types()?, &cfg.verify_options()?).map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
    println!("{verdict}");
    Ok(match verdict {
        Verdict::Verified => 0,
        Verdict::AssertViolation { counterexample, .. } => {
            for (k, v) in counterexample.describe() {
                println!("  {k} = {v}");
            }
            EXIT_VIOLATION
        }
        Verdict::Timeout { .. } => EXIT_TIMEOUT,
        Verdict::SolverError { .. } => EXIT_BACKEND,
    })
}

fn cmd_annotate(cfg: &CliConfig, file: &Path, prompt: &str) -> CmdResult {
    let p = read_program(file)?;
    let n = count_annotations(&p);
    if n > 0 {
        return Err(fail(
            EXIT_CONFIG,
            format!("{} already has {n} assume/assert statements", file.display()),
        ));
    }
    let contracts = cfg.contracts()?;
    let annotated = if cfg.session.annotation == AnnotationKey::Direct {
        direct_annotate(&p, &contracts).map_err(|e| fail(EXIT_CONFIG, e.to_string()))?
    } else {
        let llm = cfg.llm()?;
        let templates = cfg.templates()?;
        let store = match &cfg.stores.comprehension_examples {
            Some(path) => Some(cfg.open_store(Some(path))?),
            None => None,
        };
        annotate(&p, prompt, &contracts, &llm, &cfg.llm.model, &templates, store.as_ref()).map_err(|e| {
            use bpfsynth::comprehension::ComprehensionError as E;
            match e {
                E::Llm(_) | E::Store(_) => fail(EXIT_BACKEND, e.to_string()),
                other => fail(EXIT_SYNTHESIS, other.to_string()),
            }
        })?
    };
    for a in &annotated.annotations {
        let origin = match &a.provenance {
            bpfsynth::comprehension::Provenance::Contract { probe_key, .. } => probe_key.as_str(),
            bpfsynth::comprehension::Provenance::PromptInferred => "request",
        };
        eprintln!("{:?} {} ({origin})", a.kind, a.condition);
    }
    print!("{}", render(&annotated.program));
    Ok(0)
}

fn cmd_build_contracts(cfg: &CliConfig, corpus: &Path, out: &Path) -> CmdResult {
    if !corpus.is_dir() {
        return Err(fail(EXIT_CONFIG, format!("{} is not a directory", corpus.display())));
    }
    let llm = cfg.llm()?;
    let templates = cfg.templates()?;
    let report =
        build_dataset(corpus, &llm, &cfg.llm.model, &templates, out).map_err(|e| fail(EXIT_BACKEND, e.to_string()))?;
    for m in &report.malformed {
        eprintln!("skipped {} ({}): {}", m.function, m.file.display(), m.reason);
    }
    eprintln!(
        "scanned {} functions, wrote {} contracts to {}",
        report.scanned,
        report.store.len(),
        out.display()
    );
    Ok(0)
}

fn cmd_eval(cfg: &CliConfig, dataset: &Path, report: Option<&Path>, opts: bpfsynth::eval::EvalOptions) -> CmdResult {
    let cases = load_cases(dataset).map_err(|e| fail(EXIT_CONFIG, e.to_string()))?;
    let session = cfg.session()?;
    let r = run_eval(&cases, &session, opts).map_err(|e| fail(EXIT_BACKEND, e.to_string()))?;
    eprint!("{}", r.table());
    let json = r.to_json();
    match report {
        Some(path) => std::fs::write(path, json).map_err(|e| fail(EXIT_BACKEND, format!("{}: {e}", path.display())))?,
        None => print!("{json}"),
    }
    Ok(0)
}

fn cmd_examples(cfg: &CliConfig, comprehension: bool, op: ExamplesOp) -> CmdResult {
    let path = if comprehension {
        cfg.stores.comprehension_examples.as_deref()
    } else {
        cfg.stores.examples.as_deref()
    };
    let Some(path) = path else {
        return Err(fail(
            EXIT_CONFIG,
            "no example store configured (use --examples or the config file)",
        ));
    };
    let store = cfg.open_store(Some(path))?;
    let io = |e: bpfsynth::example_store::StoreError| fail(EXIT_BACKEND, e.to_string());
    match op {
        ExamplesOp::Add {
            prompt,
            program,
            outcome,
        } => {
            let p = read_program(&program)?;
            let rec = store
                .make_record(&prompt, &render(&p), outcome, Utc::now())
                .map_err(io)?;
            let id = rec.id.clone();
            store.add(rec).map_err(io)?;
            println!("{id}");
        }
        ExamplesOp::Query { prompt } => {
            for s in store.query(&prompt, cfg.session.k_examples).map_err(io)? {
                println!("{:.4}\t{}\t{}", s.score, s.record.id, s.record.prompt);
            }
        }
        ExamplesOp::List => {
            for r in store.records() {
                println!("{}\t{}\t{}", r.id, r.outcome.as_str(), r.prompt);
            }
        }
        ExamplesOp::Freeze => store.freeze().map_err(io)?,
        ExamplesOp::Unfreeze => store.unfreeze().map_err(io)?,
        ExamplesOp::Clear => store.clear().map_err(io)?,
    }
    Ok(0)
}

fn cmd_check(cfg: &CliConfig, file: &Path) -> CmdResult {
    let p = read_program(file)?;
    let n = count_annotations(&p);
    if n > 0 {
        eprintln!("ignoring {n} assume/assert statements");
    }
    let report = safety::check(&strip_annotations(&p), &cfg.safety_mode()?).map_err(|e| match e {
        SafetyError::AnnotationsPresent(_) | SafetyError::EmptyCommand => fail(EXIT_CONFIG, e.to_string()),
        other => fail(EXIT_BACKEND, other.to_string()),
    })?;
    for m in &report.messages {
        println!("{m}");
    }
    if report.ok {
        println!("ok");
        Ok(0)
    } else {
        Ok(EXIT_VIOLATION)
    }
}

fn cmd_probes(cfg: &CliConfig, file: &Path) -> CmdResult {
    let p = read_program(file)?;
    let contracts = cfg.contracts()?;
    for probe in extract_probes(&p) {
        let hits: Vec<&str> = contracts.lookup(&probe).iter().map(|c| c.probe_key.as_str()).collect();
        if hits.is_empty() {
            println!("{probe}");
        } else {
            println!("{probe}\t{}", hits.join(" "));
        }
    }
    Ok(0)
}
