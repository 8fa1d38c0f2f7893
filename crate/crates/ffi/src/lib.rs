//! C interface to the parser, the symbolic verifier and the safety gate.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Strings returned through out-parameters
//! are owned by the caller and released with [`bpf_string_free`]. Every
//! fallible call returns a [`BpfStatus`]; on failure the message is
//! available from [`bpf_last_error`] on the same thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bpfsynth::btparse::{self, Program};
use bpfsynth::comprehension::direct_annotate;
use bpfsynth::contracts::ContractStore;
use bpfsynth::safety::{self, SafetyMode};
use bpfsynth::symexec::{verify, KernelTypeMap, Verdict, VerifyOptions};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    IoError = 4,
    ContractError = 5,
    Unsupported = 6,
    SafetyError = 7,
    OutOfRange = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpfVerdict {
    Verified = 0,
    AssertViolation = 1,
    Timeout = 2,
    SolverError = 3,
}

/// A parsed program.
pub struct BpfProgram {
    inner: Program,
}

/// A loaded contract store.
pub struct BpfContracts {
    inner: ContractStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: BpfStatus, msg: impl Into<String>) -> BpfStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> BpfStatus) -> BpfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(BpfStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, BpfStatus> {
    if s.is_null() {
        return Err(fail(BpfStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| fail(BpfStatus::InvalidUtf8, e.to_string()))
}

fn to_c(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("NULs removed").into_raw()
}

unsafe fn put_str(out: *mut *mut c_char, s: &str) {
    if !out.is_null() {
        *out = to_c(s);
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bpf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn bpf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn bpf_program_parse(source: *const c_char, out: *mut *mut BpfProgram) -> BpfStatus {
    guard(|| {
        if out.is_null() {
            return fail(BpfStatus::NullArgument, "null out pointer");
        }
        let src = match read_str(source) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match btparse::parse(src) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(BpfProgram { inner: p }));
                BpfStatus::Ok
            }
            Err(e) => fail(BpfStatus::ParseError, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn bpf_program_free(p: *mut BpfProgram) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Canonical text of the program.
#[no_mangle]
pub unsafe extern "C" fn bpf_program_render(p: *const BpfProgram, out: *mut *mut c_char) -> BpfStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            return fail(BpfStatus::NullArgument, "null argument");
        }
        *out = to_c(&btparse::render(&(*p).inner));
        BpfStatus::Ok
    })
}

/// Number of attach points over all clauses; 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn bpf_program_probe_count(p: *const BpfProgram) -> usize {
    if p.is_null() {
        return 0;
    }
    btparse::extract_probes(&(*p).inner).len()
}

/// Key (`kind:target`) of the attach point at `index`.
#[no_mangle]
pub unsafe extern "C" fn bpf_program_probe_at(p: *const BpfProgram, index: usize, out: *mut *mut c_char) -> BpfStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            return fail(BpfStatus::NullArgument, "null argument");
        }
        let probes = btparse::extract_probes(&(*p).inner);
        match probes.get(index) {
            Some(probe) => {
                *out = to_c(&probe.key());
                BpfStatus::Ok
            }
            None => fail(BpfStatus::OutOfRange, format!("probe {index} of {}", probes.len())),
        }
    })
}

/// Number of `assume`/`assert` statements; 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn bpf_program_annotation_count(p: *const BpfProgram) -> usize {
    if p.is_null() {
        return 0;
    }
    btparse::count_annotations(&(*p).inner)
}

/// A copy of the program without `assume`/`assert` statements.
#[no_mangle]
pub unsafe extern "C" fn bpf_program_strip(p: *const BpfProgram, out: *mut *mut BpfProgram) -> BpfStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            return fail(BpfStatus::NullArgument, "null argument");
        }
        let stripped = btparse::strip_annotations(&(*p).inner);
        *out = Box::into_raw(Box::new(BpfProgram { inner: stripped }));
        BpfStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn bpf_contracts_load(path: *const c_char, out: *mut *mut BpfContracts) -> BpfStatus {
    guard(|| {
        if out.is_null() {
            return fail(BpfStatus::NullArgument, "null out pointer");
        }
        let path = match read_str(path) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match ContractStore::load(Path::new(path)) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(BpfContracts { inner: c }));
                BpfStatus::Ok
            }
            Err(e @ bpfsynth::contracts::ContractError::Io { .. }) => fail(BpfStatus::IoError, e.to_string()),
            Err(e) => fail(BpfStatus::ContractError, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn bpf_contracts_from_json(json: *const c_char, out: *mut *mut BpfContracts) -> BpfStatus {
    guard(|| {
        if out.is_null() {
            return fail(BpfStatus::NullArgument, "null out pointer");
        }
        let text = match read_str(json) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match ContractStore::from_json_str(text) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(BpfContracts { inner: c }));
                BpfStatus::Ok
            }
            Err(e) => fail(BpfStatus::ContractError, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn bpf_contracts_len(c: *const BpfContracts) -> usize {
    if c.is_null() {
        return 0;
    }
    (*c).inner.len()
}

#[no_mangle]
pub unsafe extern "C" fn bpf_contracts_free(c: *mut BpfContracts) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Symbolically verify a program with default options.
///
/// A program that already has annotations is verified as is. Otherwise,
/// when `contracts` is not NULL, annotations are derived from it first.
/// `line` receives the failing line for a violation and 0 otherwise;
/// `message` (optional) receives a description of the verdict.
#[no_mangle]
pub unsafe extern "C" fn bpf_verify(
    p: *const BpfProgram,
    contracts: *const BpfContracts,
    verdict: *mut BpfVerdict,
    line: *mut u32,
    message: *mut *mut c_char,
) -> BpfStatus {
    guard(|| {
        if p.is_null() || verdict.is_null() {
            return fail(BpfStatus::NullArgument, "null argument");
        }
        let program = &(*p).inner;
        let annotated;
        let target = if btparse::count_annotations(program) == 0 && !contracts.is_null() {
            annotated = match direct_annotate(program, &(*contracts).inner) {
                Ok(a) => a.program,
                Err(e) => return fail(BpfStatus::ContractError, e.to_string()),
            };
            &annotated
        } else {
            program
        };
        let v = match verify(target, &KernelTypeMap::default(), &VerifyOptions::default()) {
            Ok(v) => v,
            Err(e) => return fail(BpfStatus::Unsupported, e.to_string()),
        };
        *verdict = match &v {
            Verdict::Verified => BpfVerdict::Verified,
            Verdict::AssertViolation { .. } => BpfVerdict::AssertViolation,
            Verdict::Timeout { .. } => BpfVerdict::Timeout,
            Verdict::SolverError { .. } => BpfVerdict::SolverError,
        };
        if !line.is_null() {
            *line = match &v {
                Verdict::AssertViolation { location, .. } => location.line,
                _ => 0,
            };
        }
        put_str(message, &v.to_string());
        BpfStatus::Ok
    })
}

/// Run the built-in safety gate on the program with annotations removed.
/// `ok` receives the decision; `message` (optional) the findings, one per
/// line.
#[no_mangle]
pub unsafe extern "C" fn bpf_safety_check(p: *const BpfProgram, ok: *mut bool, message: *mut *mut c_char) -> BpfStatus {
    guard(|| {
        if p.is_null() || ok.is_null() {
            return fail(BpfStatus::NullArgument, "null argument");
        }
        let stripped = btparse::strip_annotations(&(*p).inner);
        match safety::check(&stripped, &SafetyMode::Builtin) {
            Ok(report) => {
                *ok = report.ok;
                put_str(message, &report.messages.join("\n"));
                BpfStatus::Ok
            }
            Err(e) => fail(BpfStatus::SafetyError, e.to_string()),
        }
    })
}
