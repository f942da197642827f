//! C ABI for the chanplan planner.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns a [`CpStatus`];
//! on failure [`cp_last_error_message`] describes the error for the calling
//! thread. Strings handed out by the library are released with
//! [`cp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use chanplan::reallocate::AllocationPlan;
use chanplan::{
    couple_channels, load_stats, parse_model, partition_groups, plan, total_cost, Error, ErrorCode, ModelGraph,
    PlanRequest, Policy, StaticReport,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    Parse = 3,
    Infeasible = 4,
    Constraint = 5,
    Domain = 6,
    Provider = 7,
    Io = 8,
    /// The library panicked; the handle arguments should not be reused.
    Internal = 9,
}

impl From<&Error> for CpStatus {
    fn from(e: &Error) -> Self {
        match e.code() {
            ErrorCode::Parse => CpStatus::Parse,
            ErrorCode::Infeasible => CpStatus::Infeasible,
            ErrorCode::Constraint => CpStatus::Constraint,
            ErrorCode::Domain | ErrorCode::Usage => CpStatus::Domain,
            ErrorCode::Provider => CpStatus::Provider,
            ErrorCode::Io | ErrorCode::FileNotFound => CpStatus::Io,
        }
    }
}

/// A validated architecture graph.
pub struct CpModel {
    graph: ModelGraph,
}

/// A finished allocation plan.
pub struct CpPlan {
    plan: AllocationPlan,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    let msg = CString::new(bytes).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(CpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(CpStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CpStatus::NullArgument, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CpStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(CpStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s).expect("json has no nul bytes").into_raw()
}

/// Parses a model document (UTF-8 JSON) into a new handle stored in `*out`.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_model_parse(json: *const c_char, out: *mut *mut CpModel) -> CpStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let graph = parse_model(text)?;
        write_out(out, Box::into_raw(Box::new(CpModel { graph })), "out")
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`cp_model_parse`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cp_model_free(model: *mut CpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Total FLOPs (multiply-accumulates) of the unpruned model.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_model_flops(model: *const CpModel, out: *mut u64) -> CpStatus {
    guard(|| {
        let m = handle(model, "model")?;
        write_out(out, total_cost(&m.graph).flops, "out")
    })
}

/// Number of layers with a channel count (conv and linear).
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_model_num_prunable(model: *const CpModel, out: *mut usize) -> CpStatus {
    guard(|| {
        let m = handle(model, "model")?;
        write_out(out, m.graph.num_prunable(), "out")
    })
}

/// Layer groups as JSON, `{"groups": [{"spatial", "layers", "channels"}, ...]}`.
/// Free the string with [`cp_string_free`].
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_model_groups_json(model: *const CpModel, out: *mut *mut c_char) -> CpStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let partition = partition_groups(&m.graph, &couple_channels(&m.graph))?;
        let json = serde_json::to_string(&partition).expect("partition serializes");
        write_out(out, to_c_string(json), "out")
    })
}

/// Plans a pruned configuration for `target_flops` from a stats document.
///
/// `policy` is one of `importance_guided`, `winner_take_all`, `uniform`,
/// `random`; null selects `importance_guided`. Every round reuses the same
/// statistics.
///
/// # Safety
/// `model` must be a live handle, `stats_json` and (if non-null) `policy`
/// nul-terminated strings, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_plan_create(
    model: *const CpModel,
    stats_json: *const c_char,
    target_flops: u64,
    lambda: f64,
    policy: *const c_char,
    rounds: u32,
    seed: u64,
    out: *mut *mut CpPlan,
) -> CpStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let stats = str_arg(stats_json, "stats_json")?;
        let policy = if policy.is_null() {
            Policy::ImportanceGuided
        } else {
            str_arg(policy, "policy")?.parse()?
        };
        if out.is_null() {
            return Err(null("out"));
        }
        let request = PlanRequest {
            target_flops,
            lambda,
            policy,
            rounds: rounds as usize,
            seed,
        };
        request.validate()?;
        let report = load_stats(stats, &m.graph)?;
        let plan = plan(&m.graph, &mut StaticReport(report), &request)?;
        write_out(out, Box::into_raw(Box::new(CpPlan { plan })), "out")
    })
}

/// Releases a plan. Null is ignored.
///
/// # Safety
/// `plan` must come from [`cp_plan_create`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cp_plan_free(plan: *mut CpPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// FLOPs of the planned configuration.
///
/// # Safety
/// `plan` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_plan_achieved_flops(plan: *const CpPlan, out: *mut u64) -> CpStatus {
    guard(|| {
        let p = handle(plan, "plan")?;
        write_out(out, p.plan.achieved_flops, "out")
    })
}

/// Budget left unspent by the plan.
///
/// # Safety
/// `plan` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_plan_surplus_flops(plan: *const CpPlan, out: *mut u64) -> CpStatus {
    guard(|| {
        let p = handle(plan, "plan")?;
        write_out(out, p.plan.surplus_flops, "out")
    })
}

/// Planned width of one layer, or [`CpStatus::Domain`] for an unknown name.
///
/// # Safety
/// `plan` must be a live handle, `layer` a nul-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_plan_layer_channels(
    plan: *const CpPlan,
    layer: *const c_char,
    out: *mut usize,
) -> CpStatus {
    guard(|| {
        let p = handle(plan, "plan")?;
        let name = str_arg(layer, "layer")?;
        let c = p
            .plan
            .final_config
            .get(name)
            .ok_or_else(|| Failure(CpStatus::Domain, format!("no prunable layer `{name}`")))?;
        write_out(out, c, "out")
    })
}

/// The full plan document as pretty-printed JSON. Free the string with
/// [`cp_string_free`].
///
/// # Safety
/// `plan` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_plan_to_json(plan: *const CpPlan, out: *mut *mut c_char) -> CpStatus {
    guard(|| {
        let p = handle(plan, "plan")?;
        if out.is_null() {
            return Err(null("out"));
        }
        write_out(out, to_c_string(p.plan.to_json()), "out")
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn cp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn cp_status_name(status: CpStatus) -> *const c_char {
    let s: &'static CStr = match status {
        CpStatus::Ok => c"ok",
        CpStatus::NullArgument => c"null-argument",
        CpStatus::InvalidUtf8 => c"invalid-utf8",
        CpStatus::Parse => c"parse",
        CpStatus::Infeasible => c"infeasible",
        CpStatus::Constraint => c"constraint",
        CpStatus::Domain => c"domain",
        CpStatus::Provider => c"provider",
        CpStatus::Io => c"io",
        CpStatus::Internal => c"internal",
    };
    s.as_ptr()
}

/// Library version, e.g. `0.1.0`.
#[no_mangle]
pub extern "C" fn cp_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version has no interior nul"),
    };
    VERSION.as_ptr()
}
