//! C ABI over `hybrid_conley`.
//!
//! Every function returns an `int32_t` status (`HC_OK` or a negative `HC_ERR_*`) and writes results
//! through out-pointers. Handles are opaque and owned by the caller, who frees them with the matching
//! `*_free`. `hc_last_error` copies the message of the most recent failure on the calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hybrid_conley::builtins::{instantiate, BuiltinId};
use hybrid_conley::chain::{
    build_box_lyapunov, build_transition_graph, chain_recurrent_boxes, conley_pairs, ChainClassSet, GraphParams,
    TransitionGraph, DEFAULT_COMPONENT_CAP,
};
use hybrid_conley::guard::{verify_guard, GuardVerdict, GuardVerifyOptions};
use hybrid_conley::integrate::{max_flow_time, simulate_execution, ExecutionClass, ExecutionTrace, FlowTime, SimBudget};
use hybrid_conley::suspension::{embed, phi, SuspensionPoint};
use hybrid_conley::{HybridError, HybridSystemDef, State};

pub const HC_OK: i32 = 0;
pub const HC_ERR_NULL: i32 = -1;
pub const HC_ERR_UTF8: i32 = -2;
pub const HC_ERR_BAD_PARAMETER: i32 = -3;
pub const HC_ERR_INVALID_SYSTEM: i32 = -4;
pub const HC_ERR_NOT_ON_GUARD: i32 = -5;
pub const HC_ERR_INDEX: i32 = -6;
pub const HC_ERR_NUMERIC: i32 = -7;
pub const HC_ERR_RESET_OUT_OF_DOMAIN: i32 = -8;
pub const HC_ERR_GRID_TOO_FINE: i32 = -9;
pub const HC_ERR_TOO_MANY_COMPONENTS: i32 = -10;
pub const HC_ERR_NO_CHAIN: i32 = -11;
pub const HC_ERR_TRANSIENT_TOO_SHORT: i32 = -12;
pub const HC_ERR_BUDGET: i32 = -13;
pub const HC_ERR_DEGREE_OVERFLOW: i32 = -14;
pub const HC_ERR_BLOCKED: i32 = -15;
pub const HC_ERR_IO: i32 = -16;
pub const HC_ERR_PANIC: i32 = -99;

pub const HC_CLASS_INFINITE: i32 = 0;
pub const HC_CLASS_ZENO: i32 = 1;
pub const HC_CLASS_BLOCKED: i32 = 2;
pub const HC_CLASS_TRUNCATED: i32 = 3;

pub const HC_VERDICT_TRAPPING: i32 = 0;
pub const HC_VERDICT_VIOLATION: i32 = 2;
pub const HC_VERDICT_INCONCLUSIVE: i32 = 3;

/// A validated hybrid system.
pub struct HcSystem {
    sys: HybridSystemDef,
}

/// A simulated execution.
pub struct HcTrace {
    trace: ExecutionTrace,
}

/// A box graph with its recurrent classes.
pub struct HcAnalysis {
    graph: TransitionGraph,
    classes: ChainClassSet,
    nontrivial_pairs: i64,
    level_values: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn code_of(e: &HybridError) -> i32 {
    match e {
        HybridError::NonFiniteState { .. } | HybridError::StepUnderflow => HC_ERR_NUMERIC,
        HybridError::NotOnGuard => HC_ERR_NOT_ON_GUARD,
        HybridError::ResetOutOfDomain { .. } => HC_ERR_RESET_OUT_OF_DOMAIN,
        HybridError::GridTooFine { .. } => HC_ERR_GRID_TOO_FINE,
        HybridError::TooManyComponents { .. } => HC_ERR_TOO_MANY_COMPONENTS,
        HybridError::NoChain => HC_ERR_NO_CHAIN,
        HybridError::TransientTooShort => HC_ERR_TRANSIENT_TOO_SHORT,
        HybridError::BudgetExceeded => HC_ERR_BUDGET,
        HybridError::DegreeOverflow { .. } => HC_ERR_DEGREE_OVERFLOW,
        HybridError::BadParameter(_) => HC_ERR_BAD_PARAMETER,
        HybridError::InvalidSystem(_) => HC_ERR_INVALID_SYSTEM,
        HybridError::Blocked(_) => HC_ERR_BLOCKED,
        HybridError::Io(_) => HC_ERR_IO,
    }
}

struct Fail(i32, String);

impl From<HybridError> for Fail {
    fn from(e: HybridError) -> Self {
        Fail(code_of(&e), e.to_string())
    }
}

fn guarded<F: FnOnce() -> Result<(), Fail>>(f: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HC_OK,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside hybrid-conley".into());
            HC_ERR_PANIC
        }
    }
}

fn null() -> Fail {
    Fail(HC_ERR_NULL, "null pointer argument".into())
}

unsafe fn get<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

unsafe fn put<T>(p: *mut T, v: T) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null());
    }
    p.write(v);
    Ok(())
}

unsafe fn point(x: *const f64, n: usize) -> Result<Vec<f64>, Fail> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if x.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(x, n).to_vec())
}

unsafe fn string<'a>(s: *const c_char) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s).to_str().map_err(|_| Fail(HC_ERR_UTF8, "string is not UTF-8".into()))
}

fn opt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hc_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr() as *const c_char
}

/// Copies the last error message (truncated, NUL-terminated) into `buf`; returns its full length.
#[no_mangle]
pub unsafe extern "C" fn hc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Instantiates a builtin system by name. Pass NaN for parameters that should take their defaults.
#[no_mangle]
pub unsafe extern "C" fn hc_system_builtin(name: *const c_char, g: f64, d: f64, e0: f64, alpha: f64, out: *mut *mut HcSystem) -> i32 {
    guarded(|| {
        let id = BuiltinId::from_name(string(name)?, opt(g), opt(d), opt(e0), opt(alpha))?;
        let sys = instantiate(&id)?;
        put(out, Box::into_raw(Box::new(HcSystem { sys })))
    })
}

/// Parses and validates a system definition in the JSON format.
#[no_mangle]
pub unsafe extern "C" fn hc_system_from_json(json: *const c_char, out: *mut *mut HcSystem) -> i32 {
    guarded(|| {
        let sys = HybridSystemDef::from_json_str(string(json)?)?;
        put(out, Box::into_raw(Box::new(HcSystem { sys })))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hc_system_free(sys: *mut HcSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

#[no_mangle]
pub unsafe extern "C" fn hc_system_n_modes(sys: *const HcSystem, out: *mut usize) -> i32 {
    guarded(|| put(out, get(sys)?.sys.modes.len()))
}

/// Maximal flow time of `(mode, x)`; `*finite` is 0 when no guard is met within `horizon`.
#[no_mangle]
pub unsafe extern "C" fn hc_max_flow_time(
    sys: *const HcSystem,
    mode: usize,
    x: *const f64,
    n: usize,
    horizon: f64,
    mu: *mut f64,
    finite: *mut i32,
) -> i32 {
    guarded(|| {
        let s = get(sys)?;
        let st = state(&s.sys, mode, point(x, n)?)?;
        match max_flow_time(&s.sys, &st, horizon, &SimBudget::default())? {
            FlowTime::Finite(v) => {
                put(mu, v)?;
                put(finite, 1)
            }
            FlowTime::ExceedsHorizon => {
                put(mu, horizon)?;
                put(finite, 0)
            }
        }
    })
}

fn state(sys: &HybridSystemDef, mode: usize, x: Vec<f64>) -> Result<State, Fail> {
    match sys.modes.get(mode) {
        Some(m) if m.dim == x.len() => Ok(State::new(mode, x)),
        Some(m) => Err(Fail(HC_ERR_BAD_PARAMETER, format!("mode {mode} has dimension {}, got {}", m.dim, x.len()))),
        None => Err(Fail(HC_ERR_BAD_PARAMETER, format!("no mode {mode}"))),
    }
}

/// Simulates from `(mode, x)` with the given time and jump budget.
#[no_mangle]
pub unsafe extern "C" fn hc_simulate(
    sys: *const HcSystem,
    mode: usize,
    x: *const f64,
    n: usize,
    max_time: f64,
    max_jumps: usize,
    out: *mut *mut HcTrace,
) -> i32 {
    guarded(|| {
        let s = get(sys)?;
        let st = state(&s.sys, mode, point(x, n)?)?;
        let budget = SimBudget { max_time, max_jumps, ..Default::default() };
        let trace = simulate_execution(&s.sys, &st, &budget)?;
        put(out, Box::into_raw(Box::new(HcTrace { trace })))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hc_trace_free(t: *mut HcTrace) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// One of `HC_CLASS_*`.
#[no_mangle]
pub unsafe extern "C" fn hc_trace_class(t: *const HcTrace, out: *mut i32) -> i32 {
    guarded(|| {
        let c = match get(t)?.trace.class {
            ExecutionClass::Infinite { .. } => HC_CLASS_INFINITE,
            ExecutionClass::Zeno { .. } => HC_CLASS_ZENO,
            ExecutionClass::Blocked { .. } => HC_CLASS_BLOCKED,
            ExecutionClass::BudgetTruncated => HC_CLASS_TRUNCATED,
        };
        put(out, c)
    })
}

/// Extrapolated stop time of a Zeno execution; `HC_ERR_BAD_PARAMETER` for other classes.
#[no_mangle]
pub unsafe extern "C" fn hc_trace_stop_time(t: *const HcTrace, out: *mut f64) -> i32 {
    guarded(|| match get(t)?.trace.class {
        ExecutionClass::Zeno { stop_time_estimate } => put(out, stop_time_estimate),
        _ => Err(Fail(HC_ERR_BAD_PARAMETER, "execution is not Zeno".into())),
    })
}

#[no_mangle]
pub unsafe extern "C" fn hc_trace_n_jumps(t: *const HcTrace, out: *mut usize) -> i32 {
    guarded(|| put(out, get(t)?.trace.n_jumps))
}

#[no_mangle]
pub unsafe extern "C" fn hc_trace_jump_time(t: *const HcTrace, k: usize, out: *mut f64) -> i32 {
    guarded(|| {
        let j = get(t)?.trace.jumps.get(k).ok_or_else(|| Fail(HC_ERR_INDEX, format!("no jump {k}")))?;
        put(out, j.time)
    })
}

/// Copies the final state into `x` (capacity `n`) and its mode into `mode`.
#[no_mangle]
pub unsafe extern "C" fn hc_trace_final_state(t: *const HcTrace, mode: *mut usize, x: *mut f64, n: usize) -> i32 {
    guarded(|| {
        let s = get(t)?.trace.final_state();
        copy_out(&s.x, x, n)?;
        put(mode, s.mode)
    })
}

unsafe fn copy_out(v: &[f64], x: *mut f64, n: usize) -> Result<(), Fail> {
    if n < v.len() {
        return Err(Fail(HC_ERR_INDEX, format!("buffer holds {n} values, need {}", v.len())));
    }
    if x.is_null() {
        return Err(null());
    }
    std::ptr::copy_nonoverlapping(v.as_ptr(), x, v.len());
    Ok(())
}

/// Builds the box graph at resolution `h` and flow step `t_step`, and its recurrent classes.
#[no_mangle]
pub unsafe extern "C" fn hc_analyze(sys: *const HcSystem, h: f64, t_step: f64, seed: u64, out: *mut *mut HcAnalysis) -> i32 {
    guarded(|| {
        let s = get(sys)?;
        let mut params = GraphParams::new(h, t_step);
        params.seed = seed;
        let graph = build_transition_graph(&s.sys, &params, &SimBudget::default())?;
        let classes = chain_recurrent_boxes(&graph);
        let nontrivial_pairs = match conley_pairs(&graph.succ, &classes, DEFAULT_COMPONENT_CAP) {
            Ok(p) => p.iter().filter(|p| !p.trivial).count() as i64,
            Err(_) => -1,
        };
        let lyap = build_box_lyapunov(&graph.succ, &classes);
        let level_values = (0..graph.len()).map(|b| lyap.value(b)).collect();
        put(out, Box::into_raw(Box::new(HcAnalysis { graph, classes, nontrivial_pairs, level_values })))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hc_analysis_free(a: *mut HcAnalysis) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

#[no_mangle]
pub unsafe extern "C" fn hc_analysis_n_boxes(a: *const HcAnalysis, out: *mut usize) -> i32 {
    guarded(|| put(out, get(a)?.graph.len()))
}

#[no_mangle]
pub unsafe extern "C" fn hc_analysis_n_recurrent(a: *const HcAnalysis, out: *mut usize) -> i32 {
    guarded(|| put(out, get(a)?.classes.recurrent_boxes.len()))
}

#[no_mangle]
pub unsafe extern "C" fn hc_analysis_n_recurrent_classes(a: *const HcAnalysis, out: *mut usize) -> i32 {
    guarded(|| put(out, get(a)?.classes.recurrent_sccs.len()))
}

/// Number of nontrivial attractor-repeller pairs, or -1 when there are too many classes to enumerate.
#[no_mangle]
pub unsafe extern "C" fn hc_analysis_n_nontrivial_pairs(a: *const HcAnalysis, out: *mut i64) -> i32 {
    guarded(|| put(out, get(a)?.nontrivial_pairs))
}

/// The `k`-th recurrent box id.
#[no_mangle]
pub unsafe extern "C" fn hc_analysis_recurrent_box(a: *const HcAnalysis, k: usize, out: *mut usize) -> i32 {
    guarded(|| {
        let b = get(a)?.classes.recurrent_boxes.get(k).ok_or_else(|| Fail(HC_ERR_INDEX, format!("no recurrent box {k}")))?;
        put(out, *b)
    })
}

/// Mode and bounds of box `b`; `lo` and `hi` need room for the mode's dimension.
#[no_mangle]
pub unsafe extern "C" fn hc_analysis_box(
    a: *const HcAnalysis,
    b: usize,
    mode: *mut usize,
    lo: *mut f64,
    hi: *mut f64,
    n: usize,
) -> i32 {
    guarded(|| {
        let g = &get(a)?.graph;
        if b >= g.len() {
            return Err(Fail(HC_ERR_INDEX, format!("no box {b}")));
        }
        let bounds = g.grid.bounds(b);
        copy_out(&bounds.iter().map(|p| p.0).collect::<Vec<_>>(), lo, n)?;
        copy_out(&bounds.iter().map(|p| p.1).collect::<Vec<_>>(), hi, n)?;
        put(mode, g.grid.boxes[b].mode)
    })
}

/// Box Lyapunov value of box `b`.
#[no_mangle]
pub unsafe extern "C" fn hc_analysis_lyapunov(a: *const HcAnalysis, b: usize, out: *mut f64) -> i32 {
    guarded(|| {
        let v = get(a)?.level_values.get(b).ok_or_else(|| Fail(HC_ERR_INDEX, format!("no box {b}")))?;
        put(out, *v)
    })
}

/// Trapping-guard verdict with default options; writes one of `HC_VERDICT_*`.
#[no_mangle]
pub unsafe extern "C" fn hc_verify_guard(sys: *const HcSystem, seed: u64, verdict: *mut i32) -> i32 {
    guarded(|| {
        let s = get(sys)?;
        let rep = verify_guard(&s.sys, &GuardVerifyOptions { seed, ..Default::default() })?;
        let v = match rep.verdict {
            GuardVerdict::LikelyTrapping => HC_VERDICT_TRAPPING,
            GuardVerdict::ViolationFound { .. } => HC_VERDICT_VIOLATION,
            GuardVerdict::Inconclusive => HC_VERDICT_INCONCLUSIVE,
        };
        put(verdict, v)
    })
}

/// Suspension flow for time `t` from the base point `(mode, x)`.
///
/// On return `*on_cylinder` is 1 when the endpoint lies on a cylinder; then `x_out` holds the guard
/// point, `*id` the guard component and `*s` the height. Otherwise `x_out` is the base state, `*id`
/// its mode and `*s` is 0.
#[no_mangle]
pub unsafe extern "C" fn hc_suspension_phi(
    sys: *const HcSystem,
    mode: usize,
    x: *const f64,
    n: usize,
    t: f64,
    on_cylinder: *mut i32,
    id: *mut usize,
    x_out: *mut f64,
    s: *mut f64,
) -> i32 {
    guarded(|| {
        let h = get(sys)?;
        let st = state(&h.sys, mode, point(x, n)?)?;
        let r = phi(&h.sys, t, &embed(&st), &SimBudget::default())?;
        match r.endpoint {
            SuspensionPoint::Base { state } => {
                copy_out(&state.x, x_out, n)?;
                put(id, state.mode)?;
                put(s, 0.0)?;
                put(on_cylinder, 0)
            }
            SuspensionPoint::Cyl { z, guard, s: height } => {
                copy_out(&z.x, x_out, n)?;
                put(id, guard)?;
                put(s, height)?;
                put(on_cylinder, 1)
            }
        }
    })
}
