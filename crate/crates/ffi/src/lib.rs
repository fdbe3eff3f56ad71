//! C interface to `scm-active`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_from_*`
//! functions and released by the matching `*_free`. Every fallible call
//! returns an `ScmStatus`; on failure `scm_last_error()` describes the
//! problem until the next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufWriter;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use scm_active::belief::{expected_total_risk, BeliefState};
use scm_active::config::{Experiment, ExperimentConfig};
use scm_active::harness::{run_experiment, summarize, write_summary, write_trace};
use scm_active::metrics::true_total_risk;
use scm_active::rng;
use scm_active::scm::{sample_scm, Draw, Intervention};
use scm_active::strategy::{select_intervention, Policy};
use scm_active::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidArgument = 4,
    IllConditioned = 5,
    PolicyMismatch = 6,
    Io = 7,
    Panic = 8,
}

/// A validated experiment: true model, prior, candidates, policies.
pub struct ScmExperiment(Experiment);

/// A GP belief over the structural functions of one experiment's graph.
pub struct ScmBelief(BeliefState);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> ScmStatus {
    match err {
        Error::Config(_) | Error::Parse(_) => ScmStatus::Config,
        Error::IllConditioned { .. } => ScmStatus::IllConditioned,
        Error::PolicyMismatch { .. } => ScmStatus::PolicyMismatch,
        Error::Io(_) | Error::Csv(_) => ScmStatus::Io,
        _ => ScmStatus::InvalidArgument,
    }
}

fn fail(status: ScmStatus, msg: impl Into<String>) -> ScmStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), ScmStatus>) -> ScmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScmStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(ScmStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: scm_active::Result<T>) -> Result<T, ScmStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, ScmStatus> {
    if p.is_null() {
        return Err(fail(ScmStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(ScmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, ScmStatus> {
    p.as_ref()
        .ok_or_else(|| fail(ScmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], ScmStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(ScmStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, ScmStatus> {
    p.as_mut()
        .ok_or_else(|| fail(ScmStatus::NullPointer, format!("{what} is null")))
}

/// Message for the last failure on this thread; empty if none. Owned by the
/// library and valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn scm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn scm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a TOML experiment config.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scm_experiment_from_toml(
    toml: *const c_char,
    out: *mut *mut ScmExperiment,
) -> ScmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let text = str_arg(toml, "toml")?;
        let cfg = lift(ExperimentConfig::from_toml(text))?;
        let e = lift(cfg.resolve())?;
        *out = Box::into_raw(Box::new(ScmExperiment(e)));
        Ok(())
    })
}

/// # Safety
/// `e` must come from `scm_experiment_from_toml` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scm_experiment_free(e: *mut ScmExperiment) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Number of nodes of the experiment's graph (0 for a null handle).
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scm_experiment_node_count(e: *const ScmExperiment) -> usize {
    e.as_ref().map_or(0, |e| e.0.truth.n_nodes())
}

/// Number of candidate interventions (0 for a null handle).
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scm_experiment_candidate_count(e: *const ScmExperiment) -> usize {
    e.as_ref().map_or(0, |e| e.0.candidates.len())
}

/// Runs every configured policy and trial, writing `trace.csv` and
/// `summary.csv` into `out_dir` (created if missing).
///
/// # Safety
/// `e` must be a live handle and `out_dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn scm_experiment_run(e: *const ScmExperiment, out_dir: *const c_char) -> ScmStatus {
    guard(|| {
        let e = &ref_arg(e, "experiment")?.0;
        let dir = Path::new(str_arg(out_dir, "out_dir")?);
        let io = |r: std::io::Result<File>| lift(r.map_err(Error::from));
        lift(std::fs::create_dir_all(dir).map_err(Error::from))?;
        let rows = run_experiment(e);
        let trace = io(File::create(dir.join("trace.csv")))?;
        lift(write_trace(BufWriter::new(trace), &rows))?;
        let summary = lift(summarize(&rows))?;
        let out = io(File::create(dir.join("summary.csv")))?;
        lift(write_summary(BufWriter::new(out), &summary))
    })
}

/// Draws one sample of the true model under candidate `candidate`, or under
/// no intervention when `candidate == SIZE_MAX`. `x` receives one value per
/// node.
///
/// # Safety
/// `e` must be a live handle; `x` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn scm_experiment_sample(
    e: *const ScmExperiment,
    candidate: usize,
    seed: u64,
    x: *mut f64,
    len: usize,
) -> ScmStatus {
    guard(|| {
        let e = &ref_arg(e, "experiment")?.0;
        let n = e.truth.n_nodes();
        if len != n || x.is_null() {
            return Err(fail(ScmStatus::InvalidArgument, format!("x must hold {n} values")));
        }
        let i = candidate_at(e, candidate)?;
        let d = lift(sample_scm(&e.truth, &i, &mut rng::stream(seed, &[])))?;
        std::slice::from_raw_parts_mut(x, n).copy_from_slice(&d.x);
        Ok(())
    })
}

fn candidate_at(e: &Experiment, candidate: usize) -> Result<Intervention, ScmStatus> {
    if candidate == usize::MAX {
        Ok(Intervention::null())
    } else if candidate < e.candidates.len() {
        Ok(e.candidates.get(candidate).clone())
    } else {
        Err(fail(
            ScmStatus::InvalidArgument,
            format!("candidate {candidate} out of range ({})", e.candidates.len()),
        ))
    }
}

/// Creates the no-data belief of an experiment.
///
/// # Safety
/// `e` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scm_belief_new(e: *const ScmExperiment, out: *mut *mut ScmBelief) -> ScmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let e = &ref_arg(e, "experiment")?.0;
        let b = lift(BeliefState::empty(e.prior.clone()))?;
        *out = Box::into_raw(Box::new(ScmBelief(b)));
        Ok(())
    })
}

/// # Safety
/// `b` must come from `scm_belief_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scm_belief_free(b: *mut ScmBelief) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Number of draws the belief has absorbed (0 for a null handle).
///
/// # Safety
/// `b` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scm_belief_draw_count(b: *const ScmBelief) -> usize {
    b.as_ref().map_or(0, |b| b.0.draws().len())
}

/// Adds one joint sample `x` (one value per node) taken under the
/// intervention clamping `clamp_nodes[k]` to `clamp_values[k]`. Clamped
/// coordinates of `x` must equal their clamp values.
///
/// # Safety
/// `b` must be a live handle; the arrays must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn scm_belief_add_draw(
    b: *mut ScmBelief,
    clamp_nodes: *const usize,
    clamp_values: *const f64,
    n_clamps: usize,
    x: *const f64,
    len: usize,
) -> ScmStatus {
    guard(|| {
        let b = out_arg(b, "belief")?;
        let nodes = slice_arg(clamp_nodes, n_clamps, "clamp_nodes")?;
        let values = slice_arg(clamp_values, n_clamps, "clamp_values")?;
        let x = slice_arg(x, len, "x")?;
        let i = lift(Intervention::new(nodes.iter().copied().zip(values.iter().copied()).collect()))?;
        b.0 = lift(b.0.with_draw(Draw {
            intervention: i,
            x: x.to_vec(),
        }))?;
        Ok(())
    })
}

/// Posterior mean and variance of the structural function of `node` at
/// parent values `x` (`len` = number of parents).
///
/// # Safety
/// `b` must be a live handle; `x` must hold `len` doubles; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn scm_belief_posterior(
    b: *const ScmBelief,
    node: usize,
    x: *const f64,
    len: usize,
    mean: *mut f64,
    var: *mut f64,
) -> ScmStatus {
    guard(|| {
        let b = &ref_arg(b, "belief")?.0;
        if node >= b.n_nodes() {
            return Err(fail(ScmStatus::InvalidArgument, format!("node {node} out of range")));
        }
        let x = slice_arg(x, len, "x")?;
        let k = b.graph().parents(node).len();
        if len != k {
            return Err(fail(ScmStatus::InvalidArgument, format!("node {node} has {k} parents, got {len} values")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(fail(ScmStatus::InvalidArgument, "non-finite input"));
        }
        let (m, v) = b.node(node).mean_var(x);
        *out_arg(mean, "mean")? = m;
        *out_arg(var, "var")? = v;
        Ok(())
    })
}

/// Expected total risk of the posterior-mean estimate, and the true total
/// risk against the experiment's ground truth.
///
/// # Safety
/// Handles must be live and belong together; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn scm_belief_risks(
    e: *const ScmExperiment,
    b: *const ScmBelief,
    expected: *mut f64,
    truth: *mut f64,
) -> ScmStatus {
    guard(|| {
        let e = &ref_arg(e, "experiment")?.0;
        let b = &ref_arg(b, "belief")?.0;
        check_pair(e, b)?;
        *out_arg(expected, "expected")? = expected_total_risk(b, &e.risk);
        *out_arg(truth, "truth")? = true_total_risk(&e.truth, b, &e.risk);
        Ok(())
    })
}

fn check_pair(e: &Experiment, b: &BeliefState) -> Result<(), ScmStatus> {
    if e.truth.graph() != b.graph() {
        return Err(fail(ScmStatus::InvalidArgument, "belief does not belong to this experiment"));
    }
    Ok(())
}

/// Chooses the next candidate with `policy` ("observe", "random",
/// "sampling", "dp_upstream", "dp_single"). `index` receives the candidate
/// index, or `SIZE_MAX` when the policy only observes.
///
/// # Safety
/// Handles must be live; `policy` NUL-terminated; `index` writable.
#[no_mangle]
pub unsafe extern "C" fn scm_select(
    e: *const ScmExperiment,
    b: *const ScmBelief,
    policy: *const c_char,
    seed: u64,
    index: *mut usize,
) -> ScmStatus {
    guard(|| {
        let e = &ref_arg(e, "experiment")?.0;
        let b = &ref_arg(b, "belief")?.0;
        check_pair(e, b)?;
        let policy: Policy = lift(str_arg(policy, "policy")?.parse())?;
        let out = out_arg(index, "index")?;
        let sel = lift(select_intervention(
            policy,
            b,
            &e.candidates,
            &e.costs,
            &e.risk,
            &e.params,
            seed,
        ))?;
        *out = sel.index;
        Ok(())
    })
}
