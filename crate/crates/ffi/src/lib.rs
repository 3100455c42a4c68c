//! C ABI over `emphasis-core`.
//!
//! Every function returns an [`EmStatus`]; outputs go through pointer
//! arguments. After a non-`Ok` status, [`em_last_error`] copies a message for
//! the calling thread. User models are opaque handles created by
//! [`em_user_model_load`] and released with [`em_user_model_free`].
//!
//! Emphasis patterns cross the boundary as a bit code: BULL = 4, NEUTRAL = 2,
//! BEAR = 1.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use emphasis_core::market_data::PriceSeries;
use emphasis_core::policy::{naive_decide, oracle_decide, NaiveVariant};
use emphasis_core::selector::{argmin_pattern, baseline_select, enumerate_patterns, expected_gap, select_emphasis, PatternScore, StrategyKind};
use emphasis_core::sim::{apply_order, load_jsonl, PortfolioState};
use emphasis_core::user_model::{build_sequences, UserModel};
use emphasis_core::{AdvisorDecision, ClassProbabilities, DecisionDistribution, EmphasisPattern, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of positions in a decision distribution (0, 100, ..., 500 shares).
pub const EM_NUM_POSITIONS: usize = 6;
/// Number of admissible emphasis patterns.
pub const EM_NUM_PATTERNS: usize = 7;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    NotFound = 4,
    Rejected = 5,
    Io = 6,
    Parse = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmBaseline {
    Flat = 0,
    Argmax = 1,
    Roulette = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmNaive {
    Top1 = 0,
    Top2 = 1,
}

/// Opaque trained user model.
pub struct EmUserModel(UserModel);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> EmStatus {
    match e {
        Error::Validation(_) | Error::Parameter(_) | Error::Config(_) | Error::Conflict(_) => EmStatus::InvalidArgument,
        Error::OutOfRange(_) | Error::WindowNotFound { .. } => EmStatus::OutOfRange,
        Error::NotFound(_) => EmStatus::NotFound,
        Error::RejectedOrder(_) => EmStatus::Rejected,
        Error::Io { .. } => EmStatus::Io,
        Error::Parse { .. } | Error::Json(_) => EmStatus::Parse,
        Error::Divergence { .. } => EmStatus::Internal,
    }
}

struct Fail(EmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EmStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    ptr.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_path<'a>(ptr: *const c_char, what: &str) -> Result<&'a Path, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Fail(EmStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn probs3(ptr: *const f64) -> Result<ClassProbabilities, Fail> {
    let p = slice(ptr, 3, "probabilities")?;
    Ok(ClassProbabilities::new(p[0], p[1], p[2])?)
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn em_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn em_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Σ P(d) |d − d_ai| over the six positions.
///
/// # Safety
/// `probs` must point to 6 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn em_expected_gap(probs: *const f64, d_ai: f64, out_gap: *mut f64) -> EmStatus {
    guard(|| {
        let p = slice(probs, EM_NUM_POSITIONS, "probs")?;
        let mut arr = [0.0; EM_NUM_POSITIONS];
        arr.copy_from_slice(p);
        let gap = expected_gap(&DecisionDistribution::new(arr)?, AdvisorDecision::new(d_ai)?);
        *out(out_gap, "out_gap")? = gap;
        Ok(())
    })
}

/// Writes the 7 admissible pattern codes in enumeration order.
///
/// # Safety
/// `out_codes` must be writable for `capacity` bytes; `out_count` writable.
#[no_mangle]
pub unsafe extern "C" fn em_enumerate_patterns(out_codes: *mut u8, capacity: usize, out_count: *mut usize) -> EmStatus {
    guard(|| {
        let patterns = enumerate_patterns();
        *out(out_count, "out_count")? = patterns.len();
        if capacity < patterns.len() {
            return Err(Fail(
                EmStatus::BufferTooSmall,
                format!("need {} slots, got {capacity}", patterns.len()),
            ));
        }
        if out_codes.is_null() {
            return Err(null("out_codes"));
        }
        for (i, p) in patterns.iter().enumerate() {
            *out_codes.add(i) = p.bits();
        }
        Ok(())
    })
}

/// Chooses among the 7 patterns given each pattern's predicted decision
/// distribution (7 × 6 doubles in enumeration order), with the library's tie
/// rule.
///
/// # Safety
/// `dists` must point to 42 doubles; outputs must be writable (`out_gap` may be null).
#[no_mangle]
pub unsafe extern "C" fn em_select_from_distributions(
    dists: *const f64,
    d_ai: f64,
    out_code: *mut u8,
    out_gap: *mut f64,
) -> EmStatus {
    guard(|| {
        let all = slice(dists, EM_NUM_PATTERNS * EM_NUM_POSITIONS, "dists")?;
        let d_ai = AdvisorDecision::new(d_ai)?;
        let scores = enumerate_patterns()
            .into_iter()
            .zip(all.chunks_exact(EM_NUM_POSITIONS))
            .map(|(pattern, chunk)| {
                let mut arr = [0.0; EM_NUM_POSITIONS];
                arr.copy_from_slice(chunk);
                let distribution = DecisionDistribution::new(arr)?;
                Ok(PatternScore {
                    pattern,
                    expected_gap: expected_gap(&distribution, d_ai),
                    distribution,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        let chosen = argmin_pattern(&scores).expect("seven scores");
        *out(out_code, "out_code")? = chosen.bits();
        if let Some(g) = out_gap.as_mut() {
            *g = scores.iter().find(|s| s.pattern == chosen).expect("chosen is scored").expected_gap;
        }
        Ok(())
    })
}

/// Loads a user model saved as JSON.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn em_user_model_load(path: *const c_char, out_model: *mut *mut EmUserModel) -> EmStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let model = UserModel::load(c_path(path, "path")?)?;
        *slot = Box::into_raw(Box::new(EmUserModel(model)));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`em_user_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn em_user_model_free(model: *mut EmUserModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the selector for `day` of an episode log (JSONL), with earlier days
/// as history. `d_ai < 0` uses the logged advisor decision.
///
/// # Safety
/// `model` must be a live handle, `log_path` NUL-terminated, outputs writable
/// (`out_gap` may be null).
#[no_mangle]
pub unsafe extern "C" fn em_user_model_select(
    model: *const EmUserModel,
    log_path: *const c_char,
    day: usize,
    d_ai: f64,
    out_code: *mut u8,
    out_gap: *mut f64,
) -> EmStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let records = load_jsonl(c_path(log_path, "log_path")?)?;
        let idx = records
            .iter()
            .position(|r| r.day == day)
            .ok_or_else(|| Fail(EmStatus::NotFound, format!("day {day} not in log")))?;
        let d_ai = AdvisorDecision::new(if d_ai < 0.0 { records[idx].d_ai } else { d_ai })?;
        let mut seq = build_sequences(&[records[..=idx].to_vec()], &model.embedder())?;
        let seq = seq.pop().ok_or_else(|| Fail(EmStatus::InvalidArgument, "empty log".into()))?;
        let (current, history) = seq.days.split_last().expect("non-empty sequence");
        let result = select_emphasis(model, history, &current.input, d_ai)?;
        *out(out_code, "out_code")? = result.chosen.bits();
        if let Some(g) = out_gap.as_mut() {
            *g = result
                .scores
                .iter()
                .find(|s| s.pattern == result.chosen)
                .expect("chosen is scored")
                .expected_gap;
        }
        Ok(())
    })
}

/// 500 shares if `closes[t + 1] > closes[t]`, else 0.
///
/// # Safety
/// `closes` must point to `len` doubles; `out_shares` writable.
#[no_mangle]
pub unsafe extern "C" fn em_oracle_decide(closes: *const f64, len: usize, t: usize, out_shares: *mut f64) -> EmStatus {
    guard(|| {
        let series = PriceSeries::from_closes(slice(closes, len, "closes")?, "ffi")?;
        *out(out_shares, "out_shares")? = oracle_decide(&series, t)?.shares();
        Ok(())
    })
}

/// Naive policy from today's BULL/NEUTRAL/BEAR probabilities.
///
/// # Safety
/// `probs` must point to 3 doubles; `out_shares` writable.
#[no_mangle]
pub unsafe extern "C" fn em_naive_decide(probs: *const f64, variant: EmNaive, out_shares: *mut f64) -> EmStatus {
    guard(|| {
        let p = probs3(probs)?;
        let v = match variant {
            EmNaive::Top1 => NaiveVariant::Top1,
            EmNaive::Top2 => NaiveVariant::Top2,
        };
        *out(out_shares, "out_shares")? = naive_decide(&p, v).shares();
        Ok(())
    })
}

/// Baseline emphasis pattern; ROULETTE draws from a generator seeded with `seed`.
///
/// # Safety
/// `probs` must point to 3 doubles; `out_code` writable.
#[no_mangle]
pub unsafe extern "C" fn em_baseline_select(kind: EmBaseline, probs: *const f64, seed: u64, out_code: *mut u8) -> EmStatus {
    guard(|| {
        let p = probs3(probs)?;
        let kind = match kind {
            EmBaseline::Flat => StrategyKind::Flat,
            EmBaseline::Argmax => StrategyKind::Argmax,
            EmBaseline::Roulette => StrategyKind::Roulette,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pattern: EmphasisPattern = baseline_select(kind, &p, &mut rng)?;
        *out(out_code, "out_code")? = pattern.bits();
        Ok(())
    })
}

/// Moves the account to `target` shares at `price`. An unaffordable order
/// returns `Rejected` and leaves the outputs untouched.
///
/// # Safety
/// `cash` and `position` must be valid for reads and writes.
#[no_mangle]
pub unsafe extern "C" fn em_apply_order(cash: *mut f64, position: *mut u32, price: f64, target: u32) -> EmStatus {
    guard(|| {
        let c = out(cash, "cash")?;
        let pos = out(position, "position")?;
        let state = PortfolioState {
            cash: *c,
            position: *pos,
            last_price: price,
        };
        let after = apply_order(&state, target, price)?;
        *c = after.cash;
        *pos = after.position;
        Ok(())
    })
}
