//! C ABI over the rank schedule and the SVD-partitioned (factored) layer.
//!
//! Conventions:
//! - Handles are opaque pointers created by `*_new` and released by `*_free`.
//! - Functions return a `DriftStatus` code; `0` is success.
//! - On failure, `drift_last_error()` returns a thread-local message valid
//!   until the next failing call on the same thread.
//! - Passing a null handle returns `DRIFT_STATUS_NULL_ARG`; passing a freed
//!   handle is undefined behavior, as usual for C APIs.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use drift_core::lowrank::{svd_partition, FactoredMatrix};
use drift_core::numerics::Array;
use drift_core::schedule::{DecayKind, RankSchedule};
use drift_core::DriftError;

/// Status codes shared by every fallible function.
pub const DRIFT_STATUS_OK: i32 = 0;
pub const DRIFT_STATUS_ERR: i32 = 1;
pub const DRIFT_STATUS_CONFIG: i32 = 2;
pub const DRIFT_STATUS_NULL_ARG: i32 = 5;
pub const DRIFT_STATUS_PANIC: i32 = 6;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &DriftError) -> i32 {
    match err {
        DriftError::Config(_) => DRIFT_STATUS_CONFIG,
        _ => DRIFT_STATUS_ERR,
    }
}

fn guard(f: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            DRIFT_STATUS_PANIC
        }
    }
}

/// Last error message for this thread, or an empty string. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn drift_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opaque rank-decay schedule.
pub struct DriftSchedule(RankSchedule);

/// Opaque SVD-partitioned matrix (trainable top block, frozen complement).
pub struct DriftFactored(FactoredMatrix);

fn decay_kind(kind: u32) -> Option<DecayKind> {
    Some(match kind {
        0 => DecayKind::Linear,
        1 => DecayKind::Cosine,
        2 => DecayKind::Sigmoid,
        3 => DecayKind::Exponential,
        _ => return None,
    })
}

/// Create a schedule. `kind`: 0 linear, 1 cosine, 2 sigmoid, 3 exponential.
/// Returns null on invalid arguments (see `drift_last_error`).
#[no_mangle]
pub extern "C" fn drift_schedule_new(
    kind: u32,
    r_max: u32,
    r_min: u32,
    total_epochs: u32,
    tau: f64,
) -> *mut DriftSchedule {
    let mut out = std::ptr::null_mut();
    guard(|| {
        let Some(k) = decay_kind(kind) else {
            set_error("kind must be 0..=3");
            return DRIFT_STATUS_CONFIG;
        };
        match RankSchedule::new(k, r_max, r_min, total_epochs) {
            Ok(s) => {
                out = Box::into_raw(Box::new(DriftSchedule(s.with_tau(tau))));
                DRIFT_STATUS_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    });
    out
}

/// Trainable rank at epoch `i` (clamped to the schedule's floor past the end).
#[no_mangle]
pub extern "C" fn drift_schedule_rank_at(
    s: *const DriftSchedule,
    epoch: u32,
    rank_out: *mut u32,
) -> i32 {
    guard(|| {
        if s.is_null() || rank_out.is_null() {
            set_error("null argument");
            return DRIFT_STATUS_NULL_ARG;
        }
        let r = unsafe { &(*s).0 }.rank_at(epoch);
        unsafe { *rank_out = r };
        DRIFT_STATUS_OK
    })
}

#[no_mangle]
pub extern "C" fn drift_schedule_free(s: *mut DriftSchedule) {
    if !s.is_null() {
        drop(unsafe { Box::from_raw(s) });
    }
}

/// Create a factored matrix from a Gaussian-initialized `rows x cols` weight
/// with `rank` trainable directions. Returns null on invalid arguments.
#[no_mangle]
pub extern "C" fn drift_factored_new(
    rows: usize,
    cols: usize,
    rank: usize,
    seed: u64,
) -> *mut DriftFactored {
    let mut out = std::ptr::null_mut();
    guard(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Array::randn(&[rows, cols], &mut rng);
        match svd_partition(&w, rank, "ffi") {
            Ok(f) => {
                out = Box::into_raw(Box::new(DriftFactored(f)));
                DRIFT_STATUS_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    });
    out
}

/// Full rank of the underlying matrix (min of its dimensions).
#[no_mangle]
pub extern "C" fn drift_factored_full_rank(f: *const DriftFactored, out: *mut usize) -> i32 {
    guard(|| {
        if f.is_null() || out.is_null() {
            set_error("null argument");
            return DRIFT_STATUS_NULL_ARG;
        }
        unsafe { *out = (*f).0.p() };
        DRIFT_STATUS_OK
    })
}

/// Shrink the trainable block to `rank` without re-running the SVD.
#[no_mangle]
pub extern "C" fn drift_factored_set_rank(f: *mut DriftFactored, rank: usize) -> i32 {
    guard(|| {
        if f.is_null() {
            set_error("null argument");
            return DRIFT_STATUS_NULL_ARG;
        }
        match unsafe { &mut (*f).0 }.set_trainable_rank(rank) {
            Ok(()) => DRIFT_STATUS_OK,
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Re-run the SVD partition of the merged weight at a new trainable rank.
#[no_mangle]
pub extern "C" fn drift_factored_repartition(f: *mut DriftFactored, rank: usize) -> i32 {
    guard(|| {
        if f.is_null() {
            set_error("null argument");
            return DRIFT_STATUS_NULL_ARG;
        }
        match unsafe { &mut (*f).0 }.repartition(rank) {
            Ok(()) => DRIFT_STATUS_OK,
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Number of scalars in the trainable factors at the current rank.
#[no_mangle]
pub extern "C" fn drift_factored_trainable_params(
    f: *const DriftFactored,
    out: *mut usize,
) -> i32 {
    guard(|| {
        if f.is_null() || out.is_null() {
            set_error("null argument");
            return DRIFT_STATUS_NULL_ARG;
        }
        unsafe { *out = (*f).0.trainable_param_count() };
        DRIFT_STATUS_OK
    })
}

/// Copy the merged `rows x cols` weight (row-major) into `out`, which must
/// hold `len >= rows * cols` doubles.
#[no_mangle]
pub extern "C" fn drift_factored_merge(f: *const DriftFactored, out: *mut f64, len: usize) -> i32 {
    guard(|| {
        if f.is_null() || out.is_null() {
            set_error("null argument");
            return DRIFT_STATUS_NULL_ARG;
        }
        let merged = unsafe { &(*f).0 }.merge();
        let data = merged.data();
        if len < data.len() {
            set_error("output buffer too small");
            return DRIFT_STATUS_CONFIG;
        }
        unsafe { std::ptr::copy_nonoverlapping(data.as_ptr(), out, data.len()) };
        DRIFT_STATUS_OK
    })
}

#[no_mangle]
pub extern "C" fn drift_factored_free(f: *mut DriftFactored) {
    if !f.is_null() {
        drop(unsafe { Box::from_raw(f) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_round_trip_through_the_c_api() {
        let s = drift_schedule_new(2, 96, 8, 30, 0.5);
        assert!(!s.is_null());
        let mut r = 0u32;
        assert_eq!(drift_schedule_rank_at(s, 0, &mut r), DRIFT_STATUS_OK);
        assert!(r <= 96 && r >= 8);
        assert_eq!(drift_schedule_rank_at(s, 30, &mut r), DRIFT_STATUS_OK);
        assert_eq!(r, 8);
        drift_schedule_free(s);
    }

    #[test]
    fn invalid_schedule_args_set_an_error() {
        let s = drift_schedule_new(9, 96, 8, 30, 0.5);
        assert!(s.is_null());
        let msg = unsafe { std::ffi::CStr::from_ptr(drift_last_error()) };
        assert!(msg.to_str().unwrap().contains("kind"));
    }

    #[test]
    fn factored_merge_is_stable_under_rank_change() {
        let f = drift_factored_new(12, 7, 7, 3);
        assert!(!f.is_null());
        let mut buf_a = vec![0.0; 12 * 7];
        assert_eq!(drift_factored_merge(f, buf_a.as_mut_ptr(), buf_a.len()), 0);
        assert_eq!(drift_factored_set_rank(f, 3), DRIFT_STATUS_OK);
        let mut buf_b = vec![0.0; 12 * 7];
        assert_eq!(drift_factored_merge(f, buf_b.as_mut_ptr(), buf_b.len()), 0);
        for (a, b) in buf_a.iter().zip(&buf_b) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut p = 0usize;
        assert_eq!(drift_factored_trainable_params(f, &mut p), 0);
        assert_eq!(p, 3 * (12 + 7 + 1));
        drift_factored_free(f);
    }

    #[test]
    fn null_handles_are_rejected() {
        let mut r = 0u32;
        assert_eq!(
            drift_schedule_rank_at(std::ptr::null(), 0, &mut r),
            DRIFT_STATUS_NULL_ARG
        );
        assert_eq!(
            drift_factored_set_rank(std::ptr::null_mut(), 1),
            DRIFT_STATUS_NULL_ARG
        );
        let mut small = [0.0f64; 1];
        let f = drift_factored_new(4, 4, 2, 0);
        assert_eq!(
            drift_factored_merge(f, small.as_mut_ptr(), 1),
            DRIFT_STATUS_CONFIG
        );
        drift_factored_free(f);
    }
}
