//! Bracketing routines shared by the solvers.
//!
//! All of them work on closed intervals and report exhausted iteration caps
//! as [`Error::NonConvergence`] instead of returning a truncated estimate.

use crate::error::{Error, Result};

/// Iteration cap for every bracketing loop in the crate.
pub const MAX_ITERATIONS: usize = 200;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the minimizer of a unimodal `f` on `[a, b]`.
///
/// Stops once the bracket is narrower than `tol`. Returns the final bracket
/// together with the best point seen.
pub fn golden_section<F>(mut f: F, a: f64, b: f64, tol: f64) -> Result<GoldenBracket>
where
    F: FnMut(f64) -> f64,
{
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..MAX_ITERATIONS {
        if hi - lo <= tol {
            let (x, fx) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
            return Ok(GoldenBracket { lo, hi, x, fx });
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    Err(Error::NonConvergence {
        routine: "golden-section search",
        iterations: MAX_ITERATIONS,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GoldenBracket {
    pub lo: f64,
    pub hi: f64,
    pub x: f64,
    pub fx: f64,
}

/// Smallest `x` in `[lo, hi]` where the monotone predicate `pred` turns true.
///
/// Requires `pred(lo) == false` and `pred(hi) == true`; bisects until the
/// bracket can no longer be split in `f64`. Returns the bracket `(lo, hi)`.
pub fn bisect_predicate<P>(mut pred: P, mut lo: f64, mut hi: f64) -> Result<(f64, f64)>
where
    P: FnMut(f64) -> bool,
{
    for _ in 0..MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok((lo, hi));
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::NonConvergence {
        routine: "bisection",
        iterations: MAX_ITERATIONS,
    })
}

/// Root of `f` on `[lo, hi]` given `f(lo)` and `f(hi)` of opposite sign (or
/// zero at an endpoint). Returns whichever end of the final bracket has the
/// smaller residual.
pub fn bisect_root<F>(mut f: F, lo: f64, hi: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Precondition(format!(
            "no sign change on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}"
        )));
    }
    let lo_negative = f_lo < 0.0;
    let (a, b) = bisect_predicate(|x| (f(x) < 0.0) != lo_negative, lo, hi)?;
    let (fa, fb) = (f(a), f(b));
    Ok(if fa.abs() <= fb.abs() { a } else { b })
}
