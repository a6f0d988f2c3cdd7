//! One-task equilibria and the critical arrival rate.
//!
//! With arrivals every `1/λ` and immediate release, a service that starts at
//! state `x` returns the server to `x` exactly when the next task arrives iff
//! `S(x) = R(x, τ, λ)`, where
//!
//! ```text
//! R(x, τ, λ) = τ·ln(1 − (1 − e^{1/(λτ)})·x)
//! ```
//!
//! is the return-time curve: strictly increasing, strictly concave in `x`,
//! with `R(0) = 0` and `R(1) = 1/λ`. The gap `G(x) = S(x) − R(x)` is
//! therefore strictly convex for every convex `S`, and the largest `λ` for
//! which `G` still touches zero is the critical rate `λ_eq^max(τ)`; the
//! touching point is the release threshold `x_th(τ)`.

use crate::error::{Error, Result};
use crate::numeric::{self, MAX_ITERATIONS};
use crate::service::{check_state, check_tau, ServiceProfile};

/// Accuracy of the gap minimizer.
pub const X_TOL: f64 = 1e-10;
/// Residual below which a gap minimum counts as a tangency (a single root).
pub const TANGENCY_TOL: f64 = 1e-10;
/// Relative accuracy promised for the critical rate.
pub const LAMBDA_RTOL: f64 = 1e-9;
/// `x_th ≥ 1 − DEGENERACY_MARGIN` flags the degenerate case.
pub const DEGENERACY_MARGIN: f64 = 1e-6;

/// Golden-section stopping width; the subgradient polish takes it from there.
const GOLDEN_TOL: f64 = 1e-7;
/// Slack added around the golden-section bracket before polishing.
const BRACKET_SLACK: f64 = 1e-6;

fn check_rate(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::domain("lambda", lambda, "(0, inf)"))
    }
}

/// `R(x, τ, λ)` without domain checks.
fn return_time_unchecked(x: f64, tau: f64, lambda: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let a = 1.0 / (lambda * tau);
    let k = a.exp_m1();
    if k.is_finite() {
        tau * (k * x).ln_1p()
    } else {
        // e^a overflows; factor it out of the log argument
        tau * (a + (x + (1.0 - x) * (-a).exp()).ln())
    }
}

/// `(∂R/∂x, ∂²R/∂x²)` without domain checks.
fn return_time_partials_unchecked(x: f64, tau: f64, lambda: f64) -> (f64, f64) {
    let inv_k = 1.0 / (1.0 / (lambda * tau)).exp_m1();
    let d1 = tau / (inv_k + x);
    (d1, -d1 * d1 / tau)
}

/// The return-time curve `R(x, τ, λ) = τ·ln(1 − (1 − e^{1/(λτ)})x)`.
pub fn return_time(x: f64, tau: f64, lambda: f64) -> Result<f64> {
    check_state("x", x)?;
    check_tau(tau)?;
    check_rate(lambda)?;
    Ok(return_time_unchecked(x, tau, lambda))
}

/// First and second partial derivatives of [`return_time`] in `x`.
pub fn return_time_partials(x: f64, tau: f64, lambda: f64) -> Result<(f64, f64)> {
    check_state("x", x)?;
    check_tau(tau)?;
    check_rate(lambda)?;
    Ok(return_time_partials_unchecked(x, tau, lambda))
}

fn gap(profile: &ServiceProfile, tau: f64, lambda: f64, x: f64) -> f64 {
    profile.eval(x) - return_time_unchecked(x, tau, lambda)
}

/// Minimum of the gap `G(x) = S(x) − R(x, τ, λ)` over `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapMinimum {
    pub x_star: f64,
    pub value: f64,
}

/// Minimizes the strictly convex gap `S − R` on `[0, 1]`.
///
/// A golden-section pass brackets the minimizer; the bracket is then refined
/// by bisecting on the sign of the right derivative `S'(x⁺) − ∂R/∂x`, which
/// resolves the minimizer far below the `√ε` limit of comparing function
/// values near a flat minimum.
pub fn gap_minimum(profile: &ServiceProfile, tau: f64, lambda: f64) -> Result<GapMinimum> {
    check_tau(tau)?;
    check_rate(lambda)?;
    let g = |x: f64| gap(profile, tau, lambda, x);
    let right_slope =
        |x: f64| profile.slope_right(x) - return_time_partials_unchecked(x, tau, lambda).0;
    let left_slope_at_one =
        profile.slope_left(1.0) - return_time_partials_unchecked(1.0, tau, lambda).0;

    let x_star = if right_slope(0.0) >= 0.0 {
        0.0
    } else if left_slope_at_one <= 0.0 {
        1.0
    } else {
        let bracket = numeric::golden_section(g, 0.0, 1.0, GOLDEN_TOL)?;
        let mut lo = (bracket.lo - BRACKET_SLACK).max(0.0);
        let mut hi = (bracket.hi + BRACKET_SLACK).min(1.0);
        if right_slope(lo) >= 0.0 {
            lo = 0.0;
        }
        if right_slope(hi) < 0.0 {
            hi = 1.0;
        }
        let (a, b) = numeric::bisect_predicate(|x| right_slope(x) >= 0.0, lo, hi)?;
        if b - a > X_TOL {
            return Err(Error::NonConvergence {
                routine: "gap minimization",
                iterations: MAX_ITERATIONS,
            });
        }
        if g(a) < g(b) {
            a
        } else {
            b
        }
    };
    Ok(GapMinimum {
        x_star,
        value: g(x_star),
    })
}

/// One-task equilibrium states at a given arrival rate, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSet {
    pub lambda: f64,
    pub roots: Vec<f64>,
}

impl EquilibriumSet {
    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}

/// Solutions of `S(x) = R(x, τ, λ)` in `[0, 1]`: none, a tangency, or the two
/// sign changes on either side of the gap minimizer.
pub fn equilibrium_states(
    profile: &ServiceProfile,
    tau: f64,
    lambda: f64,
) -> Result<EquilibriumSet> {
    let min = gap_minimum(profile, tau, lambda)?;
    let g = |x: f64| gap(profile, tau, lambda, x);
    let roots = if min.value > TANGENCY_TOL {
        Vec::new()
    } else if min.value >= -TANGENCY_TOL {
        vec![min.x_star]
    } else {
        let mut roots = vec![numeric::bisect_root(g, 0.0, min.x_star)?];
        let at_one = g(1.0);
        if at_one > 0.0 {
            roots.push(numeric::bisect_root(g, min.x_star, 1.0)?);
        } else if at_one == 0.0 {
            roots.push(1.0);
        }
        roots
    };
    Ok(EquilibriumSet { lambda, roots })
}

/// The critical rate `λ_eq^max(τ)` and its threshold state `x_th(τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub tau: f64,
    pub lambda_eq_max: f64,
    pub x_th: f64,
    /// `x_th` sits at the right end of `[0, 1]`; the tangency picture fails.
    pub degenerate: bool,
    /// `S(x_th) − R(x_th, τ, λ_eq^max)`.
    pub gap_at_min: f64,
}

/// Critical rate by bisection on `λ ↦ min_x G(x; λ)`, which is continuous and
/// strictly increasing on `[1/S_max, 1/S_min]`.
///
/// Returns the largest bisection iterate whose gap minimum is still `≤ 0`,
/// so an equilibrium exists at the reported rate.
pub fn critical_rate(profile: &ServiceProfile, tau: f64) -> Result<CriticalPoint> {
    check_tau(tau)?;
    let (s_min, s_max) = profile.extrema();
    let mut lo = 1.0 / s_max;
    let mut hi = 1.0 / s_min;
    let mut at_lo = gap_minimum(profile, tau, lo)?;

    if at_lo.value <= 0.0 && lo < hi {
        let at_hi = gap_minimum(profile, tau, hi)?;
        if at_hi.value <= 0.0 {
            lo = hi;
            at_lo = at_hi;
        } else {
            let mut converged = false;
            for _ in 0..MAX_ITERATIONS {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    converged = true;
                    break;
                }
                let at_mid = gap_minimum(profile, tau, mid)?;
                if at_mid.value > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    at_lo = at_mid;
                }
            }
            if !converged && hi - lo > LAMBDA_RTOL * hi {
                return Err(Error::NonConvergence {
                    routine: "critical-rate bisection",
                    iterations: MAX_ITERATIONS,
                });
            }
        }
    }

    Ok(CriticalPoint {
        tau,
        lambda_eq_max: lo,
        x_th: at_lo.x_star,
        degenerate: at_lo.x_star >= 1.0 - DEGENERACY_MARGIN,
        gap_at_min: at_lo.value,
    })
}

/// Time to serve one task from `x` immediately and idle back down to `x`:
/// `S(x) + τ·ln(x'/x)` with `x'` the post-service state. Infinite at `x = 0`.
pub fn one_task_cycle_time(profile: &ServiceProfile, tau: f64, x: f64) -> Result<f64> {
    check_state("x", x)?;
    check_tau(tau)?;
    if x == 0.0 {
        return Ok(f64::INFINITY);
    }
    let s = profile.eval(x);
    // x'/x = 1 + (1 − x)(1 − e^{−S/τ})/x
    let rise = -(-s / tau).exp_m1();
    Ok(s + tau * ((1.0 - x) * rise / x).ln_1p())
}

/// Thresholds `[x_eq¹, x_eq²]` that keep the queue stable for every arrival
/// rate up to `λ'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdInterval {
    pub lower: f64,
    pub upper: f64,
}

impl ThresholdInterval {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

pub fn stabilizing_threshold_interval(
    profile: &ServiceProfile,
    tau: f64,
    lambda_prime: f64,
) -> Result<ThresholdInterval> {
    check_rate(lambda_prime)?;
    let critical = critical_rate(profile, tau)?;
    let above = Error::AboveCritical {
        lambda: lambda_prime,
        lambda_eq_max: critical.lambda_eq_max,
    };
    if lambda_prime > critical.lambda_eq_max * (1.0 + 1e-12) {
        return Err(above);
    }
    if lambda_prime >= critical.lambda_eq_max {
        return Ok(ThresholdInterval {
            lower: critical.x_th,
            upper: critical.x_th,
        });
    }
    let set = equilibrium_states(profile, tau, lambda_prime)?;
    match (set.roots.first(), set.roots.last()) {
        (Some(&lower), Some(&upper)) => Ok(ThresholdInterval { lower, upper }),
        _ => Err(above),
    }
}
