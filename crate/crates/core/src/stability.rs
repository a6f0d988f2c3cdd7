//! Stability and instability certificates.
//!
//! Below the critical rate the threshold policy keeps the queue bounded by an
//! explicit constant ([`queue_upper_bound`]). Above it, service-start states
//! that keep returning to the band `[x_L, x_U]` force the queue to grow at
//! least linearly in the task index ([`overload_lower_bound`]). A finite run
//! can only be judged against these certificates, so [`classify`] answers
//! stable, unstable, or inconclusive.

use std::fmt;

use crate::equilibrium::CriticalPoint;
use crate::error::{Error, Result};
use crate::numeric;
use crate::policy::PolicySpec;
use crate::service::{check_state, check_tau, ServiceProfile};
use crate::simulator::{growth_rate_estimate, GrowthFit, Trajectory, MIN_FIT_STARTS};

/// Relative slack when comparing an arrival rate with the critical rate.
pub const RATE_RTOL: f64 = 1e-12;
/// A threshold within this distance of `x_th` counts as the critical threshold.
pub const THRESHOLD_MATCH_TOL: f64 = 1e-9;
/// `ε_slope = SLOPE_EPS_SCALE / horizon_time`.
pub const SLOPE_EPS_SCALE: f64 = 10.0;

/// Constants of the instability certificate for a non-degenerate critical
/// point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityConstants {
    /// Lowest state reachable right after a service: `1 − e^{−S_min/τ}`.
    pub x_min: f64,
    /// Supremum of the states where `g` exceeds `1/λ_eq^max`.
    pub x_tilde: f64,
    pub x_l1: f64,
    pub x_l2: f64,
    /// Largest state with `S(x) = 1/λ_eq^max`.
    pub x_u1: f64,
    pub x_u2: f64,
    pub x_lower: f64,
    pub x_upper: f64,
    pub c1: f64,
    pub c2: f64,
    /// `c1 + c2 + S_max`.
    pub c: f64,
}

impl StabilityConstants {
    pub fn in_band(&self, x: f64) -> bool {
        (self.x_lower..=self.x_upper).contains(&x)
    }
}

/// `g(x) = S_min + τ·ln(x_min/x)`, a lower bound on the time between two
/// service starts whose second start lies below `x`. `g(0) = +∞`.
pub fn eval_g(x: f64, profile: &ServiceProfile, tau: f64) -> Result<f64> {
    check_state("x", x)?;
    check_tau(tau)?;
    if x == 0.0 {
        return Ok(f64::INFINITY);
    }
    let s_min = profile.s_min();
    let x_min = -(-s_min / tau).exp_m1();
    Ok(s_min + tau * (x_min / x).ln())
}

fn require_nondegenerate(critical: &CriticalPoint) -> Result<()> {
    if critical.degenerate {
        Err(Error::Degenerate {
            x_th: critical.x_th,
        })
    } else {
        Ok(())
    }
}

pub fn compute_constants(
    profile: &ServiceProfile,
    tau: f64,
    critical: &CriticalPoint,
) -> Result<StabilityConstants> {
    check_tau(tau)?;
    require_nondegenerate(critical)?;
    let period = 1.0 / critical.lambda_eq_max;
    let (s_min, s_max) = profile.extrema();

    let x_min = -(-s_min / tau).exp_m1();
    // g is strictly decreasing and solvable for g(x) = 1/λ in closed form
    let x_tilde = x_min * ((s_min - period) / tau).exp();
    let x_l1 = x_min.min(x_tilde);

    // S is convex with S(x_th) < 1/λ < S(1), so the level set ends inside (x_th, 1)
    let x_u1 = numeric::bisect_root(|x| profile.eval(x) - period, critical.x_th, 1.0)?;

    let decay = (-2.0 * period / tau).exp();
    let x_u2 = 1.0 - (1.0 - x_l1) * decay;
    let x_l2 = x_u2 * decay;
    let x_lower = x_l1.min(x_l2);
    let x_upper = (0.5 * (1.0 + x_u1)).max(x_u2);

    // log-space complement keeps c2 finite when x_upper rounds to 1
    let ln_gap_u1 = (0.5 * (1.0 - x_u1)).ln();
    let ln_gap_u2 = (-x_l1).ln_1p() - 2.0 * period / tau;
    let c1 = -tau * x_lower.ln();
    let c2 = -tau * ln_gap_u1.min(ln_gap_u2);

    if !(x_lower > 0.0 && c1.is_finite() && c2.is_finite() && x_lower < x_upper) {
        return Err(Error::Precondition(format!(
            "band [{x_lower}, {x_upper}] is not representable for tau = {tau}"
        )));
    }
    Ok(StabilityConstants {
        x_min,
        x_tilde,
        x_l1,
        x_l2,
        x_u1,
        x_u2,
        x_lower,
        x_upper,
        c1,
        c2,
        c: c1 + c2 + s_max,
    })
}

/// Bound on the queue length under the threshold policy at `x_th`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueBound {
    /// Queue length right after the first service start.
    pub n_t1: u64,
    /// `⌈(λ − 1/S_max)(−τ·ln(1 − x_th) + S_max)⌉` before flooring at zero.
    pub busy_increment: i64,
    /// `⌈−λτ·ln x_th⌉`.
    pub idle_increment: i64,
    pub bound: u64,
}

pub fn queue_upper_bound(
    profile: &ServiceProfile,
    tau: f64,
    lambda: f64,
    critical: &CriticalPoint,
    x0: f64,
    n0: u64,
) -> Result<QueueBound> {
    check_tau(tau)?;
    check_state("x0", x0)?;
    require_nondegenerate(critical)?;
    if lambda > critical.lambda_eq_max * (1.0 + RATE_RTOL) {
        return Err(Error::AboveCritical {
            lambda,
            lambda_eq_max: critical.lambda_eq_max,
        });
    }
    let x_th = critical.x_th;
    let s_max = profile.s_max();
    let n0 = n0 as i64;

    let mut n_t1 = 0.max(n0 - 1);
    if x0 > x_th {
        let waited = (lambda * tau * (x0 / x_th).ln()).floor() as i64;
        n_t1 = n_t1.max(n0 - 1 + waited);
    }
    let busy_increment = ((lambda - 1.0 / s_max) * (-tau * (-x_th).ln_1p() + s_max)).ceil() as i64;
    let idle_increment = (-lambda * tau * x_th.ln()).ceil() as i64;
    // the peak of a busy stretch is never below where it started
    let bound = n_t1 + busy_increment.max(0) + idle_increment;
    Ok(QueueBound {
        n_t1: n_t1 as u64,
        busy_increment,
        idle_increment,
        bound: bound as u64,
    })
}

/// Linear lower bound on the queue length at the `k`-th band visit:
/// `n1 − λc + (i_k − i_1)(λ/λ_eq^max − 1)`.
pub fn overload_lower_bound(
    constants: &StabilityConstants,
    lambda: f64,
    lambda_eq_max: f64,
    n1: u64,
    index_gap: u64,
) -> Result<f64> {
    if lambda <= lambda_eq_max {
        return Err(Error::NotAboveCritical {
            lambda,
            lambda_eq_max,
        });
    }
    Ok(n1 as f64 - lambda * constants.c + index_gap as f64 * (lambda / lambda_eq_max - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Numbers behind a [`Verdict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub service_starts: usize,
    pub max_queue: u64,
    pub horizon_time: f64,
    pub growth: Option<GrowthFit>,
    pub slope_eps: f64,
    /// Growth slope that certifies instability; only defined above the critical rate.
    pub unstable_slope: Option<f64>,
    /// Present when the run is a threshold-policy run at `x_th` at or below
    /// the critical rate.
    pub queue_bound: Option<QueueBound>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub verdict: Verdict,
    pub evidence: Evidence,
}

/// Judges a finished run against the certificates.
///
/// Fewer than [`MIN_FIT_STARTS`] service starts is always inconclusive.
/// Otherwise the run is unstable when above the critical rate with a fitted
/// growth slope of at least half the rate excess, stable when its maximum
/// queue respects the threshold-policy bound or its slope is below
/// `ε_slope = 10/horizon_time`, and inconclusive otherwise.
pub fn classify(
    trajectory: &Trajectory,
    profile: &ServiceProfile,
    critical: &CriticalPoint,
) -> Result<Classification> {
    let cfg = &trajectory.config;
    let summary = &trajectory.summary;
    let lambda = cfg.lambda;
    let lambda_eq_max = critical.lambda_eq_max;
    let horizon_time = summary.end_time;

    let at_critical_threshold = matches!(
        trajectory.policy,
        PolicySpec::Threshold { threshold } if (threshold - critical.x_th).abs() <= THRESHOLD_MATCH_TOL
    );
    let queue_bound = if at_critical_threshold
        && !critical.degenerate
        && lambda <= lambda_eq_max * (1.0 + RATE_RTOL)
    {
        Some(queue_upper_bound(
            profile, cfg.tau, lambda, critical, cfg.x0, cfg.n0,
        )?)
    } else {
        None
    };
    let unstable_slope = (lambda > lambda_eq_max * (1.0 + RATE_RTOL))
        .then(|| 0.5 * (lambda / lambda_eq_max - 1.0) * lambda_eq_max);

    let mut evidence = Evidence {
        service_starts: summary.service_starts.len(),
        max_queue: summary.max_queue,
        horizon_time,
        growth: None,
        slope_eps: if horizon_time > 0.0 {
            SLOPE_EPS_SCALE / horizon_time
        } else {
            f64::INFINITY
        },
        unstable_slope,
        queue_bound,
    };
    if evidence.service_starts < MIN_FIT_STARTS {
        return Ok(Classification {
            verdict: Verdict::Inconclusive,
            evidence,
        });
    }
    let growth = growth_rate_estimate(trajectory)?;
    evidence.growth = Some(growth);

    let verdict = if unstable_slope.is_some_and(|u| growth.slope >= u) {
        Verdict::Unstable
    } else if queue_bound.is_some_and(|b| summary.max_queue <= b.bound)
        || growth.slope <= evidence.slope_eps
    {
        Verdict::Stable
    } else {
        Verdict::Inconclusive
    };
    Ok(Classification { verdict, evidence })
}

/// Checks recorded service-start queue lengths against the linear overload
/// bound, anchored at the first service start inside `[x_L, x_U]`.
///
/// Returns `None` when no service start visits the band; otherwise the
/// number of band visits checked and the smallest slack `n_k − bound_k`.
pub fn check_overload_bound(
    trajectory: &Trajectory,
    constants: &StabilityConstants,
    lambda_eq_max: f64,
) -> Result<Option<OverloadCheck>> {
    let lambda = trajectory.config.lambda;
    let starts = &trajectory.summary.service_starts;
    let Some(first) = starts.iter().position(|s| constants.in_band(s.x)) else {
        return Ok(None);
    };
    let n1 = starts[first].n;
    let mut visits = 0usize;
    let mut min_slack = f64::INFINITY;
    for (i, s) in starts.iter().enumerate().skip(first) {
        if !constants.in_band(s.x) {
            continue;
        }
        let bound = overload_lower_bound(constants, lambda, lambda_eq_max, n1, (i - first) as u64)?;
        visits += 1;
        min_slack = min_slack.min(s.n as f64 - bound);
    }
    Ok(Some(OverloadCheck { visits, min_slack }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverloadCheck {
    pub visits: usize,
    pub min_slack: f64,
}

impl OverloadCheck {
    pub fn holds(&self) -> bool {
        self.min_slack >= 0.0
    }
}
