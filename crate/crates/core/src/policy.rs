//! Task release control policies.
//!
//! A policy is an ON/OFF gate in front of the server: a waiting task is
//! handed over only when the server is idle and the gate is ON. Both
//! policies here are pure functions of the current server state.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::service::{check_state, check_tau, idle_update};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    /// Release whenever the server is idle.
    AlwaysOn,
    /// Release only while `x ≤ threshold`.
    Threshold { threshold: f64 },
}

impl PolicySpec {
    pub fn threshold(threshold: f64) -> Result<Self> {
        if threshold > 0.0 && threshold <= 1.0 {
            Ok(PolicySpec::Threshold { threshold })
        } else {
            Err(Error::domain("threshold", threshold, "(0, 1]"))
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PolicySpec::AlwaysOn => Ok(()),
            PolicySpec::Threshold { threshold } => Self::threshold(threshold).map(|_| ()),
        }
    }

    pub fn threshold_value(&self) -> Option<f64> {
        match *self {
            PolicySpec::AlwaysOn => None,
            PolicySpec::Threshold { threshold } => Some(threshold),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::AlwaysOn => f.write_str("always_on"),
            PolicySpec::Threshold { threshold } => write!(f, "threshold({threshold})"),
        }
    }
}

/// Gate position at state `x`. The threshold comparison is inclusive.
pub fn decide(policy: &PolicySpec, x: f64) -> Gate {
    match *policy {
        PolicySpec::AlwaysOn => Gate::On,
        PolicySpec::Threshold { threshold } if x <= threshold => Gate::On,
        PolicySpec::Threshold { .. } => Gate::Off,
    }
}

/// Idle time until the gate first opens for a server decaying from `x`:
/// zero if it is already open, otherwise `τ·ln(x/threshold)`.
///
/// The result is nudged up by whole ulps if rounding would leave the decayed
/// state just above the threshold.
pub fn earliest_release_delay(policy: &PolicySpec, x: f64, tau: f64) -> Result<f64> {
    check_state("x", x)?;
    check_tau(tau)?;
    let threshold = match (decide(policy, x), *policy) {
        (Gate::On, _) | (_, PolicySpec::AlwaysOn) => return Ok(0.0),
        (Gate::Off, PolicySpec::Threshold { threshold }) => threshold,
    };
    let mut delay = tau * (x / threshold).ln();
    for _ in 0..8 {
        if idle_update(x, delay, tau)? <= threshold {
            break;
        }
        delay = delay.next_up();
    }
    Ok(delay)
}
