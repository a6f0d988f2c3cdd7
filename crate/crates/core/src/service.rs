//! Service-time maps and the server's closed-form state evolution.
//!
//! The server state `x ∈ [0, 1]` follows `ẋ = (b − x)/τ`: it relaxes towards 1
//! while the server is busy and decays towards 0 while it idles. A task
//! started at state `x` takes `S(x)` time units, where `S` is a positive,
//! continuous, convex map drawn from one of a few parametric families.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rounding slack tolerated before a state outside `[0, 1]` is treated as a bug.
pub const STATE_TOLERANCE: f64 = 1e-12;

/// Points of the uniform grid used to double-check positivity.
const VALIDATION_GRID: usize = 1001;

/// Relative slack used when comparing consecutive piecewise-linear slopes.
const SLOPE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Constant,
    Affine,
    Quadratic,
    #[serde(alias = "piecewise-linear")]
    PiecewiseLinear,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Constant => "constant",
            Family::Affine => "affine",
            Family::Quadratic => "quadratic",
            Family::PiecewiseLinear => "piecewise_linear",
        })
    }
}

/// Unvalidated profile description, as it appears in configuration files.
///
/// Parameter order per family:
/// - constant `[s]`
/// - affine `[a, b]` for `a·x + b`
/// - quadratic `[a, c, s0]` for `s0 + a(x − c)²`
/// - piecewise-linear `[x0, y0, x1, y1, ...]` with strictly increasing
///   breakpoints from 0 to 1
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub family: Family,
    pub params: Vec<f64>,
}

impl ProfileSpec {
    pub fn new(family: Family, params: impl Into<Vec<f64>>) -> Self {
        ProfileSpec {
            family,
            params: params.into(),
        }
    }
}

/// One failed modelling assumption.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ParameterCount { expected: String, got: usize },
    NonFinite { index: usize, value: f64 },
    NotPositive { x: f64, value: f64 },
    NotConvex { detail: String },
    Breakpoints { detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ParameterCount { expected, got } => {
                write!(f, "expected {expected} parameters, got {got}")
            }
            Violation::NonFinite { index, value } => {
                write!(f, "parameter {index} is not finite ({value})")
            }
            Violation::NotPositive { x, value } => {
                write!(f, "positivity fails: S({x}) = {value}")
            }
            Violation::NotConvex { detail } => write!(f, "convexity fails: {detail}"),
            Violation::Breakpoints { detail } => write!(f, "breakpoints: {detail}"),
        }
    }
}

/// Outcome of [`validate_profile`]; empty means every assumption holds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Constant { s: f64 },
    Affine { a: f64, b: f64 },
    Quadratic { a: f64, c: f64, s0: f64 },
    PiecewiseLinear { xs: Vec<f64>, ys: Vec<f64> },
}

impl Shape {
    fn eval(&self, x: f64) -> f64 {
        match self {
            Shape::Constant { s } => *s,
            Shape::Affine { a, b } => a * x + b,
            Shape::Quadratic { a, c, s0 } => s0 + a * (x - c) * (x - c),
            Shape::PiecewiseLinear { xs, ys } => {
                let i = segment_index(xs, x);
                let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
                ys[i] + w * (ys[i + 1] - ys[i])
            }
        }
    }

    fn minimum(&self) -> f64 {
        match self {
            Shape::Constant { s } => *s,
            Shape::Affine { a, b } => b.min(a + b),
            Shape::Quadratic { c, .. } => self.eval(c.clamp(0.0, 1.0)),
            Shape::PiecewiseLinear { ys, .. } => ys.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Index `i` of the segment `[xs[i], xs[i+1]]` containing `x`, preferring the
/// segment to the right of a breakpoint.
fn segment_index(xs: &[f64], x: f64) -> usize {
    let upper = xs.partition_point(|&b| b <= x);
    upper.clamp(1, xs.len() - 1) - 1
}

fn parse_shape(spec: &ProfileSpec, violations: &mut Vec<Violation>) -> Option<Shape> {
    let p = &spec.params;
    for (index, &value) in p.iter().enumerate() {
        if !value.is_finite() {
            violations.push(Violation::NonFinite { index, value });
        }
    }
    let count = |expected: &str| Violation::ParameterCount {
        expected: expected.to_string(),
        got: p.len(),
    };
    let shape = match spec.family {
        Family::Constant if p.len() == 1 => Shape::Constant { s: p[0] },
        Family::Affine if p.len() == 2 => Shape::Affine { a: p[0], b: p[1] },
        Family::Quadratic if p.len() == 3 => Shape::Quadratic {
            a: p[0],
            c: p[1],
            s0: p[2],
        },
        Family::PiecewiseLinear if p.len() >= 4 && p.len().is_multiple_of(2) => {
            Shape::PiecewiseLinear {
                xs: p.iter().step_by(2).copied().collect(),
                ys: p.iter().skip(1).step_by(2).copied().collect(),
            }
        }
        Family::Constant => {
            violations.push(count("1"));
            return None;
        }
        Family::Affine => {
            violations.push(count("2"));
            return None;
        }
        Family::Quadratic => {
            violations.push(count("3"));
            return None;
        }
        Family::PiecewiseLinear => {
            violations.push(count("an even number >= 4 of"));
            return None;
        }
    };
    if violations.is_empty() {
        Some(shape)
    } else {
        None
    }
}

fn check_shape(shape: &Shape, violations: &mut Vec<Violation>) {
    match shape {
        Shape::Quadratic { a, .. } if *a < 0.0 => violations.push(Violation::NotConvex {
            detail: format!("leading coefficient {a} is negative"),
        }),
        Shape::PiecewiseLinear { xs, ys } => {
            if xs[0] != 0.0 || xs[xs.len() - 1] != 1.0 {
                violations.push(Violation::Breakpoints {
                    detail: format!(
                        "breakpoints must span [0, 1], got [{}, {}]",
                        xs[0],
                        xs[xs.len() - 1]
                    ),
                });
            }
            if let Some(w) = xs.windows(2).position(|w| w[1] <= w[0]) {
                violations.push(Violation::Breakpoints {
                    detail: format!(
                        "breakpoints not strictly increasing at index {}: {} then {}",
                        w,
                        xs[w],
                        xs[w + 1]
                    ),
                });
                return;
            }
            let slopes: Vec<f64> = (0..xs.len() - 1)
                .map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))
                .collect();
            for (i, w) in slopes.windows(2).enumerate() {
                let slack = SLOPE_TOLERANCE * w[0].abs().max(w[1].abs()).max(1.0);
                if w[1] < w[0] - slack {
                    violations.push(Violation::NotConvex {
                        detail: format!(
                            "slope decreases at breakpoint {}: {} then {}",
                            i + 1,
                            w[0],
                            w[1]
                        ),
                    });
                }
            }
        }
        _ => {}
    }
    if !violations.is_empty() {
        return;
    }
    let s_min = shape.minimum();
    if s_min <= 0.0 {
        let x = (0..VALIDATION_GRID)
            .map(|i| i as f64 / (VALIDATION_GRID - 1) as f64)
            .min_by(|&a, &b| shape.eval(a).total_cmp(&shape.eval(b)))
            .unwrap_or(0.0);
        violations.push(Violation::NotPositive {
            x,
            value: shape.eval(x),
        });
        return;
    }
    for i in 0..VALIDATION_GRID {
        let x = i as f64 / (VALIDATION_GRID - 1) as f64;
        let value = shape.eval(x);
        if value <= 0.0 || !value.is_finite() {
            violations.push(Violation::NotPositive { x, value });
            return;
        }
    }
}

/// Checks positivity, convexity and continuity (well-formed breakpoints) of a
/// profile description.
pub fn validate_profile(spec: &ProfileSpec) -> ValidationReport {
    let mut violations = Vec::new();
    if let Some(shape) = parse_shape(spec, &mut violations) {
        check_shape(&shape, &mut violations);
    }
    ValidationReport { violations }
}

/// A validated service-time map `S : [0, 1] → (0, ∞)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceProfile {
    spec: ProfileSpec,
    shape: Shape,
    s_min: f64,
    s_max: f64,
}

impl ServiceProfile {
    pub fn new(spec: ProfileSpec) -> Result<Self> {
        let mut violations = Vec::new();
        let shape = parse_shape(&spec, &mut violations);
        if let Some(shape) = &shape {
            check_shape(shape, &mut violations);
        }
        match shape {
            Some(shape) if violations.is_empty() => {
                let s_min = shape.minimum();
                let s_max = shape.eval(0.0).max(shape.eval(1.0));
                Ok(ServiceProfile {
                    spec,
                    shape,
                    s_min,
                    s_max,
                })
            }
            _ => Err(Error::InvalidProfile(ValidationReport { violations })),
        }
    }

    pub fn constant(s: f64) -> Result<Self> {
        Self::new(ProfileSpec::new(Family::Constant, [s]))
    }

    /// `a·x + b`
    pub fn affine(a: f64, b: f64) -> Result<Self> {
        Self::new(ProfileSpec::new(Family::Affine, [a, b]))
    }

    /// `s0 + a(x − c)²`
    pub fn quadratic(a: f64, c: f64, s0: f64) -> Result<Self> {
        Self::new(ProfileSpec::new(Family::Quadratic, [a, c, s0]))
    }

    /// Linear interpolation through `(x, y)` breakpoints spanning `[0, 1]`.
    pub fn piecewise_linear(points: &[(f64, f64)]) -> Result<Self> {
        let params: Vec<f64> = points.iter().flat_map(|&(x, y)| [x, y]).collect();
        Self::new(ProfileSpec::new(Family::PiecewiseLinear, params))
    }

    pub fn spec(&self) -> &ProfileSpec {
        &self.spec
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    /// `S(x)` with a domain check.
    pub fn service_time(&self, x: f64) -> Result<f64> {
        check_state("x", x)?;
        Ok(self.shape.eval(x))
    }

    /// `S(x)` for `x` already known to lie in `[0, 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&x), "state {x} outside [0, 1]");
        self.shape.eval(x)
    }

    /// `(min S, max{S(0), S(1)})`.
    pub fn extrema(&self) -> (f64, f64) {
        (self.s_min, self.s_max)
    }

    pub fn s_min(&self) -> f64 {
        self.s_min
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    /// Right derivative `S'(x⁺)` (the left derivative at `x = 1`).
    pub fn slope_right(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Constant { .. } => 0.0,
            Shape::Affine { a, .. } => *a,
            Shape::Quadratic { a, c, .. } => 2.0 * a * (x - c),
            Shape::PiecewiseLinear { xs, ys } => {
                let i = segment_index(xs, x);
                (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
            }
        }
    }

    /// Left derivative `S'(x⁻)` (the right derivative at `x = 0`).
    pub fn slope_left(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::PiecewiseLinear { xs, ys } => {
                let upper = xs.partition_point(|&b| b < x);
                let i = upper.clamp(1, xs.len() - 1) - 1;
                (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
            }
            _ => self.slope_right(x),
        }
    }

    /// Largest `|S'|` on `[0, 1]`.
    pub fn lipschitz(&self) -> f64 {
        match &self.shape {
            Shape::Constant { .. } => 0.0,
            Shape::Affine { a, .. } => a.abs(),
            Shape::Quadratic { a, c, .. } => 2.0 * a * c.abs().max((1.0 - c).abs()),
            Shape::PiecewiseLinear { xs, ys } => (0..xs.len() - 1)
                .map(|i| ((ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).abs())
                .fold(0.0, f64::max),
        }
    }
}

/// Time constant of the server dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerParams {
    pub tau: f64,
}

impl ServerParams {
    pub fn new(tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(ServerParams { tau })
    }
}

/// Instantaneous server state `(x(t), b(t))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerState {
    pub x: f64,
    pub busy: bool,
}

impl ServerState {
    pub fn new(x: f64, busy: bool) -> Result<Self> {
        check_state("x", x)?;
        Ok(ServerState { x, busy })
    }

    /// State after `d` more time units in the current busy/idle mode.
    pub fn advance(self, d: f64, tau: f64) -> Result<Self> {
        let x = if self.busy {
            busy_update(self.x, d, tau)?
        } else {
            idle_update(self.x, d, tau)?
        };
        Ok(ServerState { x, busy: self.busy })
    }
}

pub(crate) fn check_state(what: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::domain(what, x, "[0, 1]"))
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::domain("tau", tau, "(0, inf)"))
    }
}

fn check_duration(d: f64) -> Result<()> {
    if d >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain("duration", d, "[0, inf)"))
    }
}

/// Snaps rounding excursions back into `[0, 1]`; larger excursions are errors.
pub(crate) fn clamp_state(x: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else if (-STATE_TOLERANCE..=1.0 + STATE_TOLERANCE).contains(&x) {
        Ok(x.clamp(0.0, 1.0))
    } else {
        Err(Error::StateOutOfRange { value: x })
    }
}

/// State after serving for `d` time units from `x`: `1 − (1 − x)e^{−d/τ}`.
pub fn busy_update(x: f64, d: f64, tau: f64) -> Result<f64> {
    check_state("x", x)?;
    check_duration(d)?;
    check_tau(tau)?;
    clamp_state(1.0 - (1.0 - x) * (-d / tau).exp())
}

/// State after idling for `d` time units from `x`: `x·e^{−d/τ}`.
pub fn idle_update(x: f64, d: f64, tau: f64) -> Result<f64> {
    check_state("x", x)?;
    check_duration(d)?;
    check_tau(tau)?;
    clamp_state(x * (-d / tau).exp())
}

/// Idle time needed to decay from `x_from` down to `x_to`: `τ·ln(x_from/x_to)`.
///
/// Decaying to 0 from a positive state never completes and yields `+∞`.
pub fn idle_time_to_reach(x_from: f64, x_to: f64, tau: f64) -> Result<f64> {
    check_state("x_from", x_from)?;
    check_state("x_to", x_to)?;
    check_tau(tau)?;
    if x_to > x_from {
        return Err(Error::InfeasibleIdle {
            from: x_from,
            to: x_to,
        });
    }
    if x_to == x_from {
        return Ok(0.0);
    }
    if x_to == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(tau * (x_from / x_to).ln())
}
