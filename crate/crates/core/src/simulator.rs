//! Exact event-driven simulation of the dynamical queue.
//!
//! Tasks arrive deterministically at `t = k/λ`, `k = 1, 2, ...`; the `n0`
//! initial tasks are already waiting at `t = 0`. Every event time comes from
//! a closed-form expression (arrival clock, `t + S(x)` for service ends, the
//! exact threshold-crossing time for releases), so there is no time step.
//!
//! Events that fall within [`MERGE_TOL`] (relative to the current time, with
//! an absolute floor of `MERGE_TOL`) of each other are treated as
//! simultaneous and handled in the order service end, arrival, release. Queue
//! lengths are recorded as post-event values.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output::format_f64;
use crate::policy::{self, PolicySpec};
use crate::service::{busy_update, check_state, check_tau, idle_update, ServiceProfile};

/// Coincidence tolerance for event times, scaled by `max(1, |t|)`.
pub const MERGE_TOL: f64 = 1e-12;

/// Fewest service starts [`growth_rate_estimate`] accepts.
pub const MIN_FIT_STARTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordGranularity {
    /// Every event.
    #[default]
    Events,
    /// Only service starts; the summary is always complete.
    ServiceStarts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Arrival rate; zero means no arrivals at all.
    pub lambda: f64,
    pub tau: f64,
    pub x0: f64,
    pub n0: u64,
    /// Number of service completions to simulate.
    pub horizon_tasks: u64,
    #[serde(default)]
    pub record: RecordGranularity,
}

impl SimConfig {
    pub fn new(lambda: f64, tau: f64, x0: f64, n0: u64, horizon_tasks: u64) -> Self {
        SimConfig {
            lambda,
            tau,
            x0,
            n0,
            horizon_tasks,
            record: RecordGranularity::Events,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::domain("lambda", self.lambda, "[0, inf)"));
        }
        check_tau(self.tau)?;
        check_state("x0", self.x0)?;
        if self.horizon_tasks == 0 {
            return Err(Error::domain("horizon_tasks", 0.0, "[1, inf)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    ServiceStart,
    ServiceEnd,
    /// The gate opened for a waiting task after the server decayed to the
    /// threshold; the service start follows at the same instant.
    IdleRelease,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::ServiceStart => "service_start",
            EventKind::ServiceEnd => "service_end",
            EventKind::IdleRelease => "idle_release",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub x: f64,
    pub n: u64,
}

/// State at the start of a service: time `t_i`, state `x_i`, and the queue
/// length after the task left it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceStart {
    pub t: f64,
    pub x: f64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub max_queue: u64,
    pub final_queue: u64,
    pub arrivals: u64,
    pub completions: u64,
    pub end_time: f64,
    pub service_starts: Vec<ServiceStart>,
    /// Post-service states `x_i'`, aligned with `service_starts`.
    pub service_end_states: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub config: SimConfig,
    pub policy: PolicySpec,
    pub events: Vec<Event>,
    pub summary: Summary,
}

impl Trajectory {
    /// CSV with header `t,kind,x,n`, one row per recorded event.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,kind,x,n")?;
        for e in &self.events {
            writeln!(
                out,
                "{},{},{},{}",
                format_f64(e.t),
                e.kind.as_str(),
                format_f64(e.x),
                e.n
            )?;
        }
        Ok(())
    }
}

/// Candidate next events; declaration order is the tie-break priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Pending {
    ServiceEnd,
    Arrival,
    Release,
}

struct Engine<'a> {
    config: &'a SimConfig,
    profile: &'a ServiceProfile,
    policy: &'a PolicySpec,
    t: f64,
    // closed-form anchor of the current busy or idle stretch
    anchor_t: f64,
    anchor_x: f64,
    busy: bool,
    service_end: f64,
    service_len: f64,
    n: u64,
    next_arrival: u64,
    events: Vec<Event>,
    summary: Summary,
}

impl<'a> Engine<'a> {
    fn state_at(&self, t: f64) -> Result<f64> {
        let d = (t - self.anchor_t).max(0.0);
        if self.busy {
            busy_update(self.anchor_x, d, self.config.tau)
        } else {
            idle_update(self.anchor_x, d, self.config.tau)
        }
    }

    fn record(&mut self, kind: EventKind, x: f64) {
        let keep = match self.config.record {
            RecordGranularity::Events => true,
            RecordGranularity::ServiceStarts => kind == EventKind::ServiceStart,
        };
        if keep {
            self.events.push(Event {
                t: self.t,
                kind,
                x,
                n: self.n,
            });
        }
    }

    fn next_event(&self) -> Result<Option<(Pending, f64)>> {
        let mut candidates = Vec::with_capacity(3);
        if self.busy {
            candidates.push((Pending::ServiceEnd, self.service_end));
        }
        if self.config.lambda > 0.0 {
            candidates.push((
                Pending::Arrival,
                self.next_arrival as f64 / self.config.lambda,
            ));
        }
        if !self.busy && self.n > 0 {
            let x = self.state_at(self.t)?;
            let delay = policy::earliest_release_delay(self.policy, x, self.config.tau)?;
            candidates.push((Pending::Release, self.t + delay));
        }
        let Some(t_min) = candidates.iter().map(|c| c.1).reduce(f64::min) else {
            return Ok(None);
        };
        let tol = MERGE_TOL * t_min.abs().max(1.0);
        Ok(candidates
            .into_iter()
            .filter(|c| c.1 <= t_min + tol)
            .min_by_key(|c| c.0))
    }

    fn start_service(&mut self, x: f64) {
        self.n -= 1;
        let s = self.profile.eval(x);
        self.busy = true;
        self.anchor_t = self.t;
        self.anchor_x = x;
        self.service_len = s;
        self.service_end = self.t + s;
        self.summary.service_starts.push(ServiceStart {
            t: self.t,
            x,
            n: self.n,
        });
        self.record(EventKind::ServiceStart, x);
    }

    fn step(&mut self, pending: Pending, time: f64) -> Result<()> {
        match pending {
            Pending::ServiceEnd => {
                self.t = self.t.max(time);
                let x_end = busy_update(self.anchor_x, self.service_len, self.config.tau)?;
                self.busy = false;
                self.anchor_t = self.t;
                self.anchor_x = x_end;
                self.summary.completions += 1;
                self.summary.service_end_states.push(x_end);
                self.record(EventKind::ServiceEnd, x_end);
            }
            Pending::Arrival => {
                self.t = self.t.max(time);
                self.n += 1;
                self.next_arrival += 1;
                self.summary.arrivals += 1;
                self.summary.max_queue = self.summary.max_queue.max(self.n);
                let x = self.state_at(self.t)?;
                self.record(EventKind::Arrival, x);
            }
            Pending::Release => {
                let x = if time > self.t {
                    // waited for the decaying state to reach the threshold
                    self.t = time;
                    let x = match self.policy.threshold_value() {
                        Some(th) => th.min(self.state_at(self.t)?),
                        None => self.state_at(self.t)?,
                    };
                    self.record(EventKind::IdleRelease, x);
                    x
                } else {
                    self.state_at(self.t)?
                };
                self.start_service(x);
            }
        }
        Ok(())
    }
}

/// Simulates until `horizon_tasks` services have completed, or until the
/// system is empty with no arrivals left (only possible with `λ = 0`).
pub fn run(
    config: &SimConfig,
    profile: &ServiceProfile,
    policy: &PolicySpec,
) -> Result<Trajectory> {
    config.validate()?;
    policy.validate()?;
    let mut engine = Engine {
        config,
        profile,
        policy,
        t: 0.0,
        anchor_t: 0.0,
        anchor_x: config.x0,
        busy: false,
        service_end: 0.0,
        service_len: 0.0,
        n: config.n0,
        next_arrival: 1,
        events: Vec::new(),
        summary: Summary {
            max_queue: config.n0,
            ..Summary::default()
        },
    };
    while engine.summary.completions < config.horizon_tasks {
        match engine.next_event()? {
            Some((pending, time)) => engine.step(pending, time)?,
            None => break,
        }
    }
    engine.summary.final_queue = engine.n;
    engine.summary.end_time = engine.t;
    Ok(Trajectory {
        config: config.clone(),
        policy: *policy,
        events: engine.events,
        summary: engine.summary,
    })
}

/// Next service-start state under always-on release with an empty queue:
/// serve for `S(x)`, then idle for the rest of the `1/λ` inter-arrival gap.
///
/// Equivalent to `(x − 1 + e^{S(x)/τ})·e^{−1/(λτ)}`; requires `S(x) ≤ 1/λ`.
pub fn fixed_point_map(profile: &ServiceProfile, tau: f64, lambda: f64, x: f64) -> Result<f64> {
    let s = profile.service_time(x)?;
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::domain("lambda", lambda, "(0, inf)"));
    }
    let gap = 1.0 / lambda;
    if s > gap {
        return Err(Error::Precondition(format!(
            "service time S({x}) = {s} exceeds the inter-arrival time {gap}"
        )));
    }
    idle_update(busy_update(x, s, tau)?, gap - s, tau)
}

/// Least-squares line through `(t_i, n(t_i))` over the trailing half of the
/// service starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthFit {
    /// Tasks per unit time.
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    pub points: usize,
}

pub fn growth_rate_estimate(trajectory: &Trajectory) -> Result<GrowthFit> {
    let starts = &trajectory.summary.service_starts;
    if starts.len() < MIN_FIT_STARTS {
        return Err(Error::TooShort {
            have: starts.len(),
            need: MIN_FIT_STARTS,
        });
    }
    let tail = &starts[starts.len() / 2..];
    let m = tail.len() as f64;
    let t_mean = tail.iter().map(|s| s.t).sum::<f64>() / m;
    let n_mean = tail.iter().map(|s| s.n as f64).sum::<f64>() / m;
    let (mut stt, mut stn) = (0.0, 0.0);
    for s in tail {
        let dt = s.t - t_mean;
        stt += dt * dt;
        stn += dt * (s.n as f64 - n_mean);
    }
    let slope = if stt > 0.0 { stn / stt } else { 0.0 };
    let intercept = n_mean - slope * t_mean;
    let sse: f64 = tail
        .iter()
        .map(|s| {
            let r = s.n as f64 - (intercept + slope * s.t);
            r * r
        })
        .sum();
    Ok(GrowthFit {
        slope,
        intercept,
        residual: (sse / m).sqrt(),
        points: tail.len(),
    })
}
