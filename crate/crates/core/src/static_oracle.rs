//! Exhaustive check of the static-problem lower bound.
//!
//! The static problem serves `n` pre-queued tasks starting and ending at
//! state `x`. Its minimum time is bounded below by `n/λ_eq^max`; here that
//! bound is tested by enumerating idle schedules on a grid.

use rayon::prelude::*;

use crate::equilibrium::CriticalPoint;
use crate::error::{Error, Result};
use crate::service::{busy_update, check_tau, idle_time_to_reach, idle_update, ServiceProfile};

/// Largest task count [`min_time_search`] accepts.
pub const MAX_SEARCH_TASKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticProblem {
    pub x: f64,
    pub tau: f64,
    pub n: usize,
}

impl StaticProblem {
    pub fn new(x: f64, tau: f64, n: usize) -> Result<Self> {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::domain("x", x, "(0, 1)"));
        }
        check_tau(tau)?;
        if n == 0 {
            return Err(Error::domain("n", 0.0, "n >= 1"));
        }
        Ok(StaticProblem { x, tau, n })
    }
}

/// Idle time inserted before each task's service.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticSchedule {
    idle_before: Vec<f64>,
}

impl StaticSchedule {
    /// A schedule that starts the first task immediately.
    pub fn new(idle_before: Vec<f64>) -> Result<Self> {
        if let Some(&d1) = idle_before.first() {
            if d1 != 0.0 {
                return Err(Error::domain("idle_before[0]", d1, "0"));
            }
        }
        Self::with_leading_idle(idle_before)
    }

    /// Like [`StaticSchedule::new`] but the first entry may be positive.
    pub fn with_leading_idle(idle_before: Vec<f64>) -> Result<Self> {
        if let Some(&d) = idle_before.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return Err(Error::domain("idle duration", d, "[0, inf)"));
        }
        Ok(StaticSchedule { idle_before })
    }

    pub fn zeros(n: usize) -> Self {
        StaticSchedule {
            idle_before: vec![0.0; n],
        }
    }

    pub fn idle_before(&self) -> &[f64] {
        &self.idle_before
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleOutcome {
    Completed {
        total_time: f64,
        final_state: f64,
    },
    /// The last service ended below the boundary state.
    Infeasible {
        final_state: f64,
    },
}

impl ScheduleOutcome {
    pub fn total_time(&self) -> Option<f64> {
        match *self {
            ScheduleOutcome::Completed { total_time, .. } => Some(total_time),
            ScheduleOutcome::Infeasible { .. } => None,
        }
    }
}

pub fn simulate_schedule(
    problem: &StaticProblem,
    profile: &ServiceProfile,
    schedule: &StaticSchedule,
) -> Result<ScheduleOutcome> {
    if schedule.idle_before.len() != problem.n {
        return Err(Error::Precondition(format!(
            "schedule has {} idle entries, problem has {} tasks",
            schedule.idle_before.len(),
            problem.n
        )));
    }
    run_schedule(problem, profile, &schedule.idle_before)
}

fn run_schedule(
    problem: &StaticProblem,
    profile: &ServiceProfile,
    idles: &[f64],
) -> Result<ScheduleOutcome> {
    let tau = problem.tau;
    let mut x = problem.x;
    let mut t = 0.0;
    for &d in idles {
        x = idle_update(x, d, tau)?;
        let s = profile.eval(x);
        x = busy_update(x, s, tau)?;
        t += d + s;
    }
    if x < problem.x {
        return Ok(ScheduleOutcome::Infeasible { final_state: x });
    }
    Ok(ScheduleOutcome::Completed {
        total_time: t + idle_time_to_reach(x, problem.x, tau)?,
        final_state: x,
    })
}

/// Idle grid `{0, step, 2·step, ..., ≤ cap}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchGrid {
    pub step: f64,
    pub cap: f64,
}

impl SearchGrid {
    pub fn new(step: f64, cap: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::domain("grid_step", step, "(0, inf)"));
        }
        if !(cap >= 0.0 && cap.is_finite()) {
            return Err(Error::domain("idle_cap", cap, "[0, inf)"));
        }
        Ok(SearchGrid { step, cap })
    }

    pub fn default_for(tau: f64) -> Self {
        SearchGrid {
            step: 0.01 * tau,
            cap: 3.0 * tau,
        }
    }

    pub fn points(&self) -> usize {
        // the small slack keeps cap itself on the grid when cap/step is integral
        (self.cap / self.step * (1.0 + 1e-12)).floor() as usize + 1
    }

    fn value(&self, k: usize) -> f64 {
        k as f64 * self.step
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_time: f64,
    pub best_schedule: StaticSchedule,
    /// Schedules simulated.
    pub evaluated: u64,
    /// Schedules that ended at or above the boundary state.
    pub feasible: u64,
}

#[derive(Debug, Clone, Copy)]
struct Best {
    time: f64,
    index: [usize; MAX_SEARCH_TASKS],
    evaluated: u64,
    feasible: u64,
}

impl Best {
    fn empty() -> Self {
        Best {
            time: f64::INFINITY,
            index: [usize::MAX; MAX_SEARCH_TASKS],
            evaluated: 0,
            feasible: 0,
        }
    }

    fn offer(&mut self, time: f64, index: &[usize; MAX_SEARCH_TASKS]) {
        if time < self.time || (time == self.time && *index < self.index) {
            self.time = time;
            self.index = *index;
        }
    }

    fn merge(mut self, other: Best) -> Best {
        self.offer(other.time, &other.index);
        self.evaluated += other.evaluated;
        self.feasible += other.feasible;
        self
    }
}

/// Minimum total time over all schedules with `d_1 = 0` and the remaining
/// idles on `grid`. Ties go to the lexicographically smallest idle vector.
pub fn min_time_search(
    problem: &StaticProblem,
    profile: &ServiceProfile,
    grid: &SearchGrid,
) -> Result<SearchResult> {
    let n = problem.n;
    if n > MAX_SEARCH_TASKS {
        return Err(Error::Precondition(format!(
            "exhaustive search supports n <= {MAX_SEARCH_TASKS}, got {n}"
        )));
    }
    SearchGrid::new(grid.step, grid.cap)?;
    let points = grid.points();
    let free = n - 1;

    let search_from = |first: usize| -> Result<Best> {
        let mut best = Best::empty();
        let mut index = [0usize; MAX_SEARCH_TASKS];
        if free > 0 {
            index[1] = first;
        }
        let mut idles = [0.0f64; MAX_SEARCH_TASKS];
        loop {
            for i in 1..n {
                idles[i] = grid.value(index[i]);
            }
            best.evaluated += 1;
            if let Some(t) = run_schedule(problem, profile, &idles[..n])?.total_time() {
                best.feasible += 1;
                best.offer(t, &index);
            }
            // odometer over index[2..n]
            let mut pos = n;
            loop {
                if pos <= 2 {
                    return Ok(best);
                }
                pos -= 1;
                index[pos] += 1;
                if index[pos] < points {
                    break;
                }
                index[pos] = 0;
            }
        }
    };

    let firsts = if free > 0 { points } else { 1 };
    let best = (0..firsts)
        .into_par_iter()
        .map(search_from)
        .try_reduce(Best::empty, |a, b| Ok(a.merge(b)))?;

    if best.feasible == 0 {
        return Err(Error::NoFeasibleSchedule);
    }
    let idles = (0..n)
        .map(|i| {
            if i == 0 {
                0.0
            } else {
                grid.value(best.index[i])
            }
        })
        .collect();
    Ok(SearchResult {
        best_time: best.time,
        best_schedule: StaticSchedule { idle_before: idles },
        evaluated: best.evaluated,
        feasible: best.feasible,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub pass: bool,
    pub best_time: f64,
    /// `n/λ_eq^max`.
    pub bound: f64,
    /// `best_time − bound`.
    pub margin: f64,
    /// Discretization slack `2·n·Lip(S)·step`.
    pub tolerance: f64,
    pub best_schedule: StaticSchedule,
    pub evaluated: u64,
}

pub fn discretization_tolerance(n: usize, profile: &ServiceProfile, grid: &SearchGrid) -> f64 {
    2.0 * n as f64 * profile.lipschitz() * grid.step
}

pub fn verify_bound(
    problem: &StaticProblem,
    profile: &ServiceProfile,
    critical: &CriticalPoint,
    grid: &SearchGrid,
) -> Result<BoundCheck> {
    let found = min_time_search(problem, profile, grid)?;
    let bound = problem.n as f64 / critical.lambda_eq_max;
    let tolerance = discretization_tolerance(problem.n, profile, grid);
    let margin = found.best_time - bound;
    Ok(BoundCheck {
        pass: margin >= -tolerance,
        best_time: found.best_time,
        bound,
        margin,
        tolerance,
        best_schedule: found.best_schedule,
        evaluated: found.evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{critical_rate, one_task_cycle_time};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference() -> (ServiceProfile, CriticalPoint) {
        let q = ServiceProfile::quadratic(4.0, 0.5, 1.0).unwrap();
        let cp = critical_rate(&q, 1.0).unwrap();
        (q, cp)
    }

    #[test]
    fn single_task_matches_cycle_time() {
        let (q, _) = reference();
        for x in [0.05, 0.3, 0.5, 0.77, 0.95] {
            let p = StaticProblem::new(x, 1.0, 1).unwrap();
            let got = simulate_schedule(&p, &q, &StaticSchedule::zeros(1)).unwrap();
            assert_relative_eq!(
                got.total_time().unwrap(),
                one_task_cycle_time(&q, 1.0, x).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn zero_idles_accumulate_directly() {
        let (q, _) = reference();
        let p = StaticProblem::new(0.4, 0.8, 3).unwrap();
        let mut x = 0.4f64;
        let mut t = 0.0;
        for _ in 0..3 {
            let s = 4.0 * (x - 0.5).powi(2) + 1.0;
            x = 1.0 - (1.0 - x) * (-s / 0.8).exp();
            t += s;
        }
        t += 0.8 * (x / 0.4).ln();
        let got = simulate_schedule(&p, &q, &StaticSchedule::zeros(3)).unwrap();
        assert!((got.total_time().unwrap() - t).abs() < 1e-10);
    }

    #[test]
    fn dipping_below_boundary_is_infeasible() {
        // long idle before a short service leaves the server cooler than it started
        let c = ServiceProfile::constant(0.01).unwrap();
        let p = StaticProblem::new(0.9, 1.0, 2).unwrap();
        let s = StaticSchedule::new(vec![0.0, 5.0]).unwrap();
        let out = simulate_schedule(&p, &c, &s).unwrap();
        assert!(matches!(out, ScheduleOutcome::Infeasible { final_state } if final_state < 0.9));
    }

    #[test]
    fn rearrangement_identity() {
        let (q, _) = reference();
        for (x, d) in [(0.6, 0.3), (0.9, 0.1), (0.45, 0.05)] {
            let x_minus = x * (-d / 1.0f64).exp();
            let p = StaticProblem::new(x, 1.0, 1).unwrap();
            let s = StaticSchedule::with_leading_idle(vec![d]).unwrap();
            let lhs = simulate_schedule(&p, &q, &s).unwrap().total_time().unwrap();
            let rhs = one_task_cycle_time(&q, 1.0, x_minus).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(StaticSchedule::new(vec![0.1, 0.0]).is_err());
        assert!(StaticSchedule::new(vec![0.0, -1.0]).is_err());
        assert!(StaticSchedule::with_leading_idle(vec![0.1]).is_ok());
        assert!(StaticProblem::new(0.0, 1.0, 1).is_err());
        assert!(StaticProblem::new(1.0, 1.0, 1).is_err());
        assert!(StaticProblem::new(0.5, 1.0, 0).is_err());
        let (q, _) = reference();
        let p = StaticProblem::new(0.5, 1.0, 2).unwrap();
        assert!(simulate_schedule(&p, &q, &StaticSchedule::zeros(3)).is_err());
        let p5 = StaticProblem::new(0.5, 1.0, 5).unwrap();
        assert!(min_time_search(&p5, &q, &SearchGrid::default_for(1.0)).is_err());
    }

    #[test]
    fn grid_counts() {
        assert_eq!(SearchGrid::default_for(1.0).points(), 301);
        assert_eq!(SearchGrid::new(0.3, 1.0).unwrap().points(), 4);
        assert_eq!(SearchGrid::new(0.5, 0.0).unwrap().points(), 1);
    }

    #[test]
    fn search_is_tight_at_threshold() {
        let (q, cp) = reference();
        let grid = SearchGrid::default_for(1.0);
        let one = verify_bound(
            &StaticProblem::new(cp.x_th, 1.0, 1).unwrap(),
            &q,
            &cp,
            &grid,
        )
        .unwrap();
        assert!(one.pass && one.margin.abs() < 1e-6, "{one:?}");
        let two = verify_bound(
            &StaticProblem::new(cp.x_th, 1.0, 2).unwrap(),
            &q,
            &cp,
            &grid,
        )
        .unwrap();
        assert!(two.pass, "{two:?}");
        assert!(two.margin < 2.0 * grid.step, "{two:?}");
        assert_eq!(two.evaluated, 301);
    }

    #[test]
    fn off_threshold_margin_is_positive() {
        let (q, cp) = reference();
        let grid = SearchGrid::default_for(1.0);
        for x in [0.1, 0.9] {
            let r = verify_bound(&StaticProblem::new(x, 1.0, 1).unwrap(), &q, &cp, &grid).unwrap();
            assert!(r.margin > 1e-3, "{r:?}");
        }
    }

    #[test]
    fn refinement_never_increases_best_time() {
        let (q, _) = reference();
        for n in [2, 3] {
            let p = StaticProblem::new(0.35, 1.0, n).unwrap();
            let coarse = min_time_search(&p, &q, &SearchGrid::new(0.2, 2.0).unwrap()).unwrap();
            let fine = min_time_search(&p, &q, &SearchGrid::new(0.1, 2.0).unwrap()).unwrap();
            assert!(fine.best_time <= coarse.best_time);
        }
    }

    #[test]
    fn search_matches_brute_force_and_tie_break() {
        let (q, _) = reference();
        let p = StaticProblem::new(0.7, 1.0, 3).unwrap();
        let grid = SearchGrid::new(0.25, 1.0).unwrap();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for a in 0..5 {
            for b in 0..5 {
                let v = vec![0.0, a as f64 * 0.25, b as f64 * 0.25];
                let s = StaticSchedule::new(v.clone()).unwrap();
                if let Some(t) = simulate_schedule(&p, &q, &s).unwrap().total_time() {
                    if best.as_ref().is_none_or(|(bt, _)| t < *bt) {
                        best = Some((t, v));
                    }
                }
            }
        }
        let (t, v) = best.unwrap();
        let got = min_time_search(&p, &q, &grid).unwrap();
        assert_eq!(got.best_time, t);
        assert_eq!(got.best_schedule.idle_before(), &v[..]);
        assert_eq!(got.evaluated, 25);
    }

    #[test]
    fn search_is_deterministic() {
        let (q, _) = reference();
        let p = StaticProblem::new(0.5, 1.0, 3).unwrap();
        let grid = SearchGrid::new(0.05, 1.0).unwrap();
        let a = min_time_search(&p, &q, &grid).unwrap();
        let b = min_time_search(&p, &q, &grid).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn feasible_schedules_respect_bound(
            x in 0.05..0.95f64,
            d2 in 0.0..3.0f64,
            d3 in 0.0..3.0f64,
        ) {
            let (q, cp) = reference();
            let p = StaticProblem::new(x, 1.0, 3).unwrap();
            let s = StaticSchedule::new(vec![0.0, d2, d3]).unwrap();
            if let Some(t) = simulate_schedule(&p, &q, &s).unwrap().total_time() {
                prop_assert!(t >= 3.0 / cp.lambda_eq_max - 1e-9);
            }
        }

        #[test]
        fn leading_idle_rearranges(x in 0.05..0.95f64, d in 0.0..3.0f64, tau in 0.2..5.0f64) {
            let (q, _) = reference();
            let x_minus = x * (-d / tau).exp();
            let p = StaticProblem::new(x, tau, 1).unwrap();
            let s = StaticSchedule::with_leading_idle(vec![d]).unwrap();
            let out = simulate_schedule(&p, &q, &s).unwrap();
            prop_assume!(out.total_time().is_some());
            let lhs = out.total_time().unwrap();
            let rhs = one_task_cycle_time(&q, tau, x_minus).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10 * lhs.max(1.0));
        }
    }
}
