//! Single-server queue whose service time depends on a utilization state.
//!
//! The server state `x ∈ [0,1]` relaxes towards 1 while busy and towards 0
//! while idle with time constant `τ`; a task started at state `x` takes
//! `S(x)` time units. This crate computes the critical arrival rate
//! `λ_eq^max(τ)` and the matching threshold `x_th`, simulates the queue
//! exactly between events, and checks runs against the stability and
//! instability certificates.

pub mod equilibrium;
pub mod error;
pub mod numeric;
pub mod output;
pub mod policy;
pub mod service;
pub mod simulator;
pub mod stability;
pub mod static_oracle;

pub use equilibrium::{
    critical_rate, equilibrium_states, gap_minimum, one_task_cycle_time, return_time,
    stabilizing_threshold_interval, CriticalPoint, EquilibriumSet, ThresholdInterval,
};
pub use error::{Error, Result};
pub use policy::{decide, earliest_release_delay, Gate, PolicySpec};
pub use service::{
    busy_update, idle_time_to_reach, idle_update, validate_profile, Family, ProfileSpec,
    ServiceProfile,
};
pub use simulator::{growth_rate_estimate, run, SimConfig, Trajectory};
pub use stability::{classify, compute_constants, queue_upper_bound, StabilityConstants, Verdict};
pub use static_oracle::{min_time_search, verify_bound, SearchGrid, StaticProblem, StaticSchedule};
