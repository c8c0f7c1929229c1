//! Cooperative wall-clock budgets. Solvers poll a [`Deadline`] at iteration
//! boundaries and hand back their best state when it expires.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Per-run solver budget in seconds.
pub const DEFAULT_BUDGET_SECS: f64 = 120.0;
/// Allowed enforcement latency beyond the budget.
pub const DEFAULT_GRACE_SECS: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeBudget {
    pub seconds: f64,
    pub grace: f64,
}

impl Default for TimeBudget {
    fn default() -> Self {
        TimeBudget {
            seconds: DEFAULT_BUDGET_SECS,
            grace: DEFAULT_GRACE_SECS,
        }
    }
}

impl TimeBudget {
    pub fn seconds(seconds: f64) -> Self {
        TimeBudget {
            seconds,
            ..Self::default()
        }
    }

    pub fn deadline(&self) -> Deadline {
        Deadline::after(Duration::from_secs_f64(self.seconds.max(0.0)))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Deadline {
    start: Instant,
    limit: Option<Duration>,
}

impl Deadline {
    pub fn after(limit: Duration) -> Self {
        Deadline {
            start: Instant::now(),
            limit: Some(limit),
        }
    }

    pub fn unlimited() -> Self {
        Deadline {
            start: Instant::now(),
            limit: None,
        }
    }

    pub fn expired(&self) -> bool {
        self.limit.is_some_and(|l| self.start.elapsed() >= l)
    }

    pub fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }
}

#[derive(Clone, Debug)]
pub struct Budgeted<T> {
    pub value: T,
    pub timed_out: bool,
    pub elapsed: Duration,
}

/// Runs `task` with a deadline derived from `budget`. The task must poll the
/// deadline and return its best result once it expires.
pub fn run_with_budget<T>(budget: &TimeBudget, task: impl FnOnce(&Deadline) -> T) -> Budgeted<T> {
    let deadline = budget.deadline();
    let value = task(&deadline);
    Budgeted {
        value,
        timed_out: deadline.expired(),
        elapsed: deadline.elapsed(),
    }
}
