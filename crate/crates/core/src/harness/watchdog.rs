use std::time::{Duration, Instant};

/// Cooperative hang detector. The code under watch calls [`Watchdog::enter`]
/// at each site and on every loop iteration; once the wall-clock deadline or
/// the step budget is exhausted, the call returns the last site entered.
#[derive(Clone, Debug)]
pub struct Watchdog {
    deadline: Duration,
    step_budget: u64,
    started: Instant,
    steps: u64,
    last_site: &'static str,
}

/// The watched code ran out of time at `site`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expired {
    pub site: &'static str,
}

pub const DEFAULT_STEP_BUDGET: u64 = 10_000;

impl Watchdog {
    pub fn new(deadline: Duration, step_budget: u64) -> Self {
        Watchdog { deadline, step_budget, started: Instant::now(), steps: 0, last_site: "start" }
    }

    pub fn restart(&mut self) {
        self.started = Instant::now();
        self.steps = 0;
        self.last_site = "start";
    }

    pub fn last_site(&self) -> &'static str {
        self.last_site
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn enter(&mut self, site: &'static str) -> Result<(), Expired> {
        self.last_site = site;
        self.steps += 1;
        if self.deadline.is_zero() || self.steps > self.step_budget {
            return Err(Expired { site });
        }
        if self.steps % 256 == 0 && self.started.elapsed() >= self.deadline {
            return Err(Expired { site });
        }
        Ok(())
    }
}
