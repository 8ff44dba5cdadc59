//! Episodic environments with finite (flattened) state and action spaces.
//!
//! Each environment family produces a [`TaskSuite`]: `M` environments that
//! share the same state and action indexing but differ in their dynamics or
//! rewards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

pub mod chain;
pub mod grid;
pub mod pendulum;
pub mod wireless;

pub use chain::{ChainMdp, ChainMdpSpec, ChainSuiteConfig};
pub use grid::{Axis, DiscretizationGrid};
pub use pendulum::{Pendulum, PendulumParams, PendulumState, PendulumSuiteConfig};
pub use wireless::{Wireless, WirelessParams, WirelessState, WirelessSuiteConfig};

/// Outcome of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next_state: usize,
    pub reward: f64,
    pub done: bool,
}

/// Behavioural contract shared by every environment.
///
/// Environments hold their current (possibly continuous) state; the learner
/// only ever sees its flat index. All randomness comes from the generator
/// passed in, so equal parameters and equal streams give equal trajectories.
pub trait Environment: Send {
    fn n_states(&self) -> usize;

    fn n_actions(&self) -> usize;

    /// Starts a new episode and returns the initial state index.
    fn reset(&mut self, rng: &mut SimRng) -> usize;

    /// Applies `action` to the current state.
    fn step(&mut self, action: usize, rng: &mut SimRng) -> Step;
}

/// `M` environments sharing one state/action indexing, each owning its random stream.
pub struct TaskSuite {
    envs: Vec<Box<dyn Environment>>,
    rngs: Vec<SimRng>,
    n_states: usize,
    n_actions: usize,
}

impl std::fmt::Debug for TaskSuite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaskSuite")
            .field("n_tasks", &self.envs.len())
            .field("n_states", &self.n_states)
            .field("n_actions", &self.n_actions)
            .finish()
    }
}

impl TaskSuite {
    /// Task `m` draws from stream `(seed, ENV, m)`.
    pub fn new(envs: Vec<Box<dyn Environment>>, seed: u64) -> Result<Self> {
        let first = envs
            .first()
            .ok_or_else(|| Error::InvalidConfig("a task suite needs at least one task".into()))?;
        let (n_states, n_actions) = (first.n_states(), first.n_actions());
        if let Some(m) = envs
            .iter()
            .position(|e| e.n_states() != n_states || e.n_actions() != n_actions)
        {
            return Err(Error::InvalidConfig(format!(
                "task {m} has dims {}x{}, expected {n_states}x{n_actions}",
                envs[m].n_states(),
                envs[m].n_actions()
            )));
        }
        let rngs = (0..envs.len())
            .map(|m| rng::stream(seed, &[rng::tag::ENV, m as u64]))
            .collect();
        Ok(TaskSuite {
            envs,
            rngs,
            n_states,
            n_actions,
        })
    }

    pub fn n_tasks(&self) -> usize {
        self.envs.len()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn reset(&mut self, task: usize) -> usize {
        self.envs[task].reset(&mut self.rngs[task])
    }

    pub fn step(&mut self, task: usize, action: usize) -> Step {
        let step = self.envs[task].step(action, &mut self.rngs[task]);
        debug_assert!(step.next_state < self.n_states && step.reward.is_finite());
        step
    }

    /// Direct access to one environment, e.g. to drive it with an external stream.
    pub fn env_mut(&mut self, task: usize) -> &mut dyn Environment {
        self.envs[task].as_mut()
    }
}

/// Task-suite configuration, tagged by environment family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum SuiteConfig {
    Pendulum(PendulumSuiteConfig),
    Wireless(WirelessSuiteConfig),
    Chain(ChainSuiteConfig),
}

impl SuiteConfig {
    pub fn family(&self) -> &'static str {
        match self {
            SuiteConfig::Pendulum(_) => "pendulum",
            SuiteConfig::Wireless(_) => "wireless",
            SuiteConfig::Chain(_) => "chain",
        }
    }

    pub fn n_tasks(&self) -> usize {
        match self {
            SuiteConfig::Pendulum(c) => c.masses.len(),
            SuiteConfig::Wireless(c) => c.arrival_sizes.len(),
            SuiteConfig::Chain(c) => c.tasks.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SuiteConfig::Pendulum(c) => c.validate(),
            SuiteConfig::Wireless(c) => c.validate(),
            SuiteConfig::Chain(c) => c.validate(),
        }
    }

    /// Builds the suite; `horizon` is the episode length `T`.
    pub fn build(&self, horizon: usize, seed: u64) -> Result<TaskSuite> {
        match self {
            SuiteConfig::Pendulum(c) => pendulum::pendulum_suite(c, horizon, seed),
            SuiteConfig::Wireless(c) => wireless::wireless_suite(c, horizon, seed),
            SuiteConfig::Chain(c) => chain::chain_suite(c, horizon, seed),
        }
    }
}

/// Counts steps and flags the end of a fixed-length episode.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Horizon {
    pub limit: usize,
    pub elapsed: usize,
}

impl Horizon {
    pub fn new(limit: usize) -> Self {
        Horizon { limit, elapsed: 0 }
    }

    pub fn restart(&mut self) {
        self.elapsed = 0;
    }

    /// Records a step and reports whether the episode is over.
    pub fn tick(&mut self) -> bool {
        self.elapsed += 1;
        self.limit > 0 && self.elapsed >= self.limit
    }
}

pub(crate) fn check_same_len(what: &str, lens: &[usize]) -> Result<()> {
    if lens.is_empty() || lens[0] == 0 {
        return Err(Error::InvalidConfig(format!("{what}: need at least one task")));
    }
    if lens.iter().any(|&l| l != lens[0]) {
        return Err(Error::InvalidConfig(format!(
            "{what}: parameter vectors differ in length {lens:?}"
        )));
    }
    Ok(())
}
