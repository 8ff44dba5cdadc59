//! Small MDPs given by explicit transition and reward tables.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, Horizon, Step, TaskSuite};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Explicit finite MDP.
///
/// `transitions` has one row per `(state, action)` pair, ordered
/// `state * n_actions + action`, each a distribution over next states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainMdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Vec<f64>>,
    /// `n_states` rows of `n_actions` rewards.
    pub rewards: Vec<Vec<f64>>,
    pub gamma: f64,
    /// Initial-state distribution; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

const ROW_TOLERANCE: f64 = 1e-12;

fn check_distribution(row: &[f64], index: usize, len: usize) -> Result<()> {
    if row.len() != len {
        return Err(Error::InvalidConfig(format!(
            "row {index} has {} entries, expected {len}",
            row.len()
        )));
    }
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidConfig(format!("row {index} has a negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::NonStochastic { row: index, sum });
    }
    Ok(())
}

impl ChainMdpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::InvalidDims("chain MDP needs states and actions".into()));
        }
        if self.transitions.len() != self.n_states * self.n_actions {
            return Err(Error::InvalidConfig(format!(
                "expected {} transition rows, got {}",
                self.n_states * self.n_actions,
                self.transitions.len()
            )));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            check_distribution(row, i, self.n_states)?;
        }
        if self.rewards.len() != self.n_states
            || self
                .rewards
                .iter()
                .any(|r| r.len() != self.n_actions || r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidConfig("reward table must be n_states x n_actions and finite".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if let Some(init) = &self.initial {
            check_distribution(init, 0, self.n_states)
                .map_err(|e| Error::InvalidConfig(format!("initial distribution: {e}")))?;
        }
        Ok(())
    }

    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        &self.transitions[state * self.n_actions + action]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[state][action]
    }

    pub fn initial_distribution(&self) -> Vec<f64> {
        self.initial
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.n_states as f64; self.n_states])
    }

    /// A walk on `n_states` cells where action 0 moves left and action 1 moves
    /// right; with probability `slip` the agent stays put. Moves off either end
    /// also stay put.
    pub fn walk(n_states: usize, slip: f64, rewards: Vec<Vec<f64>>, gamma: f64) -> Self {
        let mut transitions = Vec::with_capacity(2 * n_states);
        for s in 0..n_states {
            for target in [s.saturating_sub(1), (s + 1).min(n_states - 1)] {
                let mut row = vec![0.0; n_states];
                row[target] += 1.0 - slip;
                row[s] += slip;
                transitions.push(row);
            }
        }
        ChainMdpSpec {
            n_states,
            n_actions: 2,
            transitions,
            rewards,
            gamma,
            initial: None,
        }
    }

    /// Reference 5-state walk with slip 0.1 and `gamma = 0.9`: a small reward
    /// (0.9) for pushing left at the left end and a larger one (1.0) for
    /// pushing right at the right end. The optimal policy is left in states
    /// 0-1 and right in states 2-4.
    pub fn five_state_chain() -> Self {
        let mut rewards = vec![vec![0.0; 2]; 5];
        rewards[0][0] = 0.9;
        rewards[4][1] = 1.0;
        Self::walk(5, 0.1, rewards, 0.9)
    }
}

/// Environment view of a [`ChainMdpSpec`]. The tables stay reachable through
/// [`ChainMdp::spec`] for exact solvers.
#[derive(Debug, Clone)]
pub struct ChainMdp {
    spec: Arc<ChainMdpSpec>,
    initial: Vec<f64>,
    state: usize,
    horizon: Horizon,
}

fn sample_index(weights: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the last cumulative sum
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

impl ChainMdp {
    pub fn new(spec: ChainMdpSpec, horizon: usize) -> Result<Self> {
        spec.validate()?;
        Ok(ChainMdp {
            initial: spec.initial_distribution(),
            spec: Arc::new(spec),
            state: 0,
            horizon: Horizon::new(horizon),
        })
    }

    pub fn spec(&self) -> &ChainMdpSpec {
        &self.spec
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn set_state(&mut self, state: usize) {
        assert!(state < self.spec.n_states);
        self.state = state;
    }
}

impl Environment for ChainMdp {
    fn n_states(&self) -> usize {
        self.spec.n_states
    }

    fn n_actions(&self) -> usize {
        self.spec.n_actions
    }

    fn reset(&mut self, rng: &mut SimRng) -> usize {
        self.horizon.restart();
        self.state = sample_index(&self.initial, rng);
        self.state
    }

    fn step(&mut self, action: usize, rng: &mut SimRng) -> Step {
        let reward = self.spec.reward(self.state, action);
        self.state = sample_index(self.spec.transition_row(self.state, action), rng);
        Step {
            next_state: self.state,
            reward,
            done: self.horizon.tick(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSuiteConfig {
    pub tasks: Vec<ChainMdpSpec>,
}

impl Default for ChainSuiteConfig {
    fn default() -> Self {
        ChainSuiteConfig {
            tasks: vec![ChainMdpSpec::five_state_chain()],
        }
    }
}

impl ChainSuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::InvalidConfig("chain suite needs at least one task".into()));
        }
        self.tasks.iter().try_for_each(ChainMdpSpec::validate)
    }
}

pub fn chain_suite(cfg: &ChainSuiteConfig, horizon: usize, seed: u64) -> Result<TaskSuite> {
    cfg.validate()?;
    let envs = cfg
        .tasks
        .iter()
        .map(|spec| ChainMdp::new(spec.clone(), horizon).map(|c| Box::new(c) as Box<dyn Environment>))
        .collect::<Result<Vec<_>>>()?;
    TaskSuite::new(envs, seed)
}
