//! Semi-gradient Q-learning over low-rank factor models.
//!
//! Three learners share one training loop:
//!
//! * **S-TLR-Q** ([`run_stlrq`]) fits a single `|S| x |A| x M` CP tensor with
//!   data from every task, so state and action embeddings are shared and
//!   each task only owns its row of task coefficients.
//! * **LR-Q** ([`run_lrq`]) fits one independent low-rank matrix per task and,
//!   to match compute, applies `M` updates per sampled transition.
//! * **C-LR-Q** ([`run_clrq`]) fits one low-rank matrix shared by all tasks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::tensor::{FactorInit, FactorSet};

pub mod gradient;
pub mod train;

pub use gradient::{
    apply_update, batch_loss, residual_gradients, semi_gradients, td_error, td_error_towards,
    RowGrad, SparseGrad,
};
pub use train::{
    run_clrq, run_lrq, run_stlrq, train, Algorithm, CheckpointSink, Model, ModelSnapshot,
    NoCheckpoints, TrainOutcome, TrainStats,
};

/// One sampled transition of task `task`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub task: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Transitions bucketed by task.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectorySet {
    per_task: Vec<Vec<Transition>>,
}

impl TrajectorySet {
    pub fn new(n_tasks: usize) -> Self {
        TrajectorySet {
            per_task: vec![Vec::new(); n_tasks],
        }
    }

    /// Panics if `t.task` is out of range.
    pub fn push(&mut self, t: Transition) {
        self.per_task[t.task].push(t);
    }

    pub fn n_tasks(&self) -> usize {
        self.per_task.len()
    }

    pub fn per_task(&self) -> &[Vec<Transition>] {
        &self.per_task
    }

    pub fn len(&self) -> usize {
        self.per_task.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Step-size schedule `eta(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearningRate {
    Constant { eta0: f64 },
    /// `eta0 / (1 + decay * n)`.
    InverseStep { eta0: f64, decay: f64 },
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate::Constant { eta0: 0.01 }
    }
}

impl LearningRate {
    pub fn rate(&self, n: u64) -> f64 {
        match *self {
            LearningRate::Constant { eta0 } => eta0,
            LearningRate::InverseStep { eta0, decay } => eta0 / (1.0 + decay * n as f64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (eta0, decay) = match *self {
            LearningRate::Constant { eta0 } => (eta0, 0.0),
            LearningRate::InverseStep { eta0, decay } => (eta0, decay),
        };
        if !(eta0 > 0.0 && eta0.is_finite() && decay >= 0.0 && decay.is_finite()) {
            return Err(Error::InvalidConfig(format!("invalid learning rate {self:?}")));
        }
        Ok(())
    }
}

/// How the training loop visits tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOrder {
    /// One full episode of task 0, then task 1, ..., then back to task 0.
    #[default]
    RoundRobin,
    /// One step of each task in turn, each task keeping its own episode.
    Interleaved,
}

fn default_gamma() -> f64 {
    0.9
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_episodes() -> usize {
    100
}
fn default_episode_len() -> usize {
    100
}
fn default_eval_episodes() -> usize {
    5
}
fn default_clip() -> Option<f64> {
    Some(1.0)
}

/// Learner settings. `rank` has no default and must always be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub rank: usize,
    /// Per-task loss weights; all ones when absent.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub learning_rate: LearningRate,
    #[serde(default = "default_episodes")]
    pub episodes_per_task: usize,
    /// Episode length `T`.
    #[serde(default = "default_episode_len")]
    pub episode_len: usize,
    /// Total transitions `N`; `M * episodes_per_task * episode_len` when absent.
    #[serde(default)]
    pub total_iterations: Option<u64>,
    /// Transitions between evaluations; ten episodes when absent.
    #[serde(default)]
    pub eval_interval: Option<u64>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Score evaluation episodes with `gamma^t` instead of plain sums.
    #[serde(default)]
    pub eval_discounted: bool,
    #[serde(default)]
    pub seed: u64,
    /// Per-row gradient 2-norm cap; `null` disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
    /// Bootstrap from an epsilon-greedy next action instead of the greedy one.
    #[serde(default)]
    pub exploratory_target: bool,
    #[serde(default)]
    pub task_order: TaskOrder,
    #[serde(default)]
    pub init: FactorInit,
}

impl Hyperparams {
    /// Defaults for everything except the rank.
    pub fn with_rank(rank: usize) -> Self {
        Hyperparams {
            gamma: default_gamma(),
            epsilon: default_epsilon(),
            rank,
            lambdas: None,
            learning_rate: LearningRate::default(),
            episodes_per_task: default_episodes(),
            episode_len: default_episode_len(),
            total_iterations: None,
            eval_interval: None,
            eval_episodes: default_eval_episodes(),
            eval_discounted: false,
            seed: 0,
            grad_clip: default_clip(),
            exploratory_target: false,
            task_order: TaskOrder::default(),
            init: FactorInit::default(),
        }
    }

    pub fn total_iterations(&self, n_tasks: usize) -> u64 {
        self.total_iterations
            .unwrap_or((n_tasks * self.episodes_per_task * self.episode_len) as u64)
    }

    pub fn eval_interval(&self) -> u64 {
        self.eval_interval.unwrap_or(10 * self.episode_len as u64)
    }

    pub fn lambdas_for(&self, n_tasks: usize) -> Result<Vec<f64>> {
        match &self.lambdas {
            None => Ok(vec![1.0; n_tasks]),
            Some(l) if l.len() == n_tasks => Ok(l.clone()),
            Some(l) => Err(Error::InvalidConfig(format!(
                "{} task weights for {n_tasks} tasks",
                l.len()
            ))),
        }
    }

    pub fn validate(&self, n_tasks: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if self.rank == 0 {
            return Err(Error::ZeroRank);
        }
        if self.lambdas_for(n_tasks)?.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return bad("task weights must be positive".into());
        }
        self.learning_rate.validate()?;
        if self.episodes_per_task == 0 || self.episode_len == 0 || self.eval_episodes == 0 {
            return bad("episode counts and lengths must be positive".into());
        }
        let n = self.total_iterations(n_tasks);
        if self.eval_interval() == 0 || (n > 0 && self.eval_interval() > n) {
            return bad(format!(
                "eval interval {} must lie in [1, N = {n}]",
                self.eval_interval()
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be positive when set".into());
            }
        }
        Ok(())
    }
}

/// Anything that scores actions and can act greedily.
pub trait QFunction {
    fn n_actions(&self) -> usize;

    /// Smallest action index attaining `max_a Q(state, a, task)`, and that maximum.
    fn greedy(&self, state: usize, task: usize) -> (usize, f64);
}

impl QFunction for FactorSet {
    fn n_actions(&self) -> usize {
        self.dims().n_actions
    }

    fn greedy(&self, state: usize, task: usize) -> (usize, f64) {
        self.greedy_action(state, task)
    }
}

/// Epsilon-greedy behaviour: greedy with probability `1 - epsilon`, otherwise
/// uniform over all actions (the greedy one included).
pub fn select_action<Q: QFunction + ?Sized>(
    q: &Q,
    state: usize,
    task: usize,
    epsilon: f64,
    rng: &mut SimRng,
) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.n_actions())
    } else {
        q.greedy(state, task).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    #[test]
    fn learning_rate_schedules() {
        assert_eq!(LearningRate::Constant { eta0: 0.05 }.rate(1_000_000), 0.05);
        let inv = LearningRate::InverseStep { eta0: 1.0, decay: 1.0 };
        assert!((inv.rate(9) - 0.1).abs() < 1e-15);
        let inv = LearningRate::InverseStep { eta0: 0.3, decay: 0.01 };
        let rates: Vec<f64> = (0..1000).map(|n| inv.rate(n)).collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0] && w[1] > 0.0));
    }

    #[test]
    fn epsilon_zero_is_greedy() {
        let fs = FactorSet::from_factors(array![[1.0]], array![[0.1], [0.9], [0.5]], array![[1.0]]).unwrap();
        let mut g = rng::seeded(0);
        assert!((0..1000).all(|_| select_action(&fs, 0, 0, 0.0, &mut g) == 1));
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let fs = FactorSet::from_factors(array![[1.0]], array![[0.1], [0.9], [0.5], [0.2]], array![[1.0]])
            .unwrap();
        let mut g = rng::seeded(1);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[select_action(&fs, 0, 0, 1.0, &mut g)] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / 4.0).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn hyperparams_validation() {
        let h = Hyperparams::with_rank(2);
        h.validate(4).unwrap();
        assert!(Hyperparams { rank: 0, ..h.clone() }.validate(4).is_err());
        assert!(Hyperparams { gamma: 1.0, ..h.clone() }.validate(4).is_err());
        assert!(Hyperparams { epsilon: 1.5, ..h.clone() }.validate(4).is_err());
        assert!(Hyperparams { lambdas: Some(vec![1.0; 3]), ..h.clone() }.validate(4).is_err());
        assert!(Hyperparams { lambdas: Some(vec![1.0, 0.0]), ..h.clone() }.validate(2).is_err());
        assert!(Hyperparams { eval_interval: Some(10_000_000), ..h.clone() }.validate(4).is_err());
        assert_eq!(h.total_iterations(4), 4 * 100 * 100);
        assert_eq!(h.eval_interval(), 1000);
    }

    #[test]
    fn hyperparams_require_rank_in_json() {
        assert!(serde_json::from_str::<Hyperparams>("{}").is_err());
        let h: Hyperparams = serde_json::from_str(r#"{"rank": 3}"#).unwrap();
        assert_eq!(h, Hyperparams::with_rank(3));
        let h: Hyperparams = serde_json::from_str(
            r#"{"rank": 3, "grad_clip": null, "learning_rate": {"kind": "inverse_step", "eta0": 0.1, "decay": 0.001}}"#,
        )
        .unwrap();
        assert_eq!(h.grad_clip, None);
        assert_eq!(h.learning_rate, LearningRate::InverseStep { eta0: 0.1, decay: 0.001 });
    }
}
