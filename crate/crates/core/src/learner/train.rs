//! Training loops for S-TLR-Q and the two low-rank baselines.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Step, TaskSuite};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};
use crate::tensor::{Dims, FactorSet, FactorSnapshot};

use super::gradient::{apply_update, residual_gradients, td_error, td_error_towards};
use super::{select_action, Hyperparams, QFunction, TaskOrder, Transition};

/// Learner family. Ordered by name, which is also the export order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Clrq,
    Lrq,
    Stlrq,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Clrq, Algorithm::Lrq, Algorithm::Stlrq];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Clrq => "clrq",
            Algorithm::Lrq => "lrq",
            Algorithm::Stlrq => "stlrq",
        }
    }

    /// Display label used in plots.
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Clrq => "C-LR-Q",
            Algorithm::Lrq => "LR-Q",
            Algorithm::Stlrq => "S-TLR-Q",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm {s:?}")))
    }
}

/// A trained (or training) model of any of the three learners.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    /// One `|S| x |A| x M` tensor.
    Joint(FactorSet),
    /// One `|S| x |A| x 1` model per task.
    Independent(Vec<FactorSet>),
    /// One `|S| x |A| x 1` model for every task.
    Shared(FactorSet),
}

impl Model {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            Model::Joint(_) => Algorithm::Stlrq,
            Model::Independent(_) => Algorithm::Lrq,
            Model::Shared(_) => Algorithm::Clrq,
        }
    }

    pub fn factor_sets(&self) -> Vec<&FactorSet> {
        match self {
            Model::Joint(fs) | Model::Shared(fs) => vec![fs],
            Model::Independent(v) => v.iter().collect(),
        }
    }

    /// Total number of learned parameters.
    pub fn dof(&self) -> usize {
        self.factor_sets().iter().map(|fs| fs.dof()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.factor_sets().iter().all(|fs| fs.is_finite())
    }

    /// The factor set and its task index that answer queries for `task`.
    pub fn route(&self, task: usize) -> (&FactorSet, usize) {
        match self {
            Model::Joint(fs) => (fs, task),
            Model::Independent(v) => (&v[task], 0),
            Model::Shared(fs) => (fs, 0),
        }
    }

    /// `Q(state, action, task)` as seen by the policy for `task`.
    pub fn evaluate(&self, state: usize, action: usize, task: usize) -> f64 {
        let (fs, m) = self.route(task);
        fs.evaluate(state, action, m)
    }

    pub fn to_snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            algorithm: self.algorithm(),
            factors: self.factor_sets().iter().map(|fs| fs.to_snapshot()).collect(),
        }
    }

    pub fn from_snapshot(snap: &ModelSnapshot) -> Result<Self> {
        let mut sets = snap
            .factors
            .iter()
            .map(FactorSet::from_snapshot)
            .collect::<Result<Vec<_>>>()?;
        let single = |sets: &mut Vec<FactorSet>| {
            if sets.len() != 1 {
                return Err(Error::Snapshot(format!(
                    "{} snapshot must hold exactly one factor set",
                    snap.algorithm
                )));
            }
            Ok(sets.pop().unwrap())
        };
        Ok(match snap.algorithm {
            Algorithm::Stlrq => Model::Joint(single(&mut sets)?),
            Algorithm::Clrq => Model::Shared(single(&mut sets)?),
            Algorithm::Lrq if !sets.is_empty() => Model::Independent(sets),
            Algorithm::Lrq => return Err(Error::Snapshot("empty LR-Q snapshot".into())),
        })
    }
}

impl QFunction for Model {
    fn n_actions(&self) -> usize {
        self.route(0).0.dims().n_actions
    }

    fn greedy(&self, state: usize, task: usize) -> (usize, f64) {
        let (fs, m) = self.route(task);
        fs.greedy_action(state, m)
    }
}

/// Serialized model: the algorithm tag plus its factor sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub algorithm: Algorithm,
    pub factors: Vec<FactorSnapshot>,
}

/// Receives the model at every evaluation point of a run.
pub trait CheckpointSink {
    fn checkpoint(&mut self, iteration: u64, model: &Model);
}

impl<F: FnMut(u64, &Model)> CheckpointSink for F {
    fn checkpoint(&mut self, iteration: u64, model: &Model) {
        self(iteration, model)
    }
}

/// Ignores checkpoints.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoCheckpoints;

impl CheckpointSink for NoCheckpoints {
    fn checkpoint(&mut self, _: u64, _: &Model) {}
}

/// Counters collected while training.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainStats {
    pub transitions: u64,
    pub transitions_per_task: Vec<u64>,
    /// Parameter updates applied to each model (one entry per factor set).
    pub updates_per_model: Vec<u64>,
    pub checkpoints: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub stats: TrainStats,
}

/// Which next action the TD target bootstraps from.
#[derive(Debug, Clone, Copy)]
enum Target {
    Greedy,
    Fixed(usize),
}

/// Settings shared by every single update.
struct StepRule {
    gamma: f64,
    clip: Option<f64>,
}

impl StepRule {
    fn update(&self, fs: &mut FactorSet, t: &Transition, lambda: f64, eta: f64, target: Target) {
        let delta = match target {
            Target::Greedy => td_error(fs, t, self.gamma),
            Target::Fixed(a) => td_error_towards(fs, t, self.gamma, a),
        };
        let mut g = residual_gradients(fs, t, lambda, delta);
        if let Some(c) = self.clip {
            g.clip_rows(c);
        }
        apply_update(fs, &g, eta);
    }
}

fn init_model(algorithm: Algorithm, suite: &TaskSuite, hyper: &Hyperparams) -> Result<Model> {
    let n_tasks = suite.n_tasks();
    let factor_set = |index: usize, tasks: usize| {
        let dims = Dims::new(suite.n_states(), suite.n_actions(), tasks)?;
        let seed = rng::derive_seed(hyper.seed, &[rng::tag::INIT, index as u64]);
        FactorSet::with_init(dims, hyper.rank, seed, hyper.init)
    };
    Ok(match algorithm {
        Algorithm::Stlrq => Model::Joint(factor_set(0, n_tasks)?),
        Algorithm::Lrq => Model::Independent(
            (0..n_tasks)
                .map(|m| factor_set(m, 1))
                .collect::<Result<_>>()?,
        ),
        Algorithm::Clrq => Model::Shared(factor_set(0, 1)?),
    })
}

struct Runner<'a> {
    suite: &'a mut TaskSuite,
    hyper: &'a Hyperparams,
    rng: &'a mut SimRng,
    sink: &'a mut dyn CheckpointSink,
    lambdas: Vec<f64>,
    rule: StepRule,
    total: u64,
    interval: u64,
    n: u64,
    model: Model,
    stats: TrainStats,
}

impl Runner<'_> {
    fn emit(&mut self) -> Result<()> {
        if !self.model.is_finite() {
            return Err(Error::Diverged { iteration: self.n });
        }
        self.stats.checkpoints.push(self.n);
        self.sink.checkpoint(self.n, &self.model);
        Ok(())
    }

    fn learn(&mut self, t: Transition) {
        let hyper = self.hyper;
        let eta = hyper.learning_rate.rate(self.n);
        let target = if hyper.exploratory_target && self.rng.random::<f64>() < hyper.epsilon {
            Target::Fixed(self.rng.random_range(0..self.suite.n_actions()))
        } else {
            Target::Greedy
        };
        let lambda = self.lambdas[t.task];
        let n_tasks = self.suite.n_tasks();
        match &mut self.model {
            Model::Joint(fs) => {
                self.rule.update(fs, &t, lambda, eta, target);
                self.stats.updates_per_model[0] += 1;
            }
            Model::Independent(models) => {
                let local = Transition { task: 0, ..t };
                for _ in 0..n_tasks {
                    self.rule.update(&mut models[t.task], &local, lambda, eta, target);
                }
                self.stats.updates_per_model[t.task] += n_tasks as u64;
            }
            Model::Shared(fs) => {
                self.rule.update(fs, &Transition { task: 0, ..t }, lambda, eta, target);
                self.stats.updates_per_model[0] += 1;
            }
        }
        self.stats.transitions += 1;
        self.stats.transitions_per_task[t.task] += 1;
    }

    /// Samples and learns from one transition of `task` starting at `state`.
    fn advance(&mut self, task: usize, state: usize) -> Result<Step> {
        let action = select_action(&self.model, state, task, self.hyper.epsilon, self.rng);
        let step = self.suite.step(task, action);
        self.learn(Transition {
            task,
            state,
            action,
            reward: step.reward,
            next_state: step.next_state,
        });
        self.n += 1;
        if self.n.is_multiple_of(self.interval) || self.n == self.total {
            self.emit()?;
        }
        Ok(step)
    }

    fn round_robin(&mut self) -> Result<()> {
        let n_tasks = self.suite.n_tasks();
        while self.n < self.total {
            for task in 0..n_tasks {
                let mut state = self.suite.reset(task);
                for _ in 0..self.hyper.episode_len {
                    if self.n >= self.total {
                        return Ok(());
                    }
                    let step = self.advance(task, state)?;
                    if step.done {
                        break;
                    }
                    state = step.next_state;
                }
            }
        }
        Ok(())
    }

    fn interleaved(&mut self) -> Result<()> {
        let n_tasks = self.suite.n_tasks();
        // (state, steps taken) of each task's running episode
        let mut current: Vec<Option<(usize, usize)>> = vec![None; n_tasks];
        while self.n < self.total {
            for task in 0..n_tasks {
                if self.n >= self.total {
                    return Ok(());
                }
                let (state, elapsed) = match current[task] {
                    Some(c) => c,
                    None => (self.suite.reset(task), 0),
                };
                let step = self.advance(task, state)?;
                current[task] = if step.done || elapsed + 1 >= self.hyper.episode_len {
                    None
                } else {
                    Some((step.next_state, elapsed + 1))
                };
            }
        }
        Ok(())
    }
}

/// Runs one learner on `suite`.
///
/// Transitions are sampled with epsilon-greedy behaviour from the current
/// model; `rng` drives behaviour (and exploratory targets) only, while each
/// environment draws from its own stream. The sink sees the model at `n = 0`,
/// after every `eval_interval` transitions, and at `n = N`.
pub fn train(
    algorithm: Algorithm,
    suite: &mut TaskSuite,
    hyper: &Hyperparams,
    rng: &mut SimRng,
    sink: &mut dyn CheckpointSink,
) -> Result<TrainOutcome> {
    let n_tasks = suite.n_tasks();
    hyper.validate(n_tasks)?;
    let model = init_model(algorithm, suite, hyper)?;
    let stats = TrainStats {
        transitions_per_task: vec![0; n_tasks],
        updates_per_model: vec![0; model.factor_sets().len()],
        ..Default::default()
    };
    let mut runner = Runner {
        lambdas: hyper.lambdas_for(n_tasks)?,
        rule: StepRule {
            gamma: hyper.gamma,
            clip: hyper.grad_clip,
        },
        total: hyper.total_iterations(n_tasks),
        interval: hyper.eval_interval(),
        n: 0,
        model,
        stats,
        suite,
        hyper,
        rng,
        sink,
    };
    runner.emit()?;
    match hyper.task_order {
        TaskOrder::RoundRobin => runner.round_robin()?,
        TaskOrder::Interleaved => runner.interleaved()?,
    }
    Ok(TrainOutcome {
        model: runner.model,
        stats: runner.stats,
    })
}

/// S-TLR-Q: joint low-rank tensor learner.
pub fn run_stlrq(
    suite: &mut TaskSuite,
    hyper: &Hyperparams,
    rng: &mut SimRng,
    sink: &mut dyn CheckpointSink,
) -> Result<TrainOutcome> {
    train(Algorithm::Stlrq, suite, hyper, rng, sink)
}

/// LR-Q: independent per-task low-rank learners, `M` updates per transition.
pub fn run_lrq(
    suite: &mut TaskSuite,
    hyper: &Hyperparams,
    rng: &mut SimRng,
    sink: &mut dyn CheckpointSink,
) -> Result<TrainOutcome> {
    train(Algorithm::Lrq, suite, hyper, rng, sink)
}

/// C-LR-Q: one low-rank learner shared by all tasks.
pub fn run_clrq(
    suite: &mut TaskSuite,
    hyper: &Hyperparams,
    rng: &mut SimRng,
    sink: &mut dyn CheckpointSink,
) -> Result<TrainOutcome> {
    train(Algorithm::Clrq, suite, hyper, rng, sink)
}
