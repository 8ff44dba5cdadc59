//! Seeded replications, greedy-policy evaluation, aggregation and export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{Environment, SuiteConfig, TaskSuite};
use crate::error::{Error, Result};
use crate::learner::{self, Algorithm, CheckpointSink, Hyperparams, LearningRate, Model, QFunction, TrainStats};
use crate::rng::{self, SimRng};

pub mod aggregate;
pub mod export;
pub mod stats;

pub use aggregate::{aggregate, Band};
pub use export::{read_csv, write_csv, write_plots, write_summary_csv};

fn default_replications() -> usize {
    20
}

fn default_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

/// Per-algorithm replacements for fields of the shared hyperparameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<LearningRate>,
}

impl HyperOverride {
    pub fn apply(&self, base: &Hyperparams) -> Hyperparams {
        let mut h = base.clone();
        if let Some(g) = self.gamma {
            h.gamma = g;
        }
        if let Some(e) = self.epsilon {
            h.epsilon = e;
        }
        if let Some(k) = self.rank {
            h.rank = k;
        }
        if let Some(lr) = &self.learning_rate {
            h.learning_rate = *lr;
        }
        h
    }
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub suite: SuiteConfig,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Replication `r` runs with seed `base_seed + r`.
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub hyper: Hyperparams,
    /// Tuned settings that differ between algorithms.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<Algorithm, HyperOverride>,
}

impl ExperimentConfig {
    /// Shared hyperparameters with the overrides of `algorithm` applied.
    pub fn hyper_for(&self, algorithm: Algorithm) -> Hyperparams {
        match self.overrides.get(&algorithm) {
            Some(o) => o.apply(&self.hyper),
            None => self.hyper.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.suite.validate()?;
        self.hyper.validate(self.suite.n_tasks())?;
        for (algorithm, o) in &self.overrides {
            o.apply(&self.hyper)
                .validate(self.suite.n_tasks())
                .map_err(|e| Error::InvalidConfig(format!("{algorithm} override: {e}")))?;
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be positive".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidConfig("no algorithm selected".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.replications as u64).map(|r| self.base_seed.wrapping_add(r))
    }
}

/// One evaluation: mean greedy return of `algorithm` on `task` after
/// `iteration` training transitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub task: usize,
    pub iteration: u64,
    #[serde(rename = "return")]
    pub value: f64,
}

impl Record {
    fn key(&self) -> (Algorithm, u64, usize, u64) {
        (self.algorithm, self.seed, self.task, self.iteration)
    }
}

/// Sorts by algorithm name, then seed, task and iteration.
pub fn sort_records(records: &mut [Record]) {
    records.sort_by_key(Record::key);
}

/// Final state of one completed replication.
#[derive(Debug, Clone)]
pub struct Run {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub model: Model,
    pub stats: TrainStats,
}

/// A replication that stopped with an error.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResult {
    /// Sorted as by [`sort_records`].
    pub records: Vec<Record>,
    /// Completed runs, sorted by algorithm then seed.
    pub runs: Vec<Run>,
    pub failures: Vec<RunFailure>,
}

/// Mean return of `episodes` greedy episodes of at most `horizon` steps of
/// `env`, acting for `task`. `discount` switches to `sum gamma^t r_t`.
pub fn evaluate_policy<Q: QFunction + ?Sized>(
    q: &Q,
    task: usize,
    env: &mut dyn Environment,
    horizon: usize,
    episodes: usize,
    rng: &mut SimRng,
    discount: Option<f64>,
) -> f64 {
    assert!(episodes >= 1, "need at least one evaluation episode");
    let gamma = discount.unwrap_or(1.0);
    let total: f64 = (0..episodes)
        .map(|_| {
            let mut state = env.reset(rng);
            let (mut ret, mut weight) = (0.0, 1.0);
            for _ in 0..horizon {
                let step = env.step(q.greedy(state, task).0, rng);
                ret += weight * step.reward;
                weight *= gamma;
                if step.done {
                    break;
                }
                state = step.next_state;
            }
            ret
        })
        .sum();
    total / episodes as f64
}

/// Scores every task at each checkpoint on a dedicated copy of the suite.
///
/// The evaluation stream of `(seed, n, task)` does not depend on the
/// algorithm, so all learners are scored on the same episodes.
struct Evaluator {
    algorithm: Algorithm,
    seed: u64,
    suite: TaskSuite,
    horizon: usize,
    episodes: usize,
    discount: Option<f64>,
    records: Vec<Record>,
}

impl CheckpointSink for Evaluator {
    fn checkpoint(&mut self, iteration: u64, model: &Model) {
        for task in 0..self.suite.n_tasks() {
            let mut rng = rng::stream(self.seed, &[rng::tag::EVAL, iteration, task as u64]);
            let value = evaluate_policy(
                model,
                task,
                self.suite.env_mut(task),
                self.horizon,
                self.episodes,
                &mut rng,
                self.discount,
            );
            self.records.push(Record {
                algorithm: self.algorithm,
                seed: self.seed,
                task,
                iteration,
                value,
            });
        }
    }
}

/// Trains `algorithm` once with `seed` and evaluates at every checkpoint.
pub fn run_replication(cfg: &ExperimentConfig, algorithm: Algorithm, seed: u64) -> Result<(Run, Vec<Record>)> {
    let hyper = Hyperparams {
        seed,
        ..cfg.hyper_for(algorithm)
    };
    let horizon = hyper.episode_len;
    let mut suite = cfg.suite.build(horizon, seed)?;
    let mut evaluator = Evaluator {
        algorithm,
        seed,
        suite: cfg.suite.build(horizon, rng::derive_seed(seed, &[rng::tag::EVAL]))?,
        horizon,
        episodes: hyper.eval_episodes,
        discount: hyper.eval_discounted.then_some(hyper.gamma),
        records: Vec::new(),
    };
    let mut behaviour = rng::stream(seed, &[rng::tag::BEHAVIOR]);
    let outcome = learner::train(algorithm, &mut suite, &hyper, &mut behaviour, &mut evaluator)?;
    let run = Run {
        algorithm,
        seed,
        model: outcome.model,
        stats: outcome.stats,
    };
    Ok((run, evaluator.records))
}

/// Runs every (algorithm, seed) replication on a pool of `threads` workers
/// (all cores when `None`). Output does not depend on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let jobs: Vec<(Algorithm, u64)> = cfg
        .algorithms
        .iter()
        .flat_map(|&a| cfg.seeds().map(move |s| (a, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|&(a, s)| (a, s, run_replication(cfg, a, s)))
            .collect()
    });

    let mut result = ExperimentResult::default();
    for (algorithm, seed, outcome) in outcomes {
        match outcome {
            Ok((run, records)) => {
                result.runs.push(run);
                result.records.extend(records);
            }
            Err(e) => result.failures.push(RunFailure {
                algorithm,
                seed,
                message: e.to_string(),
            }),
        }
    }
    sort_records(&mut result.records);
    result.runs.sort_by_key(|r| (r.algorithm, r.seed));
    result.failures.sort_by_key(|f| (f.algorithm, f.seed));
    Ok(result)
}
