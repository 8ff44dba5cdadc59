//! Brute-force references for the learners: exact value iteration on explicit
//! MDPs and central finite differences of the frozen-target loss.

use ndarray::Array2;
use rand::Rng;

use crate::envs::ChainMdpSpec;
use crate::error::{Error, Result};
use crate::learner::{semi_gradients, QFunction, RowGrad, SparseGrad, Transition};
use crate::rng;
use crate::tensor::{Dims, FactorSet};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 100_000;
pub const DEFAULT_STEP: f64 = 1e-5;

/// Dense `|S| x |A|` action-value table.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseQ(pub Array2<f64>);

impl DenseQ {
    pub fn n_states(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.0.ncols()
    }

    pub fn max_value(&self, state: usize) -> f64 {
        self.0.row(state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lowest-index maximizing action of every state.
    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.n_states())
            .map(|s| {
                let row = self.0.row(s);
                let best = self.max_value(s);
                row.iter().position(|&v| v == best).unwrap_or(0)
            })
            .collect()
    }

    pub fn sup_distance(&self, other: &DenseQ) -> f64 {
        (&self.0 - &other.0).iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// One Bellman optimality backup
/// `Q'(s, a) = r(s, a) + gamma * sum_s' P(s' | s, a) max_a' Q(s', a')`.
pub fn bellman_backup(spec: &ChainMdpSpec, q: &DenseQ) -> DenseQ {
    let v: Vec<f64> = (0..spec.n_states).map(|s| q.max_value(s)).collect();
    DenseQ(Array2::from_shape_fn((spec.n_states, spec.n_actions), |(s, a)| {
        let expected: f64 = spec
            .transition_row(s, a)
            .iter()
            .zip(&v)
            .map(|(p, v)| p * v)
            .sum();
        spec.reward(s, a) + spec.gamma * expected
    }))
}

/// Iterates [`bellman_backup`] from `Q = 0` until the sup-norm change drops
/// below `tol`.
pub fn value_iteration(spec: &ChainMdpSpec, tol: f64, max_iters: usize) -> Result<DenseQ> {
    spec.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig("value iteration tolerance must be positive".into()));
    }
    let mut q = DenseQ(Array2::zeros((spec.n_states, spec.n_actions)));
    let mut change = f64::INFINITY;
    for _ in 0..max_iters {
        let next = bellman_backup(spec, &q);
        change = next.sup_distance(&q);
        q = next;
        if change < tol {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: change,
    })
}

/// Which factor matrix an entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    State,
    Action,
    Task,
}

/// `lambda * (target - Q(s, a, m))^2` with the target held at `target`.
fn frozen_loss(fs: &FactorSet, t: &Transition, lambda: f64, target: f64) -> f64 {
    let r = target - fs.evaluate(t.state, t.action, t.task);
    lambda * r * r
}

fn frozen_target(fs: &FactorSet, t: &Transition, gamma: f64) -> f64 {
    // The max is taken by a plain scan, independently of FactorSet::greedy_action.
    let next = (0..fs.dims().n_actions)
        .map(|a| fs.evaluate(t.next_state, a, t.task))
        .fold(f64::NEG_INFINITY, f64::max);
    t.reward + gamma * next
}

fn central_difference(
    fs: &FactorSet,
    t: &Transition,
    lambda: f64,
    target: f64,
    h: f64,
    factor: Factor,
    row: usize,
    col: usize,
) -> f64 {
    let mut probe = fs.clone();
    let x = *entry_mut(&mut probe, factor, row, col);
    *entry_mut(&mut probe, factor, row, col) = x + h;
    let plus = frozen_loss(&probe, t, lambda, target);
    *entry_mut(&mut probe, factor, row, col) = x - h;
    let minus = frozen_loss(&probe, t, lambda, target);
    (plus - minus) / (2.0 * h)
}

fn entry_mut(fs: &mut FactorSet, factor: Factor, row: usize, col: usize) -> &mut f64 {
    let q = match factor {
        Factor::State => fs.q1_mut(),
        Factor::Action => fs.q2_mut(),
        Factor::Task => fs.q3_mut(),
    };
    &mut q[[row, col]]
}

/// Central-difference derivative of the frozen-target loss with respect to a
/// single factor entry. The target is computed once from the unperturbed `fs`.
pub fn finite_diff_entry(
    fs: &FactorSet,
    t: &Transition,
    gamma: f64,
    lambda: f64,
    h: f64,
    factor: Factor,
    row: usize,
    col: usize,
) -> f64 {
    let target = frozen_target(fs, t, gamma);
    central_difference(fs, t, lambda, target, h, factor, row, col)
}

/// Central differences over the three rows a transition touches.
pub fn finite_diff_semigrad(fs: &FactorSet, t: &Transition, gamma: f64, lambda: f64, h: f64) -> SparseGrad {
    let target = frozen_target(fs, t, gamma);
    let row = |factor: Factor, index: usize| RowGrad {
        row: index,
        values: (0..fs.rank())
            .map(|k| central_difference(fs, t, lambda, target, h, factor, index, k))
            .collect(),
    };
    SparseGrad {
        state: row(Factor::State, t.state),
        action: row(Factor::Action, t.action),
        task: row(Factor::Task, t.task),
    }
}

/// `|a - b| / max(1, |a|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Largest relative error between two sparse gradients over matching rows.
/// Returns infinity if the touched rows differ.
pub fn max_relative_error(analytic: &SparseGrad, numeric: &SparseGrad) -> f64 {
    analytic
        .rows()
        .iter()
        .zip(numeric.rows())
        .map(|(a, n)| {
            if a.row != n.row || a.values.len() != n.values.len() {
                return f64::INFINITY;
            }
            a.values
                .iter()
                .zip(&n.values)
                .map(|(&x, &y)| relative_error(x, y))
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Largest disagreement found by [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub instances: usize,
    pub max_relative_error: f64,
    pub worst: Option<(Dims, usize, Transition)>,
}

/// Compares analytic semi-gradients with central differences on `instances`
/// random problems with dims up to `max_dims`, rank up to `max_rank` and
/// Uniform(0, 1) factors.
pub fn gradient_check(instances: usize, max_dims: Dims, max_rank: usize, seed: u64) -> Result<GradCheckReport> {
    max_dims.validate()?;
    if max_rank == 0 {
        return Err(Error::ZeroRank);
    }
    let mut rng = rng::seeded(seed);
    let mut report = GradCheckReport {
        instances,
        max_relative_error: 0.0,
        worst: None,
    };
    for _ in 0..instances {
        let dims = Dims::new(
            rng.random_range(1..=max_dims.n_states),
            rng.random_range(1..=max_dims.n_actions),
            rng.random_range(1..=max_dims.n_tasks),
        )?;
        let rank = rng.random_range(1..=max_rank);
        let fs = FactorSet::new(dims, rank, rng.random())?;
        let t = Transition {
            task: rng.random_range(0..dims.n_tasks),
            state: rng.random_range(0..dims.n_states),
            action: rng.random_range(0..dims.n_actions),
            reward: rng.random_range(-2.0..2.0),
            next_state: rng.random_range(0..dims.n_states),
        };
        let gamma = rng.random_range(0.0..0.99);
        let lambda = rng.random_range(0.1..2.0);
        let err = max_relative_error(
            &semi_gradients(&fs, &t, gamma, lambda),
            &finite_diff_semigrad(&fs, &t, gamma, lambda, DEFAULT_STEP),
        );
        if err >= report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((dims, rank, t));
        }
    }
    Ok(report)
}

const MATCH_TOL: f64 = 1e-9;

/// Fraction of states whose greedy action under `q` for `task` is optimal
/// for `qstar` (within `1e-9` of the state's best value).
pub fn policy_match<Q: QFunction + ?Sized>(q: &Q, task: usize, qstar: &DenseQ) -> f64 {
    let n = qstar.n_states();
    let hits = (0..n)
        .filter(|&s| {
            let (a, _) = q.greedy(s, task);
            qstar.0[[s, a]] >= qstar.max_value(s) - MATCH_TOL
        })
        .count();
    hits as f64 / n as f64
}
