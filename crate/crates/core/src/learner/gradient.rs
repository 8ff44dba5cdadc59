//! TD residuals and sparse semi-gradients of the multi-task loss.
//!
//! For a transition `(s, a, r, s')` of task `m` the frozen-target loss is
//! `lambda_m * (y - Q(s, a, m))^2` with `y = r + gamma * max_a' Q(s', a', m)`
//! held constant. Its gradient touches exactly one row of each factor:
//! row `s` of `q1`, row `a` of `q2` and row `m` of `q3`.

use crate::error::{Error, Result};
use crate::tensor::FactorSet;

use super::{Hyperparams, Transition, TrajectorySet};

/// `r + gamma * max_a' Q(s', a', m) - Q(s, a, m)`.
pub fn td_error(fs: &FactorSet, t: &Transition, gamma: f64) -> f64 {
    let (_, next_value) = fs.greedy_action(t.next_state, t.task);
    t.reward + gamma * next_value - fs.evaluate(t.state, t.action, t.task)
}

/// TD residual bootstrapped from a fixed next action instead of the greedy one.
pub fn td_error_towards(fs: &FactorSet, t: &Transition, gamma: f64, next_action: usize) -> f64 {
    t.reward + gamma * fs.evaluate(t.next_state, next_action, t.task)
        - fs.evaluate(t.state, t.action, t.task)
}

/// Gradient restricted to a single row of one factor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGrad {
    pub row: usize,
    pub values: Vec<f64>,
}

impl RowGrad {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn clip(&mut self, max_norm: f64) {
        let norm = self.norm();
        if norm > max_norm {
            let c = max_norm / norm;
            self.values.iter_mut().for_each(|v| *v *= c);
        }
    }
}

/// Semi-gradient of one transition: one row per factor, all other rows zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrad {
    pub state: RowGrad,
    pub action: RowGrad,
    pub task: RowGrad,
}

impl SparseGrad {
    /// Rescales each row independently so its 2-norm is at most `max_norm`.
    pub fn clip_rows(&mut self, max_norm: f64) {
        self.state.clip(max_norm);
        self.action.clip(max_norm);
        self.task.clip(max_norm);
    }

    pub fn rows(&self) -> [&RowGrad; 3] {
        [&self.state, &self.action, &self.task]
    }

    pub fn is_zero(&self) -> bool {
        self.rows().iter().all(|r| r.values.iter().all(|&v| v == 0.0))
    }
}

/// Semi-gradients of the frozen-target loss for one transition.
pub fn semi_gradients(fs: &FactorSet, t: &Transition, gamma: f64, lambda: f64) -> SparseGrad {
    residual_gradients(fs, t, lambda, td_error(fs, t, gamma))
}

/// Semi-gradients for a precomputed TD residual `delta`:
///
/// ```text
/// d/dq1[s,k] = -2 lambda delta q2[a,k] q3[m,k]
/// d/dq2[a,k] = -2 lambda delta q1[s,k] q3[m,k]
/// d/dq3[m,k] = -2 lambda delta q1[s,k] q2[a,k]
/// ```
pub fn residual_gradients(fs: &FactorSet, t: &Transition, lambda: f64, delta: f64) -> SparseGrad {
    let c = -2.0 * lambda * delta;
    let (u, v, w) = (fs.q1().row(t.state), fs.q2().row(t.action), fs.q3().row(t.task));
    let rank = fs.rank();
    SparseGrad {
        state: RowGrad {
            row: t.state,
            values: (0..rank).map(|k| c * v[k] * w[k]).collect(),
        },
        action: RowGrad {
            row: t.action,
            values: (0..rank).map(|k| c * u[k] * w[k]).collect(),
        },
        task: RowGrad {
            row: t.task,
            values: (0..rank).map(|k| c * u[k] * v[k]).collect(),
        },
    }
}

/// `fs <- fs - eta * g` on the three touched rows. Every gradient in `g` was
/// computed from the same iterate, so the three blocks move simultaneously.
pub fn apply_update(fs: &mut FactorSet, g: &SparseGrad, eta: f64) {
    if eta == 0.0 {
        return;
    }
    let (q1, q2, q3) = fs.factors_mut();
    for (q, grad) in [(q1, &g.state), (q2, &g.action), (q3, &g.task)] {
        q.row_mut(grad.row)
            .iter_mut()
            .zip(&grad.values)
            .for_each(|(x, d)| *x -= eta * d);
    }
}

/// `sum_m lambda_m sum_l delta_l^2` over a batch of transitions.
pub fn batch_loss(fs: &FactorSet, data: &TrajectorySet, hyper: &Hyperparams) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData("batch loss needs at least one transition"));
    }
    let lambdas = hyper.lambdas_for(data.n_tasks())?;
    Ok(data
        .per_task()
        .iter()
        .zip(&lambdas)
        .map(|(ts, lambda)| {
            lambda
                * ts.iter()
                    .map(|t| td_error(fs, t, hyper.gamma).powi(2))
                    .sum::<f64>()
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;
    use ndarray::array;

    fn worked_example() -> (FactorSet, Transition) {
        // K = 1, q1[s] = 2, q2[a] = 3, q3[m] = 4 and a residual of exactly 1.
        let fs = FactorSet::from_factors(array![[2.0], [0.0]], array![[3.0]], array![[4.0]]).unwrap();
        // Q(0,0,0) = 24; next state 1 has Q = 0, so delta = r - 24.
        let t = Transition { task: 0, state: 0, action: 0, reward: 25.0, next_state: 1 };
        (fs, t)
    }

    #[test]
    fn td_error_on_zero_model_is_the_reward() {
        let fs = FactorSet::zeros(Dims::new(3, 2, 2).unwrap(), 2).unwrap();
        let t = Transition { task: 1, state: 2, action: 1, reward: -1.5, next_state: 0 };
        assert_eq!(td_error(&fs, &t, 0.9), -1.5);
    }

    #[test]
    fn td_error_myopic() {
        let fs = FactorSet::new(Dims::new(3, 2, 2).unwrap(), 2, 5).unwrap();
        let t = Transition { task: 1, state: 2, action: 1, reward: 0.7, next_state: 0 };
        assert_eq!(td_error(&fs, &t, 0.0), 0.7 - fs.evaluate(2, 1, 1));
    }

    #[test]
    fn worked_gradient() {
        let (fs, t) = worked_example();
        assert_eq!(td_error(&fs, &t, 0.9), 1.0);
        let g = semi_gradients(&fs, &t, 0.9, 1.0);
        assert_eq!(g.state.values, vec![-24.0]);
        assert_eq!(g.action.values, vec![-16.0]);
        assert_eq!(g.task.values, vec![-12.0]);
        assert_eq!((g.state.row, g.action.row, g.task.row), (0, 0, 0));
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let (fs, mut t) = worked_example();
        t.reward = 24.0;
        assert!(semi_gradients(&fs, &t, 0.9, 3.0).is_zero());
    }

    #[test]
    fn worked_update() {
        let (mut fs, t) = worked_example();
        let g = semi_gradients(&fs, &t, 0.9, 1.0);
        apply_update(&mut fs, &g, 0.1);
        assert!((fs.q1()[[0, 0]] - 4.4).abs() < 1e-12);
        assert!((fs.q2()[[0, 0]] - 4.6).abs() < 1e-12);
        assert!((fs.q3()[[0, 0]] - 5.2).abs() < 1e-12);
        assert_eq!(fs.q1()[[1, 0]], 0.0);
    }

    #[test]
    fn zero_step_and_zero_gradient_are_identities() {
        let fs0 = FactorSet::new(Dims::new(4, 3, 2).unwrap(), 3, 1).unwrap();
        let t = Transition { task: 1, state: 2, action: 0, reward: 3.0, next_state: 3 };
        let g = semi_gradients(&fs0, &t, 0.9, 1.0);
        let mut fs = fs0.clone();
        apply_update(&mut fs, &g, 0.0);
        assert_eq!(fs, fs0);

        let zero = SparseGrad {
            state: RowGrad { row: 1, values: vec![0.0; 3] },
            action: RowGrad { row: 1, values: vec![0.0; 3] },
            task: RowGrad { row: 0, values: vec![0.0; 3] },
        };
        apply_update(&mut fs, &zero, 0.5);
        assert_eq!(fs, fs0);
    }

    #[test]
    fn clipping_caps_row_norms() {
        let (fs, t) = worked_example();
        let mut g = semi_gradients(&fs, &t, 0.9, 1.0);
        g.clip_rows(1.0);
        for row in g.rows() {
            assert!((row.norm() - 1.0).abs() < 1e-12);
            assert!(row.values[0] < 0.0);
        }
    }

    #[test]
    fn batch_loss_forced_arithmetic() {
        let (fs, mut t) = worked_example();
        t.reward = 27.0; // delta = 3
        let mut data = TrajectorySet::new(1);
        data.push(t);
        let hyper = Hyperparams { lambdas: Some(vec![2.0]), gamma: 0.9, ..Hyperparams::with_rank(1) };
        assert_eq!(batch_loss(&fs, &data, &hyper).unwrap(), 18.0);
    }

    #[test]
    fn batch_loss_rejects_empty_data() {
        let (fs, _) = worked_example();
        let hyper = Hyperparams::with_rank(1);
        assert!(batch_loss(&fs, &TrajectorySet::new(1), &hyper).is_err());
    }

    #[test]
    fn batch_loss_vanishes_at_a_bellman_fixed_point() {
        // Single state and action, r = 1, gamma = 0.5: Q = 2 satisfies the Bellman equation.
        let fs = FactorSet::from_factors(array![[1.0]], array![[2.0]], array![[1.0]]).unwrap();
        let mut data = TrajectorySet::new(1);
        for _ in 0..3 {
            data.push(Transition { task: 0, state: 0, action: 0, reward: 1.0, next_state: 0 });
        }
        let hyper = Hyperparams { gamma: 0.5, ..Hyperparams::with_rank(1) };
        assert_eq!(batch_loss(&fs, &data, &hyper).unwrap(), 0.0);
    }
}
