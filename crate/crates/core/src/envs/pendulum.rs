//! Torque-limited pendulum stabilisation, discretized over `(theta, omega)`.
//!
//! The dynamics and reward follow the classic-control pendulum benchmark:
//! `theta` is measured from upright, one explicit (semi-implicit) Euler step
//! per action, and the reward penalizes angle, speed and torque.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{linspace, Axis, DiscretizationGrid};
use super::{check_same_len, Environment, Horizon, Step, TaskSuite};
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    /// Viscous friction coefficient (angular deceleration per unit speed).
    pub friction: f64,
    /// Episode length; 0 means unbounded.
    pub horizon: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            mass: 1.0,
            length: 1.0,
            gravity: 9.8,
            dt: 0.05,
            max_torque: 2.0,
            max_speed: 8.0,
            friction: 0.0,
            horizon: 0,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("length", self.length),
            ("gravity", self.gravity),
            ("dt", self.dt),
            ("max_torque", self.max_torque),
            ("max_speed", self.max_speed),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "pendulum {name} must be positive, got {v}"
                )));
            }
        }
        if !(self.friction.is_finite() && self.friction >= 0.0) {
            return Err(Error::InvalidConfig("pendulum friction must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: f64,
    pub omega: f64,
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// One Euler step. Returns the next state and the reward
/// `-(theta'^2 + 0.1 omega'^2 + 0.001 torque^2)`.
pub fn pendulum_step(state: PendulumState, torque: f64, p: &PendulumParams) -> (PendulumState, f64) {
    let torque = torque.clamp(-p.max_torque, p.max_torque);
    let accel = 3.0 * p.gravity / (2.0 * p.length) * state.theta.sin()
        + 3.0 / (p.mass * p.length * p.length) * torque
        - p.friction * state.omega;
    let omega = (state.omega + p.dt * accel).clamp(-p.max_speed, p.max_speed);
    let theta = wrap_angle(state.theta + p.dt * omega);
    let reward = -(theta * theta + 0.1 * omega * omega + 0.001 * torque * torque);
    (PendulumState { theta, omega }, reward)
}

/// Total mechanical energy per unit inertia of the frictionless model,
/// `omega^2 / 2 + (3 g / 2 l) cos(theta)`.
pub fn pendulum_energy(state: PendulumState, p: &PendulumParams) -> f64 {
    0.5 * state.omega * state.omega + 3.0 * p.gravity / (2.0 * p.length) * state.theta.cos()
}

/// A pendulum task: continuous dynamics observed through a `(theta, omega)` grid,
/// with a fixed set of torque levels as actions.
#[derive(Debug, Clone)]
pub struct Pendulum {
    params: PendulumParams,
    grid: DiscretizationGrid,
    torques: Vec<f64>,
    state: PendulumState,
    horizon: Horizon,
}

impl Pendulum {
    pub fn new(params: PendulumParams, grid: DiscretizationGrid, torques: Vec<f64>) -> Result<Self> {
        params.validate()?;
        if grid.axes().len() != 2 {
            return Err(Error::InvalidConfig("pendulum grid must be 2-D (theta, omega)".into()));
        }
        if torques.is_empty() || torques.iter().any(|t| t.abs() > params.max_torque) {
            return Err(Error::InvalidConfig(
                "torque levels must be non-empty and within max torque".into(),
            ));
        }
        Ok(Pendulum {
            params,
            grid,
            torques,
            state: PendulumState { theta: PI, omega: 0.0 },
            horizon: Horizon::new(params.horizon),
        })
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }

    pub fn state(&self) -> PendulumState {
        self.state
    }

    pub fn torques(&self) -> &[f64] {
        &self.torques
    }

    pub fn set_state(&mut self, state: PendulumState) -> usize {
        self.state = state;
        self.index()
    }

    fn index(&self) -> usize {
        self.grid.flat_index(&[self.state.theta, self.state.omega])
    }
}

impl Environment for Pendulum {
    fn n_states(&self) -> usize {
        self.grid.len()
    }

    fn n_actions(&self) -> usize {
        self.torques.len()
    }

    /// `theta ~ U(-pi, pi)`, `omega ~ U(-1, 1)`.
    fn reset(&mut self, rng: &mut SimRng) -> usize {
        self.horizon.restart();
        self.state = PendulumState {
            theta: rng.random_range(-PI..PI),
            omega: rng.random_range(-1.0..1.0),
        };
        self.index()
    }

    fn step(&mut self, action: usize, _rng: &mut SimRng) -> Step {
        let (next, reward) = pendulum_step(self.state, self.torques[action], &self.params);
        self.state = next;
        Step {
            next_state: self.index(),
            reward,
            done: self.horizon.tick(),
        }
    }
}

/// Pendulum family configuration. Defaults are the four reference tasks on a
/// 20 x 20 `(theta, omega)` grid with 10 torque levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumSuiteConfig {
    pub masses: Vec<f64>,
    pub lengths: Vec<f64>,
    pub gravity: f64,
    pub dt: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub friction: f64,
    pub theta_bins: usize,
    pub omega_bins: usize,
    pub torque_levels: usize,
}

impl Default for PendulumSuiteConfig {
    fn default() -> Self {
        let base = PendulumParams::default();
        PendulumSuiteConfig {
            masses: vec![0.01, 0.1, 0.5, 1.0],
            lengths: vec![1.0, 1.0, 0.5, 0.5],
            gravity: base.gravity,
            dt: base.dt,
            max_torque: base.max_torque,
            max_speed: base.max_speed,
            friction: base.friction,
            theta_bins: 20,
            omega_bins: 20,
            torque_levels: 10,
        }
    }
}

impl PendulumSuiteConfig {
    pub fn validate(&self) -> Result<()> {
        check_same_len("pendulum masses/lengths", &[self.masses.len(), self.lengths.len()])?;
        if self.torque_levels < 1 {
            return Err(Error::InvalidConfig("need at least one torque level".into()));
        }
        self.grid()?;
        for m in 0..self.masses.len() {
            self.params(m, 0).validate()?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<DiscretizationGrid> {
        DiscretizationGrid::new(vec![
            Axis::new(-PI, PI, self.theta_bins)?,
            Axis::new(-self.max_speed, self.max_speed, self.omega_bins)?,
        ])
    }

    pub fn torques(&self) -> Vec<f64> {
        linspace(-self.max_torque, self.max_torque, self.torque_levels)
    }

    pub fn params(&self, task: usize, horizon: usize) -> PendulumParams {
        PendulumParams {
            mass: self.masses[task],
            length: self.lengths[task],
            gravity: self.gravity,
            dt: self.dt,
            max_torque: self.max_torque,
            max_speed: self.max_speed,
            friction: self.friction,
            horizon,
        }
    }
}

/// `M` pendulums sharing one grid and one torque set.
pub fn pendulum_suite(cfg: &PendulumSuiteConfig, horizon: usize, seed: u64) -> Result<TaskSuite> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let torques = cfg.torques();
    let envs = (0..cfg.masses.len())
        .map(|m| {
            Pendulum::new(cfg.params(m, horizon), grid.clone(), torques.clone())
                .map(|p| Box::new(p) as Box<dyn Environment>)
        })
        .collect::<Result<Vec<_>>>()?;
    TaskSuite::new(envs, seed)
}
