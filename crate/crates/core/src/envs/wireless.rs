//! Opportunistic channel access for an energy-harvesting transmitter.
//!
//! The agent holds a packet queue and a battery and picks a transmit power
//! each slot. A free channel carries `log2(1 + fading * power / noise)`
//! packets; an occupied channel carries none. The reward trades battery level
//! against backlog.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{Axis, DiscretizationGrid};
use super::{check_same_len, Environment, Horizon, Step, TaskSuite};
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirelessParams {
    /// Packets per arrival event (alpha).
    pub arrival_size: f64,
    pub arrival_prob: f64,
    /// Energy per harvesting event (b).
    pub harvest_amount: f64,
    pub harvest_prob: f64,
    /// Channel gains, drawn uniformly each slot.
    pub fading_levels: Vec<f64>,
    pub occupancy_prob: f64,
    pub battery_capacity: f64,
    pub queue_capacity: f64,
    /// The action set; must contain 0.
    pub power_levels: Vec<f64>,
    pub noise: f64,
    pub w_battery: f64,
    pub w_queue: f64,
    /// When set, the transmitter senses the channel and spends nothing if it is busy.
    pub sense_before_transmit: bool,
    /// Episode length; 0 means unbounded.
    pub horizon: usize,
}

impl Default for WirelessParams {
    fn default() -> Self {
        WirelessParams {
            arrival_size: 1.0,
            arrival_prob: 0.2,
            harvest_amount: 0.5,
            harvest_prob: 0.2,
            fading_levels: vec![0.5, 1.0, 2.0],
            occupancy_prob: 0.5,
            battery_capacity: 5.0,
            queue_capacity: 10.0,
            power_levels: vec![0.0, 0.5, 1.0, 2.0],
            noise: 1.0,
            w_battery: 0.1,
            w_queue: 1.0,
            sense_before_transmit: false,
            horizon: 0,
        }
    }
}

fn is_prob(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl WirelessParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !is_prob(self.arrival_prob) || !is_prob(self.harvest_prob) || !is_prob(self.occupancy_prob) {
            return bad("wireless probabilities must lie in [0, 1]".into());
        }
        if !(self.battery_capacity > 0.0 && self.queue_capacity > 0.0) {
            return bad("wireless capacities must be positive".into());
        }
        if !(self.arrival_size >= 0.0 && self.harvest_amount >= 0.0) {
            return bad("arrival size and harvest amount must be >= 0".into());
        }
        if self.fading_levels.is_empty() || self.fading_levels.iter().any(|f| !(*f >= 0.0)) {
            return bad("fading levels must be a non-empty set of non-negative gains".into());
        }
        if self.power_levels.iter().any(|p| !(*p >= 0.0)) || !self.power_levels.contains(&0.0) {
            return bad("power levels must be non-negative and include 0".into());
        }
        if !(self.noise > 0.0) {
            return bad("noise power must be positive".into());
        }
        if !(self.w_battery > 0.0 && self.w_queue > 0.0) {
            return bad("reward weights must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirelessState {
    /// Index into `fading_levels`.
    pub fading: usize,
    pub occupied: bool,
    pub battery: f64,
    pub queue: f64,
}

/// Packets served by one slot at `power`.
pub fn departures(state: &WirelessState, power: f64, p: &WirelessParams) -> f64 {
    if state.occupied {
        0.0
    } else {
        (1.0 + p.fading_levels[state.fading] * power / p.noise).log2()
    }
}

/// One slot of the queue/battery dynamics.
///
/// Power above the current battery level is capped at the battery. Draw order
/// from `rng`: arrival, harvest, next fading level, next occupancy.
pub fn wireless_step(
    state: WirelessState,
    power: f64,
    p: &WirelessParams,
    rng: &mut SimRng,
) -> (WirelessState, f64) {
    let mut power = power.min(state.battery).max(0.0);
    if p.sense_before_transmit && state.occupied {
        power = 0.0;
    }
    let served = departures(&state, power, p);
    let arrived = if rng.random_bool(p.arrival_prob) { p.arrival_size } else { 0.0 };
    let harvested = if rng.random_bool(p.harvest_prob) { p.harvest_amount } else { 0.0 };

    let queue = (state.queue - served + arrived).clamp(0.0, p.queue_capacity);
    let battery = (state.battery - power + harvested).clamp(0.0, p.battery_capacity);
    let next = WirelessState {
        fading: rng.random_range(0..p.fading_levels.len()),
        occupied: rng.random_bool(p.occupancy_prob),
        battery,
        queue,
    };
    let reward = p.w_battery * battery - p.w_queue * queue;
    (next, reward)
}

/// A wireless task observed through a `(fading, occupancy, battery, queue)` grid.
#[derive(Debug, Clone)]
pub struct Wireless {
    params: WirelessParams,
    grid: DiscretizationGrid,
    state: WirelessState,
    horizon: Horizon,
}

impl Wireless {
    pub fn new(params: WirelessParams, battery_bins: usize, queue_bins: usize) -> Result<Self> {
        params.validate()?;
        let grid = DiscretizationGrid::new(vec![
            Axis::integer(params.fading_levels.len().max(2))?,
            Axis::integer(2)?,
            Axis::new(0.0, params.battery_capacity, battery_bins)?,
            Axis::new(0.0, params.queue_capacity, queue_bins)?,
        ])?;
        Ok(Wireless {
            state: WirelessState {
                fading: 0,
                occupied: false,
                battery: params.battery_capacity,
                queue: 0.0,
            },
            horizon: Horizon::new(params.horizon),
            params,
            grid,
        })
    }

    pub fn params(&self) -> &WirelessParams {
        &self.params
    }

    pub fn state(&self) -> WirelessState {
        self.state
    }

    pub fn set_state(&mut self, state: WirelessState) -> usize {
        self.state = state;
        self.index()
    }

    fn index(&self) -> usize {
        let s = &self.state;
        self.grid.flat_index(&[
            s.fading as f64,
            if s.occupied { 1.0 } else { 0.0 },
            s.battery,
            s.queue,
        ])
    }
}

impl Environment for Wireless {
    fn n_states(&self) -> usize {
        self.grid.len()
    }

    fn n_actions(&self) -> usize {
        self.params.power_levels.len()
    }

    /// Channel drawn from its stationary law, battery and queue uniform over their ranges.
    fn reset(&mut self, rng: &mut SimRng) -> usize {
        self.horizon.restart();
        let p = &self.params;
        self.state = WirelessState {
            fading: rng.random_range(0..p.fading_levels.len()),
            occupied: rng.random_bool(p.occupancy_prob),
            battery: rng.random_range(0.0..=p.battery_capacity),
            queue: rng.random_range(0.0..=p.queue_capacity),
        };
        self.index()
    }

    fn step(&mut self, action: usize, rng: &mut SimRng) -> Step {
        let power = self.params.power_levels[action];
        let (next, reward) = wireless_step(self.state, power, &self.params, rng);
        self.state = next;
        Step {
            next_state: self.index(),
            reward,
            done: self.horizon.tick(),
        }
    }
}

/// Wireless family configuration. The four per-task vectors default to the
/// four reference tasks; everything else is shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WirelessSuiteConfig {
    pub arrival_sizes: Vec<f64>,
    pub harvest_amounts: Vec<f64>,
    pub arrival_probs: Vec<f64>,
    pub harvest_probs: Vec<f64>,
    pub fading_levels: Vec<f64>,
    pub occupancy_prob: f64,
    pub battery_capacity: f64,
    pub queue_capacity: f64,
    pub power_levels: Vec<f64>,
    pub noise: f64,
    pub w_battery: f64,
    pub w_queue: f64,
    pub sense_before_transmit: bool,
    pub battery_bins: usize,
    pub queue_bins: usize,
}

impl Default for WirelessSuiteConfig {
    fn default() -> Self {
        let base = WirelessParams::default();
        WirelessSuiteConfig {
            arrival_sizes: vec![1.0, 1.0, 1.0, 2.0],
            harvest_amounts: vec![0.5, 0.5, 0.5, 3.0],
            arrival_probs: vec![0.2, 0.2, 0.5, 0.8],
            harvest_probs: vec![0.2, 0.5, 0.5, 0.8],
            fading_levels: base.fading_levels,
            occupancy_prob: base.occupancy_prob,
            battery_capacity: base.battery_capacity,
            queue_capacity: base.queue_capacity,
            power_levels: base.power_levels,
            noise: base.noise,
            w_battery: base.w_battery,
            w_queue: base.w_queue,
            sense_before_transmit: base.sense_before_transmit,
            battery_bins: 6,
            queue_bins: 11,
        }
    }
}

impl WirelessSuiteConfig {
    pub fn validate(&self) -> Result<()> {
        check_same_len(
            "wireless task vectors",
            &[
                self.arrival_sizes.len(),
                self.harvest_amounts.len(),
                self.arrival_probs.len(),
                self.harvest_probs.len(),
            ],
        )?;
        for m in 0..self.arrival_sizes.len() {
            Wireless::new(self.params(m, 0), self.battery_bins, self.queue_bins)?;
        }
        Ok(())
    }

    pub fn params(&self, task: usize, horizon: usize) -> WirelessParams {
        WirelessParams {
            arrival_size: self.arrival_sizes[task],
            arrival_prob: self.arrival_probs[task],
            harvest_amount: self.harvest_amounts[task],
            harvest_prob: self.harvest_probs[task],
            fading_levels: self.fading_levels.clone(),
            occupancy_prob: self.occupancy_prob,
            battery_capacity: self.battery_capacity,
            queue_capacity: self.queue_capacity,
            power_levels: self.power_levels.clone(),
            noise: self.noise,
            w_battery: self.w_battery,
            w_queue: self.w_queue,
            sense_before_transmit: self.sense_before_transmit,
            horizon,
        }
    }
}

pub fn wireless_suite(cfg: &WirelessSuiteConfig, horizon: usize, seed: u64) -> Result<TaskSuite> {
    cfg.validate()?;
    let envs = (0..cfg.arrival_sizes.len())
        .map(|m| {
            Wireless::new(cfg.params(m, horizon), cfg.battery_bins, cfg.queue_bins)
                .map(|w| Box::new(w) as Box<dyn Environment>)
        })
        .collect::<Result<Vec<_>>>()?;
    TaskSuite::new(envs, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    fn state(occupied: bool, battery: f64, queue: f64) -> WirelessState {
        WirelessState { fading: 1, occupied, battery, queue }
    }

    #[test]
    fn occupied_channel_serves_nothing_but_drains_battery() {
        let p = WirelessParams { arrival_prob: 0.0, harvest_prob: 0.0, ..Default::default() };
        let mut g = rng::seeded(1);
        for &power in &p.power_levels {
            let (next, _) = wireless_step(state(true, 4.0, 5.0), power, &p, &mut g);
            assert_eq!(next.queue, 5.0);
            assert_eq!(next.battery, 4.0 - power);
        }
    }

    #[test]
    fn sensing_saves_energy_on_busy_channel() {
        let p = WirelessParams {
            arrival_prob: 0.0,
            harvest_prob: 0.0,
            sense_before_transmit: true,
            ..Default::default()
        };
        let (next, _) = wireless_step(state(true, 4.0, 5.0), 2.0, &p, &mut rng::seeded(1));
        assert_eq!(next.battery, 4.0);
    }

    #[test]
    fn idle_slot_without_arrivals_is_a_no_op() {
        let p = WirelessParams { arrival_prob: 0.0, harvest_prob: 0.0, ..Default::default() };
        let (next, r) = wireless_step(state(false, 3.0, 7.0), 0.0, &p, &mut rng::seeded(2));
        assert_eq!((next.battery, next.queue), (3.0, 7.0));
        assert_relative_eq!(r, 0.1 * 3.0 - 7.0);
    }

    #[test]
    fn shannon_departures() {
        let p = WirelessParams { arrival_prob: 0.0, harvest_prob: 0.0, ..Default::default() };
        // fading index 1 is gain 1.0, noise 1.0
        assert_eq!(departures(&state(false, 5.0, 5.0), 3.0, &p), 2.0);
        let (next, _) = wireless_step(state(false, 5.0, 5.0), 3.0, &p, &mut rng::seeded(0));
        assert_eq!(next.queue, 3.0);
        assert_eq!(next.battery, 2.0);
    }

    #[test]
    fn power_is_capped_by_battery() {
        let p = WirelessParams { arrival_prob: 0.0, harvest_prob: 0.0, ..Default::default() };
        let (next, _) = wireless_step(state(false, 0.5, 5.0), 2.0, &p, &mut rng::seeded(0));
        assert_eq!(next.battery, 0.0);
        assert_relative_eq!(next.queue, 5.0 - 1.5f64.log2());
    }

    #[test]
    fn default_suite_has_the_reference_tasks() {
        let cfg = WirelessSuiteConfig::default();
        let t = |m: usize| (cfg.arrival_sizes[m], cfg.harvest_amounts[m], cfg.arrival_probs[m], cfg.harvest_probs[m]);
        assert_eq!(t(0), (1.0, 0.5, 0.2, 0.2));
        assert_eq!(t(3), (2.0, 3.0, 0.8, 0.8));
        let suite = wireless_suite(&cfg, 100, 0).unwrap();
        assert_eq!(suite.n_tasks(), 4);
        assert_eq!(suite.n_states(), 3 * 2 * 6 * 11);
        assert_eq!(suite.n_actions(), 4);
    }

    #[test]
    fn custom_two_task_suite() {
        let cfg = WirelessSuiteConfig {
            arrival_sizes: vec![1.0, 2.0],
            harvest_amounts: vec![0.5, 1.0],
            arrival_probs: vec![0.1, 0.9],
            harvest_probs: vec![0.3, 0.3],
            ..Default::default()
        };
        assert_eq!(wireless_suite(&cfg, 10, 0).unwrap().n_tasks(), 2);
        let bad = WirelessSuiteConfig { harvest_probs: vec![0.3], ..cfg };
        assert!(wireless_suite(&bad, 10, 0).is_err());
    }

    #[test]
    fn rejects_power_set_without_zero() {
        let cfg = WirelessSuiteConfig { power_levels: vec![0.5, 1.0], ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn levels_stay_in_range_along_random_walks() {
        let cfg = WirelessSuiteConfig::default();
        for m in 0..4 {
            let mut env = Wireless::new(cfg.params(m, 0), 6, 11).unwrap();
            let mut g = rng::seeded(m as u64);
            env.reset(&mut g);
            for t in 0..2_000 {
                let step = env.step((t * 7 + m) % 4, &mut g);
                let s = env.state();
                assert!(step.next_state < env.n_states());
                assert!((0.0..=5.0).contains(&s.battery) && (0.0..=10.0).contains(&s.queue));
            }
        }
    }
}
