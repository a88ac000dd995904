use alloc::vec::Vec;

use super::{discrete_action, Action, ActionSpace, Env, EnvError, EnvSpec, Info, Phase, StepResult};
use crate::rng::SplitMix64;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const THETA_THRESHOLD: f64 = 12.0 * 2.0 * core::f64::consts::PI / 360.0;
const X_THRESHOLD: f64 = 2.4;
const INIT_SPREAD: f64 = 0.05;

/// Classic cart-pole balancing with Euler integration.
///
/// Observation is `[x, x_dot, theta, theta_dot]`; action 0 pushes left and
/// action 1 pushes right. Every step pays 1.0, including the failing one.
#[derive(Debug, Clone)]
pub struct CartPole {
    state: [f64; 4],
    phase: Phase,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            phase: Phase::Fresh,
        }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    /// Place the system at an explicit state, ready to step.
    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.phase = Phase::Running;
    }
}

impl Env for CartPole {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: 4,
            action_space: ActionSpace::Discrete(2),
            max_episode_steps: None,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64::new(seed);
        for s in &mut self.state {
            *s = rng.uniform(-INIT_SPREAD, INIT_SPREAD);
        }
        self.phase = Phase::Running;
        self.state.to_vec()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        self.phase.check_step()?;
        let a = discrete_action(action, 2)?;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if a == 1 { FORCE_MAG } else { -FORCE_MAG };
        let (sin_t, cos_t) = (libm::sin(theta), libm::cos(theta));
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin_t) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin_t - cos_t * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos_t * cos_t / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS;
        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        let done = self.state[0].abs() > X_THRESHOLD || self.state[2].abs() > THETA_THRESHOLD;
        if done {
            self.phase = Phase::Done;
        }
        Ok(StepResult {
            obs: self.state.to_vec(),
            reward: 1.0,
            done,
            truncated: false,
            info: Info::new(),
        })
    }

    fn snapshot(&self) -> Vec<u64> {
        let mut out: Vec<u64> = self.state.iter().map(|v| v.to_bits()).collect();
        out.push(self.phase.code());
        out
    }

    fn restore(&mut self, state: &[u64]) -> Result<(), EnvError> {
        if state.len() != 5 {
            return Err(EnvError::InvalidSnapshot("cartpole expects 5 words".into()));
        }
        for (dst, src) in self.state.iter_mut().zip(state) {
            *dst = f64::from_bits(*src);
        }
        self.phase = Phase::from_code(state[4])?;
        Ok(())
    }
}
