use alloc::vec;
use alloc::vec::Vec;

use super::{discrete_action, Action, ActionSpace, Env, EnvError, EnvSpec, Info, Phase, StepResult};

/// Deterministic chain of `length` states with a one-hot observation.
///
/// Action 1 advances one state, action 0 stays. Entering the last state pays
/// 1.0 and ends the episode; every other step pays 0.0. Under the
/// always-advance policy `V(s_i) = gamma^(length - 2 - i)`.
#[derive(Debug, Clone)]
pub struct ChainMdp {
    length: usize,
    state: usize,
    phase: Phase,
}

impl ChainMdp {
    pub fn new(length: usize) -> Result<Self, EnvError> {
        if length < 2 {
            return Err(EnvError::InvalidParams("chain length must be >= 2".into()));
        }
        Ok(Self {
            length,
            state: 0,
            phase: Phase::Fresh,
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Value of state `i` under always-advance with discount `gamma`.
    pub fn optimal_value(length: usize, gamma: f64, i: usize) -> f64 {
        if i + 1 >= length {
            0.0
        } else {
            libm::pow(gamma, (length - 2 - i) as f64)
        }
    }

    fn obs(&self) -> Vec<f64> {
        let mut o = vec![0.0; self.length];
        o[self.state] = 1.0;
        o
    }
}

impl Env for ChainMdp {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: self.length,
            action_space: ActionSpace::Discrete(2),
            max_episode_steps: None,
        }
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.state = 0;
        self.phase = Phase::Running;
        self.obs()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        self.phase.check_step()?;
        let a = discrete_action(action, 2)?;
        let mut reward = 0.0;
        let mut done = false;
        if a == 1 {
            self.state += 1;
            if self.state == self.length - 1 {
                reward = 1.0;
                done = true;
                self.phase = Phase::Done;
            }
        }
        let mut info = Info::new();
        info.insert("state".into(), self.state as f64);
        Ok(StepResult {
            obs: self.obs(),
            reward,
            done,
            truncated: false,
            info,
        })
    }

    fn snapshot(&self) -> Vec<u64> {
        vec![self.state as u64, self.phase.code()]
    }

    fn restore(&mut self, state: &[u64]) -> Result<(), EnvError> {
        match state {
            [s, p] if (*s as usize) < self.length => {
                self.state = *s as usize;
                self.phase = Phase::from_code(*p)?;
                Ok(())
            }
            _ => Err(EnvError::InvalidSnapshot("chain expects [state, phase]".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_chain_ends_in_one_step() {
        let mut env = ChainMdp::new(2).unwrap();
        assert_eq!(env.reset(0), vec![1.0, 0.0]);
        let r = env.step(&Action::Discrete(1)).unwrap();
        assert_eq!(r.reward, 1.0);
        assert!(r.done && !r.truncated);
        assert_eq!(env.step(&Action::Discrete(1)), Err(EnvError::StepAfterDone));
    }

    #[test]
    fn staying_never_ends() {
        let mut env = ChainMdp::new(5).unwrap();
        env.reset(1);
        for _ in 0..1000 {
            let r = env.step(&Action::Discrete(0)).unwrap();
            assert_eq!(r.reward, 0.0);
            assert!(!r.done);
        }
    }

    #[test]
    fn rollout_value_matches_closed_form() {
        // Monte-Carlo return from every start state under always-advance.
        for length in 2..9 {
            for gamma in [0.5, 0.9, 1.0] {
                for start in 0..length - 1 {
                    let mut env = ChainMdp::new(length).unwrap();
                    env.reset(0);
                    env.restore(&[start as u64, 1]).unwrap();
                    let (mut ret, mut disc) = (0.0, 1.0);
                    loop {
                        let r = env.step(&Action::Discrete(1)).unwrap();
                        ret += disc * r.reward;
                        disc *= gamma;
                        if r.done {
                            break;
                        }
                    }
                    assert!((ret - ChainMdp::optimal_value(length, gamma, start)).abs() < 1e-15);
                }
            }
        }
        assert_eq!(ChainMdp::optimal_value(4, 0.5, 0), 0.25);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ChainMdp::new(1).is_err());
        let mut env = ChainMdp::new(3).unwrap();
        assert_eq!(env.step(&Action::Discrete(1)), Err(EnvError::NotReset));
        env.reset(0);
        assert!(matches!(
            env.step(&Action::Discrete(2)),
            Err(EnvError::InvalidAction(_))
        ));
    }
}
