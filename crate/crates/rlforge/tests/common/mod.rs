#![allow(dead_code)]

use rlforge::envs::EnvId;
use rlforge::vector_env::{EnvMode, VectorEnv};
use rlforge_core::env::Action;
use rlforge_core::policy::{ParamBlock, Policy, PolicyError, PolicyMode, UpdateStats};
use rlforge_core::replay::VectorReplayBuffer;
use rlforge_core::SplitMix64;

/// Always plays the same action, or a uniformly random one when exploring
/// with `random` set.
pub struct FixedPolicy {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub action: usize,
    pub random: bool,
}

impl FixedPolicy {
    pub fn advance(obs_dim: usize) -> Self {
        Self {
            obs_dim,
            n_actions: 2,
            action: 1,
            random: false,
        }
    }

    pub fn random(obs_dim: usize, n_actions: usize) -> Self {
        Self {
            obs_dim,
            n_actions,
            action: 0,
            random: true,
        }
    }
}

impl Policy for FixedPolicy {
    fn kind(&self) -> &'static str {
        "fixed"
    }

    fn mode(&self) -> PolicyMode {
        PolicyMode::OffPolicy
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn act(&self, _obs: &[f64], explore: bool, rng: &mut SplitMix64) -> Action {
        if self.random && explore {
            Action::Discrete(rng.below(self.n_actions as u64) as usize)
        } else {
            Action::Discrete(self.action)
        }
    }

    fn update(&mut self, _buf: &mut VectorReplayBuffer, _bs: usize, _rng: &mut SplitMix64) -> Result<UpdateStats, PolicyError> {
        Ok(UpdateStats::default())
    }

    fn params(&self) -> Vec<ParamBlock> {
        Vec::new()
    }

    fn set_params(&mut self, _blocks: &[ParamBlock]) -> Result<(), PolicyError> {
        Ok(())
    }
}

pub fn venv(id: &str, n: usize, mode: EnvMode) -> VectorEnv {
    let id = EnvId::parse(id).unwrap();
    VectorEnv::new((0..n).map(|_| id.build()).collect(), mode).unwrap()
}

/// Envs built from one id each.
pub fn venv_of(ids: &[&str], mode: EnvMode) -> VectorEnv {
    VectorEnv::new(ids.iter().map(|i| EnvId::parse(i).unwrap().build()).collect(), mode).unwrap()
}
