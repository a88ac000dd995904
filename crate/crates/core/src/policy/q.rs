use alloc::vec;
use alloc::vec::Vec;

use super::linear::{self, Optimizer};
use super::{argmax, find_block, ObsNormalizer, ParamBlock, Policy, PolicyError, PolicyMode, UpdateStats};
use crate::env::Action;
use crate::replay::{ReplayError, ReplayView, VectorReplayBuffer};
use crate::returns::{nstep_targets, DiscountParams};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearQConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub n_step: usize,
    /// Exploration rate decays linearly from `eps_start` to `eps_end` over
    /// `eps_decay_steps` env steps.
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: u64,
    /// Hard target copy every this many updates.
    pub target_sync: u64,
    pub adam: bool,
    pub obs_norm_clip: Option<f64>,
}

impl Default for LinearQConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            gamma: 0.9,
            n_step: 1,
            eps_start: 0.1,
            eps_end: 0.1,
            eps_decay_steps: 1,
            target_sync: 50,
            adam: false,
            obs_norm_clip: None,
        }
    }
}

/// `Q(s, a) = (W^T s)_a` with an epsilon-greedy behavior policy and a
/// periodically synced target copy for bootstrapping.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearQPolicy {
    obs_dim: usize,
    n_actions: usize,
    weights: Vec<f64>,
    target: Vec<f64>,
    epsilon: f64,
    updates: u64,
    cfg: LinearQConfig,
    opt: Optimizer,
    normalizer: Option<ObsNormalizer>,
}

impl LinearQPolicy {
    pub fn new(obs_dim: usize, n_actions: usize, cfg: LinearQConfig) -> Result<Self, PolicyError> {
        if obs_dim == 0 || n_actions == 0 {
            return Err(PolicyError::InvalidConfig("empty observation or action space".into()));
        }
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite())
            || !(0.0..=1.0).contains(&cfg.gamma)
            || cfg.n_step == 0
            || cfg.target_sync == 0
            || !eps_ok(cfg.eps_start)
            || !eps_ok(cfg.eps_end)
        {
            return Err(PolicyError::InvalidConfig(
                "need learning_rate > 0, gamma and epsilon in [0, 1], n_step and target_sync >= 1".into(),
            ));
        }
        let n = obs_dim * n_actions;
        Ok(Self {
            obs_dim,
            n_actions,
            weights: vec![0.0; n],
            target: vec![0.0; n],
            epsilon: cfg.eps_start,
            updates: 0,
            opt: if cfg.adam { Optimizer::adam(n) } else { Optimizer::Sgd },
            normalizer: cfg.obs_norm_clip.map(|c| ObsNormalizer::new(obs_dim, c)),
            cfg,
        })
    }

    pub fn config(&self) -> &LinearQConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn target_weights(&self) -> &[f64] {
        &self.target
    }

    pub fn set_weights(&mut self, w: &[f64]) {
        assert_eq!(w.len(), self.weights.len());
        self.weights.copy_from_slice(w);
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from_slice(&self.weights);
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, eps: f64) {
        self.epsilon = eps.clamp(0.0, 1.0);
    }

    pub fn update_count(&self) -> u64 {
        self.updates
    }

    pub fn features(&self, obs: &[f64]) -> Vec<f64> {
        match &self.normalizer {
            Some(n) => n.normalize(obs),
            None => obs.to_vec(),
        }
    }

    pub fn q_values(&self, obs: &[f64]) -> Vec<f64> {
        linear::scores(&self.weights, self.n_actions, &self.features(obs))
    }

    fn target_value(&self, obs_next: &[f64]) -> f64 {
        let q = linear::scores(&self.target, self.n_actions, &self.features(obs_next));
        q[argmax(&q)]
    }

    /// n-step targets under the target weights for `indices`.
    pub fn targets(&self, buf: &VectorReplayBuffer, indices: &[usize]) -> Result<Vec<f64>, ReplayError> {
        let params = DiscountParams {
            gamma: self.cfg.gamma,
            lam: 1.0,
            n_step: self.cfg.n_step,
        };
        let mut err = None;
        let out = nstep_targets(buf, indices, &params, |i| match buf.transition(i) {
            Ok(t) => self.target_value(t.obs_next),
            Err(e) => {
                err = Some(e);
                0.0
            }
        })?;
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}

impl Policy for LinearQPolicy {
    fn kind(&self) -> &'static str {
        "linear_q"
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

    fn act(&self, obs: &[f64], explore: bool, rng: &mut SplitMix64) -> Action {
        if explore {
            // Two draws every time, so the stream position does not depend on the branch.
            let u = rng.next_f64();
            let a = rng.below(self.n_actions as u64) as usize;
            if u < self.epsilon {
                return Action::Discrete(a);
            }
        }
        Action::Discrete(argmax(&self.q_values(obs)))
    }

    fn update(&mut self, buf: &mut VectorReplayBuffer, batch_size: usize, rng: &mut SplitMix64) -> Result<UpdateStats, PolicyError> {
        if buf.is_empty() {
            return Err(PolicyError::EmptyBuffer);
        }
        let n = batch_size.max(1);
        let (idx, is_w) = if buf.sampler().is_some() {
            let (_, idx, w) = buf.prioritized_sample(n, rng)?;
            (idx, w)
        } else {
            (buf.sample_indices(n, rng)?, vec![1.0; n])
        };
        let targets = self.targets(buf, &idx)?;
        let mut xs = Vec::with_capacity(n);
        let mut acts = Vec::with_capacity(n);
        for &i in &idx {
            let t = buf.transition(i)?;
            xs.push(self.features(t.obs));
            acts.push(
                t.act
                    .discrete()
                    .ok_or_else(|| ReplayError::LayoutMismatch("Q policy needs discrete actions".into()))?,
            );
        }
        let loss = linear::td_loss(&self.weights, self.n_actions, &xs, &acts, &targets, &is_w);
        if buf.sampler().is_some() {
            let pr: Vec<f64> = xs
                .iter()
                .zip(&acts)
                .zip(&targets)
                .map(|((x, &a), &g)| libm::fabs(linear::scores(&self.weights, self.n_actions, x)[a] - g) + 1e-6)
                .collect();
            buf.update_priority(&idx, &pr)?;
        }
        let g = linear::td_loss_grad(&self.weights, self.n_actions, &xs, &acts, &targets, &is_w);
        self.opt.step(&mut self.weights, &g, self.cfg.learning_rate);
        self.updates += 1;
        if self.updates % self.cfg.target_sync == 0 {
            self.sync_target();
        }
        Ok(UpdateStats {
            loss,
            grad_norm: linear::l2_norm(&g),
            n_samples: n,
            steps: 1,
        })
    }

    fn set_progress(&mut self, env_steps: u64) {
        let c = &self.cfg;
        let frac = (env_steps as f64 / c.eps_decay_steps.max(1) as f64).min(1.0);
        self.epsilon = if frac >= 1.0 {
            c.eps_end
        } else {
            c.eps_start + (c.eps_end - c.eps_start) * frac
        };
    }

    fn normalizer(&self) -> Option<&ObsNormalizer> {
        self.normalizer.as_ref()
    }

    fn normalizer_mut(&mut self) -> Option<&mut ObsNormalizer> {
        self.normalizer.as_mut()
    }

    fn params(&self) -> Vec<ParamBlock> {
        let shape = vec![self.obs_dim, self.n_actions];
        let mut out = vec![
            ParamBlock::new("weights", shape.clone(), self.weights.clone()),
            ParamBlock::new("target", shape.clone(), self.target.clone()),
            ParamBlock::scalar("epsilon", self.epsilon),
            ParamBlock::scalar("updates", self.updates as f64),
        ];
        if let Optimizer::Adam { m, v, t } = &self.opt {
            out.push(ParamBlock::new("adam.m", shape.clone(), m.clone()));
            out.push(ParamBlock::new("adam.v", shape, v.clone()));
            out.push(ParamBlock::scalar("adam.t", *t as f64));
        }
        out
    }

    fn set_params(&mut self, blocks: &[ParamBlock]) -> Result<(), PolicyError> {
        let shape = [self.obs_dim, self.n_actions];
        self.weights = find_block(blocks, "weights", &shape)?.to_vec();
        self.target = find_block(blocks, "target", &shape)?.to_vec();
        self.epsilon = find_block(blocks, "epsilon", &[1])?[0];
        self.updates = find_block(blocks, "updates", &[1])?[0] as u64;
        if let Optimizer::Adam { m, v, t } = &mut self.opt {
            if blocks.iter().any(|b| b.name == "adam.t") {
                *m = find_block(blocks, "adam.m", &shape)?.to_vec();
                *v = find_block(blocks, "adam.v", &shape)?.to_vec();
                *t = find_block(blocks, "adam.t", &[1])?[0] as u64;
            }
        }
        Ok(())
    }
}
