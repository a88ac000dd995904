use alloc::vec;
use alloc::vec::Vec;

use super::linear::{self, Optimizer};
use super::{find_block, standardize, ObsNormalizer, ParamBlock, Policy, PolicyError, PolicyMode, UpdateStats};
use crate::env::Action;
use crate::replay::{ReplayError, ReplayView, VectorReplayBuffer};
use crate::returns::{reward_to_go, DiscountParams};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Baseline {
    #[default]
    None,
    /// Subtract the mean return of the update batch.
    MeanReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftmaxAlgo {
    Reinforce,
    BehaviorCloning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxConfig {
    pub algo: SoftmaxAlgo,
    pub learning_rate: f64,
    pub gamma: f64,
    pub baseline: Baseline,
    /// Standardize return targets over the update batch.
    pub normalize_returns: bool,
    /// Passes over the data per REINFORCE update.
    pub repeat: usize,
    pub adam: bool,
    /// Clip bound for observation normalization; `None` disables it.
    pub obs_norm_clip: Option<f64>,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        Self {
            algo: SoftmaxAlgo::Reinforce,
            learning_rate: 0.01,
            gamma: 0.99,
            baseline: Baseline::None,
            normalize_returns: false,
            repeat: 1,
            adam: false,
            obs_norm_clip: None,
        }
    }
}

/// `pi(a | s) = softmax(theta^T s)` over discrete actions.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmaxPolicy {
    obs_dim: usize,
    n_actions: usize,
    theta: Vec<f64>,
    cfg: SoftmaxConfig,
    opt: Optimizer,
    normalizer: Option<ObsNormalizer>,
}

impl LinearSoftmaxPolicy {
    pub fn new(obs_dim: usize, n_actions: usize, cfg: SoftmaxConfig) -> Result<Self, PolicyError> {
        if obs_dim == 0 || n_actions == 0 {
            return Err(PolicyError::InvalidConfig("empty observation or action space".into()));
        }
        if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) || !(0.0..=1.0).contains(&cfg.gamma) {
            return Err(PolicyError::InvalidConfig("learning_rate > 0 and gamma in [0, 1]".into()));
        }
        if cfg.repeat == 0 {
            return Err(PolicyError::InvalidConfig("repeat must be >= 1".into()));
        }
        let n = obs_dim * n_actions;
        Ok(Self {
            obs_dim,
            n_actions,
            theta: vec![0.0; n],
            opt: if cfg.adam { Optimizer::adam(n) } else { Optimizer::Sgd },
            normalizer: cfg.obs_norm_clip.map(|c| ObsNormalizer::new(obs_dim, c)),
            cfg,
        })
    }

    pub fn config(&self) -> &SoftmaxConfig {
        &self.cfg
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.theta.len());
        self.theta.copy_from_slice(theta);
    }

    pub fn features(&self, obs: &[f64]) -> Vec<f64> {
        match &self.normalizer {
            Some(n) => n.normalize(obs),
            None => obs.to_vec(),
        }
    }

    pub fn probs(&self, obs: &[f64]) -> Vec<f64> {
        linear::softmax(&linear::scores(&self.theta, self.n_actions, &self.features(obs)))
    }

    fn rows(&self, buf: &VectorReplayBuffer, idx: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<usize>), ReplayError> {
        let mut xs = Vec::with_capacity(idx.len());
        let mut acts = Vec::with_capacity(idx.len());
        for &i in idx {
            let t = buf.transition(i)?;
            xs.push(self.features(t.obs));
            acts.push(
                t.act
                    .discrete()
                    .ok_or_else(|| ReplayError::LayoutMismatch("softmax policy needs discrete actions".into()))?,
            );
        }
        Ok((xs, acts))
    }

    fn ascend(&mut self, xs: &[Vec<f64>], acts: &[usize], w: &[f64]) -> f64 {
        let mut g = linear::log_likelihood_grad(&self.theta, self.n_actions, xs, acts, w);
        let norm = linear::l2_norm(&g);
        g.iter_mut().for_each(|v| *v = -*v);
        self.opt.step(&mut self.theta, &g, self.cfg.learning_rate);
        norm
    }

    /// Policy-gradient step on every stored row with reward-to-go targets.
    fn reinforce(&mut self, buf: &VectorReplayBuffer, batch_size: usize, rng: &mut SplitMix64) -> Result<UpdateStats, PolicyError> {
        if buf.is_empty() {
            return Err(PolicyError::EmptyBuffer);
        }
        let order = buf.ordered_indices();
        let params = DiscountParams {
            gamma: self.cfg.gamma,
            lam: 1.0,
            n_step: 1,
        };
        let mut ret = reward_to_go(buf, &params)?;
        match self.cfg.baseline {
            Baseline::None => {}
            Baseline::MeanReturn => {
                let m = ret.iter().sum::<f64>() / ret.len() as f64;
                ret.iter_mut().for_each(|r| *r -= m);
            }
        }
        if self.cfg.normalize_returns {
            standardize(&mut ret);
        }
        let (xs, acts) = self.rows(buf, &order)?;
        let mut stats = UpdateStats {
            n_samples: xs.len(),
            ..Default::default()
        };
        stats.loss = -linear::log_likelihood(&self.theta, self.n_actions, &xs, &acts, &ret);
        let chunk = if batch_size == 0 { xs.len() } else { batch_size };
        for _ in 0..self.cfg.repeat {
            let mut perm: Vec<usize> = (0..xs.len()).collect();
            if chunk < xs.len() {
                rng.shuffle(&mut perm);
            }
            for part in perm.chunks(chunk) {
                let px: Vec<Vec<f64>> = part.iter().map(|&k| xs[k].clone()).collect();
                let pa: Vec<usize> = part.iter().map(|&k| acts[k]).collect();
                let pw: Vec<f64> = part.iter().map(|&k| ret[k]).collect();
                stats.grad_norm = self.ascend(&px, &pa, &pw);
                stats.steps += 1;
            }
        }
        Ok(stats)
    }

    /// One cross-entropy step toward the stored actions.
    fn clone_behavior(&mut self, buf: &VectorReplayBuffer, batch_size: usize, rng: &mut SplitMix64) -> Result<UpdateStats, PolicyError> {
        if buf.is_empty() {
            return Err(PolicyError::EmptyBuffer);
        }
        let idx = buf.sample_indices(batch_size, rng)?;
        let (xs, acts) = self.rows(buf, &idx)?;
        let ones = vec![1.0; xs.len()];
        let loss = -linear::log_likelihood(&self.theta, self.n_actions, &xs, &acts, &ones);
        let grad_norm = self.ascend(&xs, &acts, &ones);
        Ok(UpdateStats {
            loss,
            grad_norm,
            n_samples: xs.len(),
            steps: 1,
        })
    }
}

impl Policy for LinearSoftmaxPolicy {
    fn kind(&self) -> &'static str {
        "linear_softmax"
    }

    fn mode(&self) -> PolicyMode {
        match self.cfg.algo {
            SoftmaxAlgo::Reinforce => PolicyMode::OnPolicy,
            SoftmaxAlgo::BehaviorCloning => PolicyMode::Offline,
        }
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn act(&self, obs: &[f64], explore: bool, rng: &mut SplitMix64) -> Action {
        let p = self.probs(obs);
        if !explore {
            return Action::Discrete(super::argmax(&p));
        }
        let u = rng.next_f64();
        let mut acc = 0.0;
        for (a, &pa) in p.iter().enumerate() {
            acc += pa;
            if u < acc {
                return Action::Discrete(a);
            }
        }
        Action::Discrete(p.iter().rposition(|&x| x > 0.0).unwrap_or(0))
    }

    fn update(&mut self, buf: &mut VectorReplayBuffer, batch_size: usize, rng: &mut SplitMix64) -> Result<UpdateStats, PolicyError> {
        match self.cfg.algo {
            SoftmaxAlgo::Reinforce => self.reinforce(buf, batch_size, rng),
            SoftmaxAlgo::BehaviorCloning => self.clone_behavior(buf, batch_size, rng),
        }
    }

    fn normalizer(&self) -> Option<&ObsNormalizer> {
        self.normalizer.as_ref()
    }

    fn normalizer_mut(&mut self) -> Option<&mut ObsNormalizer> {
        self.normalizer.as_mut()
    }

    fn params(&self) -> Vec<ParamBlock> {
        let shape = vec![self.obs_dim, self.n_actions];
        let mut out = vec![ParamBlock::new("theta", shape.clone(), self.theta.clone())];
        if let Optimizer::Adam { m, v, t } = &self.opt {
            out.push(ParamBlock::new("adam.m", shape.clone(), m.clone()));
            out.push(ParamBlock::new("adam.v", shape, v.clone()));
            out.push(ParamBlock::scalar("adam.t", *t as f64));
        }
        out
    }

    fn set_params(&mut self, blocks: &[ParamBlock]) -> Result<(), PolicyError> {
        let shape = [self.obs_dim, self.n_actions];
        self.theta = find_block(blocks, "theta", &shape)?.to_vec();
        if let Optimizer::Adam { m, v, t } = &mut self.opt {
            // Parameter files written by a plain-SGD run carry no moments.
            if blocks.iter().any(|b| b.name == "adam.t") {
                *m = find_block(blocks, "adam.m", &shape)?.to_vec();
                *v = find_block(blocks, "adam.v", &shape)?.to_vec();
                *t = find_block(blocks, "adam.t", &[1])?[0] as u64;
            }
        }
        Ok(())
    }
}
