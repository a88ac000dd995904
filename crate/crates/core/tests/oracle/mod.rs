//! Naive reference models used by the integration tests.
//!
//! Nothing here touches buffer navigation: episodes are kept as explicit
//! lists built by replaying the add log, and returns are computed with
//! direct sums.
#![allow(dead_code)]

use rlforge_core::env::{Action, Info};
use rlforge_core::replay::{Layout, Transition, VectorReplayBuffer};
use rlforge_core::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    Ordinary,
    Natural,
    Truncated,
    Edge,
}

impl Kind {
    pub fn mask(self) -> f64 {
        if self == Kind::Natural {
            0.0
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub idx: usize,
    pub rew: f64,
    pub done: bool,
    pub truncated: bool,
}

/// One env step, as recorded in the add log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub env: usize,
    pub rew: f64,
    pub done: bool,
    pub truncated: bool,
}

/// Replays an add log per env and keeps the surviving rows as explicit lists.
#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub n_envs: usize,
    pub sub_capacity: usize,
    /// Every row ever added, per env, in order.
    pub history: Vec<Vec<Row>>,
}

impl EpisodeLog {
    pub fn new(n_envs: usize, sub_capacity: usize) -> Self {
        Self {
            n_envs,
            sub_capacity,
            history: vec![Vec::new(); n_envs],
        }
    }

    pub fn push(&mut self, s: Step) {
        let h = &mut self.history[s.env];
        let slot = h.len() % self.sub_capacity;
        h.push(Row {
            idx: s.env * self.sub_capacity + slot,
            rew: s.rew,
            done: s.done,
            truncated: s.truncated,
        });
    }

    pub fn clear(&mut self) {
        // A cleared buffer restarts at slot 0 with a fresh history.
        for h in &mut self.history {
            h.clear();
        }
    }

    /// Surviving rows per env, oldest first.
    pub fn stored(&self, env: usize) -> &[Row] {
        let h = &self.history[env];
        &h[h.len().saturating_sub(self.sub_capacity)..]
    }

    /// Segments of surviving rows: split after every done row; the oldest
    /// surviving row always starts a segment.
    pub fn segments(&self) -> Vec<Vec<Row>> {
        let mut out = Vec::new();
        for e in 0..self.n_envs {
            let mut cur = Vec::new();
            for &r in self.stored(e) {
                cur.push(r);
                if r.done {
                    out.push(std::mem::take(&mut cur));
                }
            }
            if !cur.is_empty() {
                out.push(cur);
            }
        }
        out
    }

    pub fn order(&self) -> Vec<usize> {
        self.segments().iter().flatten().map(|r| r.idx).collect()
    }

    pub fn kinds(&self) -> Vec<Kind> {
        let mut out = Vec::new();
        for seg in self.segments() {
            for (j, r) in seg.iter().enumerate() {
                out.push(if r.done && r.truncated {
                    Kind::Truncated
                } else if r.done {
                    Kind::Natural
                } else if j + 1 == seg.len() {
                    Kind::Edge
                } else {
                    Kind::Ordinary
                });
            }
        }
        out
    }

    pub fn tails(&self) -> Vec<usize> {
        self.segments().iter().map(|s| s.last().unwrap().idx).collect()
    }

    /// Chronological neighbours clamped at segment ends.
    pub fn neighbours(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for seg in self.segments() {
            for j in 0..seg.len() {
                let p = seg[j.saturating_sub(1)].idx;
                let n = seg[(j + 1).min(seg.len() - 1)].idx;
                out.push((seg[j].idx, p, n));
            }
        }
        out
    }
}

pub fn transition(s: Step, obs_dim: usize) -> Transition {
    Transition {
        obs: vec![s.rew; obs_dim],
        act: Action::Discrete(0),
        rew: s.rew,
        done: s.done,
        truncated: s.truncated,
        obs_next: vec![-s.rew; obs_dim],
        env_id: s.env,
        info: Info::new(),
    }
}

/// A random add log: up to `max_steps` steps per env, random episode
/// lengths, a mix of natural ends, time-limit ends and an unfinished tail.
pub fn random_log(rng: &mut SplitMix64, n_envs: usize, max_steps: usize) -> Vec<Step> {
    let mut per_env: Vec<Vec<Step>> = Vec::new();
    for env in 0..n_envs {
        let n = rng.below(max_steps as u64 + 1) as usize;
        let p_end = 0.05 + 0.3 * rng.next_f64();
        let steps = (0..n)
            .map(|_| {
                let done = rng.next_f64() < p_end;
                let truncated = done && rng.next_f64() < 0.5;
                Step {
                    env,
                    rew: (rng.below(2001) as f64 - 1000.0) / 100.0,
                    done,
                    truncated,
                }
            })
            .collect();
        per_env.push(steps);
    }
    // Interleave envs randomly, keeping per-env order.
    let mut cursors = vec![0usize; n_envs];
    let mut out = Vec::new();
    loop {
        let live: Vec<usize> = (0..n_envs).filter(|&e| cursors[e] < per_env[e].len()).collect();
        if live.is_empty() {
            break;
        }
        let e = live[rng.below(live.len() as u64) as usize];
        out.push(per_env[e][cursors[e]]);
        cursors[e] += 1;
    }
    out
}

pub fn build(log: &[Step], n_envs: usize, sub_capacity: usize) -> (VectorReplayBuffer, EpisodeLog) {
    let mut buf = VectorReplayBuffer::new(n_envs * sub_capacity, n_envs, Layout::discrete(1)).unwrap();
    let mut oracle = EpisodeLog::new(n_envs, sub_capacity);
    for &s in log {
        buf.add(&[transition(s, 1)]).unwrap();
        oracle.push(s);
    }
    (buf, oracle)
}

/// Brute-force `A_t = sum_l (gamma lambda)^l delta_{t+l}` over each segment.
pub fn gae_brute(segs: &[Vec<Row>], kinds: &[Kind], v: &[f64], vn: &[f64], gamma: f64, lam: f64, truncation_mask: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut base = 0;
    for seg in segs {
        let delta: Vec<f64> = (0..seg.len())
            .map(|j| {
                let k = kinds[base + j];
                let m = if k == Kind::Truncated { truncation_mask } else { k.mask() };
                seg[j].rew + m * gamma * vn[base + j] - v[base + j]
            })
            .collect();
        for j in 0..seg.len() {
            let mut acc = 0.0;
            for l in 0..seg.len() - j {
                acc += (gamma * lam).powi(l as i32) * delta[j + l];
            }
            out.push(acc);
        }
        base += seg.len();
    }
    out
}

pub fn nstep_brute(segs: &[Vec<Row>], kinds: &[Kind], vn: &[f64], gamma: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut base = 0;
    for seg in segs {
        for j in 0..seg.len() {
            let m = n.min(seg.len() - j);
            let mut g = 0.0;
            for i in 0..m {
                g += gamma.powi(i as i32) * seg[j + i].rew;
            }
            let last = base + j + m - 1;
            g += gamma.powi(m as i32) * kinds[last].mask() * vn[last];
            out.push(g);
        }
        base += seg.len();
    }
    out
}

pub fn rtg_brute(segs: &[Vec<Row>], gamma: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for seg in segs {
        for j in 0..seg.len() {
            out.push((j..seg.len()).map(|i| gamma.powi((i - j) as i32) * seg[i].rew).sum());
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central finite-difference gradient.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = n(a).max(n(b));
    if scale == 0.0 {
        0.0
    } else {
        n(&d) / scale
    }
}

/// Pearson chi-square p-value of `counts` against `probs`.
pub fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut dof = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        if p == 0.0 {
            assert_eq!(c, 0, "drew a zero-probability row");
            continue;
        }
        let e = p * total as f64;
        stat += (c as f64 - e).powi(2) / e;
        dof += 1;
    }
    if dof <= 1 {
        return 1.0;
    }
    1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat)
}
