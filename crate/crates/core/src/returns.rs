//! Return estimation over any [`ReplayView`].
//!
//! Per-row arrays (`v_s`, `v_s_next`, outputs) are aligned with
//! [`ReplayView::ordered_indices`], the `sample(0)` order. Recursion walks
//! episode segments with `next`/`step_kind` only, so it never crosses an
//! environment or episode boundary regardless of the physical layout.

use alloc::vec;
use alloc::vec::Vec;

use crate::replay::{ReplayError, ReplayView, StepKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountParams {
    pub gamma: f64,
    pub lam: f64,
    pub n_step: usize,
}

impl Default for DiscountParams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lam: 0.95,
            n_step: 1,
        }
    }
}

impl DiscountParams {
    pub fn new(gamma: f64, lam: f64, n_step: usize) -> Option<Self> {
        let p = Self { gamma, lam, n_step };
        p.is_valid().then_some(p)
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.gamma) && (0.0..=1.0).contains(&self.lam) && self.n_step >= 1
    }
}

/// `V(s_t)` and `V(s_{t+1})` for each row, in `sample(0)` order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValueEstimates {
    pub v_s: Vec<f64>,
    pub v_s_next: Vec<f64>,
}

impl ValueEstimates {
    pub fn zeros(n: usize) -> Self {
        Self {
            v_s: vec![0.0; n],
            v_s_next: vec![0.0; n],
        }
    }
}

/// Which episode ends receive the `gamma * V(s_{t+1})` term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BootstrapRule {
    /// Bootstrap everywhere except natural terminals.
    #[default]
    PartialEpisode,
    /// Treat every `done` row as terminal, including time-limit ends.
    NaiveDone,
}

impl BootstrapRule {
    fn mask(self, kind: StepKind) -> f64 {
        match (self, kind) {
            (BootstrapRule::NaiveDone, StepKind::LastTruncated) => 0.0,
            _ => kind.bootstrap_mask(),
        }
    }
}

/// Bootstrap gate per index: 0 for natural terminals, 1 otherwise.
pub fn value_mask<B: ReplayView + ?Sized>(buf: &B, indices: &[usize]) -> Result<Vec<f64>, ReplayError> {
    buf.value_mask(indices)
}

/// Rows in `sample(0)` order together with their chronological successor
/// position (`None` at segment tails) and step kind.
struct Walk {
    kinds: Vec<StepKind>,
    next_pos: Vec<Option<usize>>,
}

fn walk<B: ReplayView + ?Sized>(buf: &B) -> Result<(Vec<usize>, Walk), ReplayError> {
    let order = buf.ordered_indices();
    let mut pos = vec![usize::MAX; buf.index_bound()];
    for (p, &i) in order.iter().enumerate() {
        pos[i] = p;
    }
    let mut kinds = Vec::with_capacity(order.len());
    let mut next_pos = Vec::with_capacity(order.len());
    for &i in &order {
        let k = buf.step_kind(i)?;
        kinds.push(k);
        next_pos.push(if k.is_tail() {
            None
        } else {
            let n = buf.next(i)?;
            match pos.get(n) {
                Some(&p) if p != usize::MAX => Some(p),
                _ => return Err(ReplayError::InvalidIndex(n)),
            }
        });
    }
    Ok((order, Walk { kinds, next_pos }))
}

fn check_len(expected: usize, found: usize) -> Result<(), ReplayError> {
    if expected == found {
        Ok(())
    } else {
        Err(ReplayError::LengthMismatch { expected, found })
    }
}

/// Generalized advantage estimation over partial episodes.
pub fn gae<B: ReplayView + ?Sized>(
    buf: &B,
    values: &ValueEstimates,
    params: &DiscountParams,
) -> Result<Vec<f64>, ReplayError> {
    gae_with_rule(buf, values, params, BootstrapRule::PartialEpisode)
}

pub fn gae_with_rule<B: ReplayView + ?Sized>(
    buf: &B,
    values: &ValueEstimates,
    params: &DiscountParams,
    rule: BootstrapRule,
) -> Result<Vec<f64>, ReplayError> {
    let (order, w) = walk(buf)?;
    let n = order.len();
    check_len(n, values.v_s.len())?;
    check_len(n, values.v_s_next.len())?;
    let (gamma, gl) = (params.gamma, params.gamma * params.lam);
    let mut adv = vec![0.0; n];
    // A successor always sits later in sample(0) order than its row.
    for p in (0..n).rev() {
        let r = buf.reward(order[p])?;
        let mask = rule.mask(w.kinds[p]);
        let delta = r + mask * gamma * values.v_s_next[p] - values.v_s[p];
        adv[p] = match w.next_pos[p] {
            None => delta,
            Some(q) => delta + gl * adv[q],
        };
    }
    Ok(adv)
}

/// n-step bootstrapped targets for every row, in `sample(0)` order.
pub fn nstep_return<B: ReplayView + ?Sized>(
    buf: &B,
    v_s_next: &[f64],
    params: &DiscountParams,
) -> Result<Vec<f64>, ReplayError> {
    let (order, w) = walk(buf)?;
    check_len(order.len(), v_s_next.len())?;
    (0..order.len())
        .map(|p| {
            let mut acc = 0.0;
            let mut disc = 1.0;
            let mut cur = p;
            for step in 0..params.n_step {
                acc += disc * buf.reward(order[cur])?;
                disc *= params.gamma;
                match w.next_pos[cur] {
                    Some(q) if step + 1 < params.n_step => cur = q,
                    _ => break,
                }
            }
            Ok(acc + disc * w.kinds[cur].bootstrap_mask() * v_s_next[cur])
        })
        .collect()
}

/// n-step targets for arbitrary rows. `v_next(idx)` supplies `V(s_{idx+1})`
/// for the last row consumed; it is only called when that row bootstraps.
pub fn nstep_targets<B: ReplayView + ?Sized>(
    buf: &B,
    indices: &[usize],
    params: &DiscountParams,
    mut v_next: impl FnMut(usize) -> f64,
) -> Result<Vec<f64>, ReplayError> {
    indices
        .iter()
        .map(|&start| {
            let mut acc = 0.0;
            let mut disc = 1.0;
            let mut cur = start;
            for step in 0..params.n_step {
                acc += disc * buf.reward(cur)?;
                disc *= params.gamma;
                if buf.step_kind(cur)?.is_tail() || step + 1 == params.n_step {
                    break;
                }
                cur = buf.next(cur)?;
            }
            let mask = buf.step_kind(cur)?.bootstrap_mask();
            Ok(if mask == 0.0 { acc } else { acc + disc * v_next(cur) })
        })
        .collect()
}

/// Discounted suffix sums of reward within each segment, without bootstrap.
pub fn reward_to_go<B: ReplayView + ?Sized>(buf: &B, params: &DiscountParams) -> Result<Vec<f64>, ReplayError> {
    let (order, w) = walk(buf)?;
    let mut out = vec![0.0; order.len()];
    for p in (0..order.len()).rev() {
        let r = buf.reward(order[p])?;
        out[p] = match w.next_pos[p] {
            None => r,
            Some(q) => r + params.gamma * out[q],
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, Info};
    use crate::replay::{Layout, Transition, VectorReplayBuffer};

    fn tr(env_id: usize, rew: f64, done: bool, truncated: bool) -> Transition {
        Transition {
            obs: vec![0.0],
            act: Action::Discrete(0),
            rew,
            done,
            truncated,
            obs_next: vec![0.0],
            env_id,
            info: Info::new(),
        }
    }

    fn single(rows: &[(f64, bool, bool)]) -> VectorReplayBuffer {
        let mut b = VectorReplayBuffer::new(64, 1, Layout::discrete(1)).unwrap();
        let ts: Vec<_> = rows.iter().map(|&(r, d, t)| tr(0, r, d, t)).collect();
        for t in ts {
            b.add(&[t]).unwrap();
        }
        b
    }

    fn p(gamma: f64, lam: f64, n: usize) -> DiscountParams {
        DiscountParams::new(gamma, lam, n).unwrap()
    }

    #[test]
    fn masks_by_step_kind() {
        let b = single(&[(0.0, false, false), (0.0, true, false), (0.0, true, true), (0.0, false, false)]);
        assert_eq!(value_mask(&b, &[0, 1, 2, 3]).unwrap(), vec![1.0, 0.0, 1.0, 1.0]);
        assert_eq!(value_mask(&b, &[9]), Err(ReplayError::InvalidIndex(9)));
    }

    #[test]
    fn gae_hand_case() {
        let b = single(&[(1.0, false, false), (1.0, true, false)]);
        let a = gae(&b, &ValueEstimates::zeros(2), &p(0.9, 0.8, 1)).unwrap();
        assert!((a[1] - 1.0).abs() < 1e-15);
        assert!((a[0] - 1.72).abs() < 1e-15);
    }

    #[test]
    fn gae_lambda_zero_is_delta() {
        let b = single(&[(1.0, false, false), (2.0, false, false), (3.0, true, true)]);
        let v = ValueEstimates {
            v_s: vec![0.5, -1.0, 2.0],
            v_s_next: vec![-1.0, 2.0, 7.0],
        };
        let a = gae(&b, &v, &p(0.9, 0.0, 1)).unwrap();
        for k in 0..3 {
            let d = b.reward(k).unwrap() + 0.9 * v.v_s_next[k] - v.v_s[k];
            assert_eq!(a[k], d);
        }
    }

    #[test]
    fn truncation_mask_changes_gae() {
        let b = single(&[(1.0, false, false), (1.0, true, true)]);
        let v = ValueEstimates {
            v_s: vec![0.0, 0.0],
            v_s_next: vec![0.0, 5.0],
        };
        let partial = gae(&b, &v, &p(0.9, 0.95, 1)).unwrap();
        let naive = gae_with_rule(&b, &v, &p(0.9, 0.95, 1), BootstrapRule::NaiveDone).unwrap();
        assert_ne!(partial, naive);
        assert_eq!(partial[1], 1.0 + 0.9 * 5.0);
        assert_eq!(naive[1], 1.0);
    }

    #[test]
    fn gae_length_mismatch() {
        let b = single(&[(1.0, false, false)]);
        assert_eq!(
            gae(&b, &ValueEstimates::zeros(2), &p(0.9, 0.9, 1)),
            Err(ReplayError::LengthMismatch { expected: 1, found: 2 })
        );
    }

    #[test]
    fn nstep_hand_case() {
        let b = single(&[(1.0, false, false), (2.0, false, false), (3.0, false, false)]);
        let g = nstep_return(&b, &[0.0, 4.0, 0.0], &p(0.5, 1.0, 2)).unwrap();
        assert_eq!(g[0], 3.0);
    }

    #[test]
    fn nstep_one_is_td0_and_terminal_drops_bootstrap() {
        let b = single(&[(1.0, false, false), (2.0, true, false), (3.0, true, true)]);
        let vn = [10.0, 20.0, 30.0];
        let g = nstep_return(&b, &vn, &p(0.5, 1.0, 1)).unwrap();
        assert_eq!(g, vec![1.0 + 5.0, 2.0, 3.0 + 15.0]);
        let g3 = nstep_return(&b, &vn, &p(0.5, 1.0, 3)).unwrap();
        assert_eq!(g3[0], 1.0 + 0.5 * 2.0);
        let t = nstep_targets(&b, &[0, 2], &p(0.5, 1.0, 3), |i| vn[i]).unwrap();
        assert_eq!(t, vec![g3[0], g3[2]]);
    }

    #[test]
    fn reward_to_go_suffix_sums() {
        let b = single(&[(1.0, false, false), (1.0, false, false), (1.0, true, false)]);
        assert_eq!(reward_to_go(&b, &p(1.0, 1.0, 1)).unwrap(), vec![3.0, 2.0, 1.0]);
        assert_eq!(reward_to_go(&b, &p(0.0, 1.0, 1)).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn segments_do_not_leak_across_envs() {
        let mut b = VectorReplayBuffer::new(8, 2, Layout::discrete(1)).unwrap();
        b.add(&[tr(0, 1.0, false, false), tr(1, 100.0, false, false)]).unwrap();
        b.add(&[tr(0, 1.0, true, false)]).unwrap();
        let r = reward_to_go(&b, &p(1.0, 1.0, 1)).unwrap();
        assert_eq!(r, vec![2.0, 1.0, 100.0]);
    }
}
