//! Closed-form objectives and gradients for the linear models.
//!
//! Parameters are row-major `[obs_dim, n_actions]`: the score of action `a`
//! for features `x` is `sum_i x[i] * theta[i * n_actions + a]`.

use alloc::vec;
use alloc::vec::Vec;

pub fn scores(theta: &[f64], n_actions: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n_actions];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &theta[i * n_actions..(i + 1) * n_actions];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xi * w;
        }
    }
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&l| libm::exp(l - m)).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lz = m + libm::log(logits.iter().map(|&l| libm::exp(l - m)).sum::<f64>());
    logits.iter().map(|&l| l - lz).collect()
}

/// Weighted mean log-likelihood `(1/N) sum_k w_k log pi(a_k | x_k)`.
///
/// REINFORCE maximizes this with `w` = returns; behavior cloning maximizes it
/// with `w = 1`.
pub fn log_likelihood(theta: &[f64], n_actions: usize, xs: &[Vec<f64>], acts: &[usize], w: &[f64]) -> f64 {
    let n = xs.len().max(1) as f64;
    xs.iter()
        .zip(acts)
        .zip(w)
        .map(|((x, &a), &wk)| wk * log_softmax(&scores(theta, n_actions, x))[a])
        .sum::<f64>()
        / n
}

/// Gradient of [`log_likelihood`]: `(1/N) sum_k w_k x_k (e_{a_k} - pi(.|x_k))^T`.
pub fn log_likelihood_grad(
    theta: &[f64],
    n_actions: usize,
    xs: &[Vec<f64>],
    acts: &[usize],
    w: &[f64],
) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    let n = xs.len().max(1) as f64;
    for ((x, &a), &wk) in xs.iter().zip(acts).zip(w) {
        if wk == 0.0 {
            continue;
        }
        let mut coef = softmax(&scores(theta, n_actions, x));
        coef.iter_mut().for_each(|p| *p = -*p);
        coef[a] += 1.0;
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (b, &c) in coef.iter().enumerate() {
                g[i * n_actions + b] += wk * xi * c / n;
            }
        }
    }
    g
}

/// Weighted squared TD loss `(1/N) sum_k w_k (Q(x_k, a_k) - G_k)^2 / 2`.
pub fn td_loss(w_mat: &[f64], n_actions: usize, xs: &[Vec<f64>], acts: &[usize], targets: &[f64], w: &[f64]) -> f64 {
    let n = xs.len().max(1) as f64;
    xs.iter()
        .zip(acts)
        .zip(targets.iter().zip(w))
        .map(|((x, &a), (&g, &wk))| {
            let d = scores(w_mat, n_actions, x)[a] - g;
            0.5 * wk * d * d
        })
        .sum::<f64>()
        / n
}

/// Gradient of [`td_loss`] with the targets held fixed.
pub fn td_loss_grad(
    w_mat: &[f64],
    n_actions: usize,
    xs: &[Vec<f64>],
    acts: &[usize],
    targets: &[f64],
    w: &[f64],
) -> Vec<f64> {
    let mut g = vec![0.0; w_mat.len()];
    let n = xs.len().max(1) as f64;
    for ((x, &a), (&t, &wk)) in xs.iter().zip(acts).zip(targets.iter().zip(w)) {
        let d = scores(w_mat, n_actions, x)[a] - t;
        for (i, &xi) in x.iter().enumerate() {
            g[i * n_actions + a] += wk * d * xi / n;
        }
    }
    g
}

pub fn l2_norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// First-order optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

impl Optimizer {
    pub fn adam(n: usize) -> Self {
        Optimizer::Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Descend along `grad` (negate it beforehand to ascend).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                *t += 1;
                let c1 = 1.0 - libm::pow(B1, *t as f64);
                let c2 = 1.0 - libm::pow(B2, *t as f64);
                for k in 0..params.len() {
                    m[k] = B1 * m[k] + (1.0 - B1) * grad[k];
                    v[k] = B2 * v[k] + (1.0 - B2) * grad[k] * grad[k];
                    params[k] -= lr * (m[k] / c1) / (libm::sqrt(v[k] / c2) + 1e-8);
                }
            }
        }
    }

    pub fn is_adam(&self) -> bool {
        matches!(self, Optimizer::Adam { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, -1000.0, 3.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p[0], 1.0);
        let lp = log_softmax(&[0.0, 0.0]);
        assert!((lp[0] - libm::log(0.5)).abs() < 1e-15);
    }

    #[test]
    fn symmetric_two_action_gradient() {
        let theta = vec![0.0, 0.0];
        let g = log_likelihood_grad(&theta, 2, &[vec![1.0]], &[0], &[1.0]);
        assert_eq!(g, vec![0.5, -0.5]);
        let zero = log_likelihood_grad(&theta, 2, &[vec![1.0]], &[0], &[0.0]);
        assert_eq!(zero, vec![0.0, 0.0]);
    }

    #[test]
    fn td_grad_touches_only_taken_action() {
        let w = vec![1.0, 2.0, 3.0, 4.0];
        let g = td_loss_grad(&w, 2, &[vec![1.0, 0.5]], &[1], &[0.0], &[1.0]);
        // Q = 2 + 0.5 * 4 = 4
        assert_eq!(g, vec![0.0, 4.0, 0.0, 2.0]);
        assert_eq!(td_loss(&w, 2, &[vec![1.0, 0.5]], &[1], &[0.0], &[1.0]), 8.0);
    }
}
