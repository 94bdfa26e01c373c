//! Linear-chain inference over explicit potentials.
//!
//! A path `z` of length `K` scores `s(z) = sum_k u_k(z_k) + sum_{k>0} psi(z_{k-1}, z_k)`.
//! Everything runs in log space.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    pub len: usize,
    pub n_labels: usize,
    /// `len x n_labels`.
    pub unary: Vec<f64>,
    /// `n_labels x n_labels`, previous label first.
    pub trans: Vec<f64>,
}

impl Potentials {
    pub fn u(&self, k: usize, y: usize) -> f64 {
        self.unary[k * self.n_labels + y]
    }

    pub fn psi(&self, a: usize, b: usize) -> f64 {
        self.trans[a * self.n_labels + b]
    }

    pub fn score(&self, path: &[usize]) -> f64 {
        let mut s = 0.0;
        for (k, &y) in path.iter().enumerate() {
            s += self.u(k, y);
            if k > 0 {
                s += self.psi(path[k - 1], y);
            }
        }
        s
    }
}

/// Log normalizer and expected sufficient statistics of a path distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub log_norm: f64,
    /// Per-position label marginals, `len x n_labels`.
    pub unary: Vec<f64>,
    /// Transition marginals summed over positions, `n_labels x n_labels`.
    pub pair: Vec<f64>,
}

pub(crate) fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn forward(p: &Potentials) -> Vec<f64> {
    let (kn, tn) = (p.len, p.n_labels);
    let mut alpha = vec![0.0; kn * tn];
    alpha[..tn].copy_from_slice(&p.unary[..tn]);
    for k in 1..kn {
        for b in 0..tn {
            alpha[k * tn + b] =
                p.u(k, b) + log_sum_exp((0..tn).map(|a| alpha[(k - 1) * tn + a] + p.psi(a, b)));
        }
    }
    alpha
}

fn backward(p: &Potentials) -> Vec<f64> {
    let (kn, tn) = (p.len, p.n_labels);
    let mut beta = vec![0.0; kn * tn];
    for k in (0..kn.saturating_sub(1)).rev() {
        for a in 0..tn {
            beta[k * tn + a] = log_sum_exp(
                (0..tn).map(|b| p.psi(a, b) + p.u(k + 1, b) + beta[(k + 1) * tn + b]),
            );
        }
    }
    beta
}

/// Standard forward-backward: `log Z` with path marginals.
pub fn forward_backward(p: &Potentials) -> Posterior {
    let (kn, tn) = (p.len, p.n_labels);
    let alpha = forward(p);
    let beta = backward(p);
    let log_z = log_sum_exp(alpha[(kn - 1) * tn..].iter().copied());
    let unary = (0..kn * tn).map(|i| (alpha[i] + beta[i] - log_z).exp()).collect();
    let mut pair = vec![0.0; tn * tn];
    for k in 1..kn {
        for a in 0..tn {
            for b in 0..tn {
                pair[a * tn + b] += (alpha[(k - 1) * tn + a] + p.psi(a, b) + p.u(k, b) + beta[k * tn + b] - log_z).exp();
            }
        }
    }
    Posterior { log_norm: log_z, unary, pair }
}

fn ln_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY }).collect()
}

fn check_weights(p: &Potentials, w: &[f64]) -> Result<()> {
    if w.len() != p.len * p.n_labels || w.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::validation("cost weights must be finite, nonnegative, one per (position, label)"));
    }
    Ok(())
}

/// Cost-weighted normalizer `log sum_z (1/K) sum_k w_k(z_k) exp(s(z))` and
/// the marginals of the distribution it normalizes, in one forward-backward
/// pass that carries a first-order cost moment alongside every cell.
pub fn cost_weighted(p: &Potentials, w: &[f64]) -> Result<Posterior> {
    check_weights(p, w)?;
    let (kn, tn) = (p.len, p.n_labels);
    let lw = ln_weights(w);
    let alpha = forward(p);
    let beta = backward(p);

    // alpha_m[k][b]: sum over prefixes ending in b of (accumulated cost) * exp(score).
    let mut alpha_m = vec![f64::NEG_INFINITY; kn * tn];
    for b in 0..tn {
        alpha_m[b] = lw[b] + alpha[b];
    }
    for k in 1..kn {
        for b in 0..tn {
            let carried = p.u(k, b) + log_sum_exp((0..tn).map(|a| alpha_m[(k - 1) * tn + a] + p.psi(a, b)));
            alpha_m[k * tn + b] = lse2(carried, lw[k * tn + b] + alpha[k * tn + b]);
        }
    }
    // beta_m[k][a]: the same for suffixes strictly after k.
    let mut beta_m = vec![f64::NEG_INFINITY; kn * tn];
    for k in (0..kn.saturating_sub(1)).rev() {
        for a in 0..tn {
            beta_m[k * tn + a] = log_sum_exp((0..tn).map(|b| {
                let j = (k + 1) * tn + b;
                p.psi(a, b) + p.u(k + 1, b) + lse2(lw[j] + beta[j], beta_m[j])
            }));
        }
    }

    let log_total = log_sum_exp(alpha_m[(kn - 1) * tn..].iter().copied());
    if !log_total.is_finite() {
        return Err(Error::numerical(
            "cost-weighted normalizer is not finite",
            format!("log total {log_total}, {tn} labels, weights {w:?}"),
        ));
    }
    let unary = (0..kn * tn)
        .map(|i| (lse2(alpha_m[i] + beta[i], alpha[i] + beta_m[i]) - log_total).exp())
        .collect();
    let mut pair = vec![0.0; tn * tn];
    for k in 1..kn {
        for a in 0..tn {
            let (pa, pam) = (alpha[(k - 1) * tn + a], alpha_m[(k - 1) * tn + a]);
            for b in 0..tn {
                let j = k * tn + b;
                let rest = lse2(lw[j] + beta[j], beta_m[j]);
                let cell = lse2(pam + beta[j], pa + rest) + p.psi(a, b) + p.u(k, b);
                pair[a * tn + b] += (cell - log_total).exp();
            }
        }
    }
    Ok(Posterior { log_norm: log_total - (kn as f64).ln(), unary, pair })
}

/// [`cost_weighted`] computed the slow way: one forward-backward per
/// position with that position's weights folded into its unary scores.
pub fn cost_weighted_naive(p: &Potentials, w: &[f64]) -> Result<Posterior> {
    check_weights(p, w)?;
    let (kn, tn) = (p.len, p.n_labels);
    let lw = ln_weights(w);
    let mut parts = Vec::with_capacity(kn);
    for k in 0..kn {
        let mut q = p.clone();
        for y in 0..tn {
            q.unary[k * tn + y] += lw[k * tn + y];
        }
        if (0..tn).all(|y| lw[k * tn + y] == f64::NEG_INFINITY) {
            continue;
        }
        parts.push(forward_backward(&q));
    }
    let log_total = log_sum_exp(parts.iter().map(|q| q.log_norm));
    if !log_total.is_finite() {
        return Err(Error::numerical("cost-weighted normalizer is not finite", format!("{w:?}")));
    }
    let mut unary = vec![0.0; kn * tn];
    let mut pair = vec![0.0; tn * tn];
    for q in &parts {
        let share = (q.log_norm - log_total).exp();
        unary.iter_mut().zip(&q.unary).for_each(|(a, b)| *a += share * b);
        pair.iter_mut().zip(&q.pair).for_each(|(a, b)| *a += share * b);
    }
    Ok(Posterior { log_norm: log_total - (kn as f64).ln(), unary, pair })
}

/// Highest-scoring path; each backpointer and the final label prefer the
/// smaller label id on ties.
pub fn viterbi(p: &Potentials) -> (Vec<usize>, f64) {
    let (kn, tn) = (p.len, p.n_labels);
    let mut delta = p.unary[..tn].to_vec();
    let mut back = vec![0usize; kn * tn];
    for k in 1..kn {
        let mut next = vec![0.0; tn];
        for b in 0..tn {
            let mut best = 0;
            let mut best_v = delta[0] + p.psi(0, b);
            for a in 1..tn {
                let v = delta[a] + p.psi(a, b);
                if v > best_v {
                    best = a;
                    best_v = v;
                }
            }
            back[k * tn + b] = best;
            next[b] = best_v + p.u(k, b);
        }
        delta = next;
    }
    let mut last = 0;
    for b in 1..tn {
        if delta[b] > delta[last] {
            last = b;
        }
    }
    let score = delta[last];
    let mut path = vec![last; kn];
    for k in (1..kn).rev() {
        path[k - 1] = back[k * tn + path[k]];
    }
    (path, score)
}
