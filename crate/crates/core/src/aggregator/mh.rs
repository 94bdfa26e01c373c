//! Metropolis-Hastings refreshes of the per-cluster hyperparameters.
//!
//! Both samplers propose from `Uniform(0, w(x))` with `w(x) = min(2x, 1)`.
//! That proposal is not symmetric; [`MhMode::Faithful`] nonetheless accepts
//! on the plain target ratio, while [`MhMode::Corrected`] multiplies in
//! `q(x | x') / q(x' | x) = w(x) / w(x')` and, for `eta`, uses `w(x) = 2x`
//! so that the whole of `(0, inf)` is reachable.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::state::{ln_rising, SamplerState};
use super::Hyperparams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MhMode {
    #[default]
    Faithful,
    Corrected,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MhStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl MhStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn merge(&mut self, other: MhStats) {
        self.proposed += other.proposed;
        self.accepted += other.accepted;
    }
}

#[inline]
fn window(x: f64, capped: bool) -> f64 {
    if capped {
        (2.0 * x).min(1.0)
    } else {
        2.0 * x
    }
}

/// Pairs `(n_ltj, n_ltt)` over the members that saw truth `t`.
fn beta_counts(state: &SamplerState, members: &[usize], t: usize, j: usize) -> Vec<(usize, usize)> {
    members
        .iter()
        .map(|&l| (state.n_lts(l, t, j), state.n_lts(l, t, t)))
        .filter(|&(a, b)| a + b > 0)
        .collect()
}

/// Unnormalized log density of `beta_tj = x` given the rest of the row, with
/// `free = beta_tj + beta_tt` held fixed (so `beta_tt = free - x`).
///
/// The prior factor is the Beta(`lambda_t alpha_tj`, `lambda_t alpha_tt`)
/// density of `x / free`; the likelihood keeps the two `Γ` ratios per member
/// that involve `beta_tj` or `beta_tt`.
fn beta_log_target(
    x: f64,
    free: f64,
    eta: f64,
    prior_j: f64,
    prior_t: f64,
    counts: &[(usize, usize)],
) -> f64 {
    let rest = free - x;
    let frac = x / free;
    let mut lp = (prior_j - 1.0) * frac.ln() + (prior_t - 1.0) * (1.0 - frac).ln();
    for &(n_j, n_t) in counts {
        lp += ln_rising(eta * x, n_j) + ln_rising(eta * rest, n_t);
    }
    lp
}

/// Log conditional density (up to a constant) of `beta^c_{tj} = x` under the
/// state's current row, for diagnostics and tests.
pub fn beta_conditional_log_density(
    state: &SamplerState,
    members: &[usize],
    hyper: &Hyperparams,
    c: usize,
    t: usize,
    j: usize,
    x: f64,
) -> f64 {
    let free = state.beta(c, t, j) + state.beta(c, t, t);
    if x <= 0.0 || x >= free {
        return f64::NEG_INFINITY;
    }
    let lam = hyper.lambda[t];
    beta_log_target(
        x,
        free,
        state.eta(c, t),
        lam * hyper.alpha(t, j),
        lam * hyper.alpha(t, t),
        &beta_counts(state, members, t, j),
    )
}

/// Refresh `beta^c_{tj}` (and with it `beta^c_{tt}`) by `n_steps` MH steps.
#[allow(clippy::too_many_arguments)]
pub fn mh_beta<R: Rng>(
    c: usize,
    t: usize,
    j: usize,
    state: &mut SamplerState,
    members: &[usize],
    hyper: &Hyperparams,
    n_steps: usize,
    mode: MhMode,
    rng: &mut R,
) -> MhStats {
    debug_assert_ne!(t, j);
    let lam = hyper.lambda[t];
    let (prior_j, prior_t) = (lam * hyper.alpha(t, j), lam * hyper.alpha(t, t));
    let eta = state.eta(c, t);
    let counts = beta_counts(state, members, t, j);
    let others: f64 = state
        .beta_row(c, t)
        .iter()
        .enumerate()
        .filter(|&(s, _)| s != t && s != j)
        .map(|(_, &b)| b)
        .sum();
    let free = 1.0 - others;
    let mut x = state.beta(c, t, j);
    let mut lp = beta_log_target(x, free, eta, prior_j, prior_t, &counts);
    let mut stats = MhStats::default();

    for _ in 0..n_steps {
        stats.proposed += 1;
        let w = window(x, true);
        let cand = w * rng.random::<f64>();
        let u: f64 = rng.random();
        if cand <= 0.0 || cand >= free {
            continue;
        }
        let cand_lp = beta_log_target(cand, free, eta, prior_j, prior_t, &counts);
        let mut log_ratio = cand_lp - lp;
        if mode == MhMode::Corrected {
            let back = window(cand, true);
            if x >= back {
                continue;
            }
            log_ratio += w.ln() - back.ln();
        }
        if u.ln() < log_ratio {
            x = cand;
            lp = cand_lp;
            stats.accepted += 1;
        }
    }

    state.set_beta(c, t, j, x);
    state.set_beta(c, t, t, free - x);
    let sum: f64 = state.beta_row(c, t).iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        log::warn!("beta row ({c}, {t}) drifted off the simplex (sum {sum}); renormalizing");
        for s in 0..state.n_labels() {
            let b = state.beta(c, t, s);
            state.set_beta(c, t, s, b / sum);
        }
    }
    stats
}

fn eta_log_target(eta: f64, lambda: f64, row: &[f64], blocks: &[(usize, Vec<usize>)]) -> f64 {
    let mut lp = -lambda * eta;
    for (n_lt, n_lts) in blocks {
        lp -= ln_rising(eta, *n_lt);
        for (s, &n) in n_lts.iter().enumerate() {
            lp += ln_rising(eta * row[s], n);
        }
    }
    lp
}

fn eta_blocks(state: &SamplerState, members: &[usize], t: usize) -> Vec<(usize, Vec<usize>)> {
    members
        .iter()
        .filter(|&&l| state.n_lt(l, t) > 0)
        .map(|&l| {
            (
                state.n_lt(l, t),
                (0..state.n_labels()).map(|s| state.n_lts(l, t, s)).collect(),
            )
        })
        .collect()
}

/// Log conditional density (up to a constant) of `eta^c_t = x`.
pub fn eta_conditional_log_density(
    state: &SamplerState,
    members: &[usize],
    hyper: &Hyperparams,
    c: usize,
    t: usize,
    x: f64,
) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    eta_log_target(x, hyper.lambda[t], state.beta_row(c, t), &eta_blocks(state, members, t))
}

/// Refresh `eta^c_t` by `n_steps` MH steps under its Exponential(`lambda_t`) prior.
#[allow(clippy::too_many_arguments)]
pub fn mh_eta<R: Rng>(
    c: usize,
    t: usize,
    state: &mut SamplerState,
    members: &[usize],
    hyper: &Hyperparams,
    n_steps: usize,
    mode: MhMode,
    rng: &mut R,
) -> MhStats {
    let lambda = hyper.lambda[t];
    let row = state.beta_row(c, t).to_vec();
    let blocks = eta_blocks(state, members, t);
    let capped = mode == MhMode::Faithful;
    let mut x = state.eta(c, t);
    let mut lp = eta_log_target(x, lambda, &row, &blocks);
    let mut stats = MhStats::default();

    for _ in 0..n_steps {
        stats.proposed += 1;
        let w = window(x, capped);
        let cand = w * rng.random::<f64>();
        let u: f64 = rng.random();
        if cand < f64::MIN_POSITIVE {
            continue;
        }
        let cand_lp = eta_log_target(cand, lambda, &row, &blocks);
        let mut log_ratio = cand_lp - lp;
        if !capped {
            let back = window(cand, capped);
            if x >= back {
                continue;
            }
            log_ratio += w.ln() - back.ln();
        }
        if u.ln() < log_ratio {
            x = cand;
            lp = cand_lp;
            stats.accepted += 1;
        }
    }
    state.set_eta(c, t, x);
    stats
}
