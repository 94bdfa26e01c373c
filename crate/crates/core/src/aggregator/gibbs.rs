//! Collapsed Gibbs conditionals for annotator clusters and token truths.

use rand::Rng;

use super::state::{annotator_log_likelihood, SamplerState};
use super::Hyperparams;
use crate::corpus::CrowdAnnotations;
use crate::error::{Error, Result};

/// Unnormalized `ln p(c_l = c | c^{-l}, z, Y, eta, beta)` for every `c`.
///
/// Prior term `n_c^{-l} + eps_nu / C`; likelihood is the annotator's
/// integrated confusion-row factor under cluster `c`'s `(eta, beta)`.
pub fn cluster_log_weights(l: usize, state: &SamplerState, hyper: &Hyperparams) -> Vec<f64> {
    let cn = state.n_clusters;
    let prior = hyper.eps_nu / cn as f64;
    (0..cn)
        .map(|c| {
            let others = state.counts.n_c[c] - usize::from(state.c[l] == c);
            (others as f64 + prior).ln() + annotator_log_likelihood(state, l, c)
        })
        .collect()
}

/// Unnormalized `ln p(z_i = t | z^{-i}, Y, c, eta, beta)` for every `t`,
/// with token `i` removed from every count.
pub fn truth_log_weights(
    i: usize,
    ann: &CrowdAnnotations,
    state: &SamplerState,
    hyper: &Hyperparams,
) -> Vec<f64> {
    let tn = state.n_labels;
    let current = state.z[i];
    let prior = hyper.eps_gamma / tn as f64;
    let votes = ann.token(i);
    // Factors are multiplied in linear space and folded into the log sum only
    // when the running products approach the ends of the f64 range.
    (0..tn)
        .map(|t| {
            let own = usize::from(t == current);
            let mut w = ((state.counts.n_t[t] - own) as f64 + prior).ln();
            let (mut num, mut den) = (1.0f64, 1.0f64);
            for a in votes {
                let l = a.annotator;
                let c = state.c[l];
                let eta = state.eta(c, t);
                let n_lt = (state.n_lt(l, t) - own) as f64;
                let n_lts = (state.n_lts(l, t, a.label) - own) as f64;
                let (f, g) = (n_lts + eta * state.beta(c, t, a.label), n_lt + eta);
                if f < 1e-100 || g < 1e-100 {
                    w += f.ln() - g.ln();
                    continue;
                }
                num *= f;
                den *= g;
                if !(1e-200..=1e200).contains(&num) || !(1e-200..=1e200).contains(&den) {
                    w += num.ln() - den.ln();
                    num = 1.0;
                    den = 1.0;
                }
            }
            w + num.ln() - den.ln()
        })
        .collect()
}

/// Normalize log weights into probabilities.
pub fn normalize(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

pub(crate) fn draw<R: Rng>(log_w: &[f64], rng: &mut R, what: impl FnOnce() -> String) -> Result<usize> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || log_w.iter().any(|x| x.is_nan()) {
        return Err(Error::numerical(
            format!("non-finite conditional for {}", what()),
            format!("log weights: {log_w:?}"),
        ));
    }
    let w: Vec<f64> = log_w.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &wk) in w.iter().enumerate() {
        if u < wk {
            return Ok(k);
        }
        u -= wk;
    }
    // Rounding left `u` just past the end; fall back to the last positive weight.
    Ok(w.iter().rposition(|&x| x > 0.0).unwrap_or(0))
}

pub fn sample_cluster<R: Rng>(
    l: usize,
    state: &mut SamplerState,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    if state.n_clusters == 1 {
        return Ok(());
    }
    let log_w = cluster_log_weights(l, state, hyper);
    let c = draw(&log_w, rng, || format!("cluster of annotator {l}"))?;
    state.reassign_cluster(l, c);
    Ok(())
}

pub fn sample_truth<R: Rng>(
    i: usize,
    ann: &CrowdAnnotations,
    state: &mut SamplerState,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    let log_w = truth_log_weights(i, ann, state, hyper);
    let t = draw(&log_w, rng, || format!("truth of token {i}"))?;
    state.reassign_truth(ann, i, t);
    Ok(())
}
