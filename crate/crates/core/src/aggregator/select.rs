use rayon::prelude::*;
use serde::Serialize;

use super::state::{log_likelihood, SamplerState};
use super::{run_chain, AggregationResult, Hyperparams, Schedule};
use crate::corpus::CrowdAnnotations;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct ModelScore {
    pub n_clusters: usize,
    pub log_likelihood: f64,
    pub n_params: usize,
    pub bic: f64,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub best_clusters: usize,
    pub scores: Vec<ModelScore>,
    pub result: AggregationResult,
}

/// Free parameters of a `C`-cluster model: `T - 1` per `beta` row plus one `eta` per row.
pub fn bic_parameter_count(n_clusters: usize, n_labels: usize) -> usize {
    n_clusters * n_labels * (n_labels - 1) + n_clusters * n_labels
}

fn score(ann: &CrowdAnnotations, res: &AggregationResult) -> Result<ModelScore> {
    let state = SamplerState::from_parts(
        ann,
        res.n_clusters,
        res.c_hat.clone(),
        res.z_hat.clone(),
        res.eta_mean.clone(),
        res.beta_mean.clone(),
    )?;
    let ll = log_likelihood(&state);
    let k = bic_parameter_count(res.n_clusters, res.n_labels);
    Ok(ModelScore {
        n_clusters: res.n_clusters,
        log_likelihood: ll,
        n_params: k,
        bic: -2.0 * ll + k as f64 * (ann.len() as f64).ln(),
    })
}

/// Run one chain per candidate cluster count (concurrently) and keep the
/// lowest BIC. The likelihood is the collapsed likelihood at the posterior
/// modes `(c_hat, z_hat)` and posterior means of `(eta, beta)`.
pub fn select_model(
    ann: &CrowdAnnotations,
    template: &Hyperparams,
    cluster_range: &[usize],
    schedule: &Schedule,
    seed: u64,
) -> Result<Selection> {
    if cluster_range.is_empty() {
        return Err(Error::Config("cluster range is empty".into()));
    }
    let runs: Vec<(AggregationResult, ModelScore)> = cluster_range
        .par_iter()
        .map(|&cn| {
            let res = run_chain(ann, &template.with_clusters(cn), schedule, seed)?;
            let s = score(ann, &res)?;
            Ok((res, s))
        })
        .collect::<Result<_>>()?;
    let best = (0..runs.len())
        .min_by(|&a, &b| {
            runs[a]
                .1
                .bic
                .total_cmp(&runs[b].1.bic)
                .then(runs[a].1.n_clusters.cmp(&runs[b].1.n_clusters))
        })
        .unwrap();
    let scores = runs.iter().map(|r| r.1.clone()).collect();
    let (result, best_score) = runs.into_iter().nth(best).unwrap();
    Ok(Selection {
        best_clusters: best_score.n_clusters,
        scores,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count() {
        assert_eq!(bic_parameter_count(1, 2), 4);
        assert_eq!(bic_parameter_count(3, 12), 3 * 12 * 11 + 36);
    }
}
