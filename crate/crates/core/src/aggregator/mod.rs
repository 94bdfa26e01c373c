//! Hierarchical Bayesian aggregation of crowd labels.
//!
//! Each annotator `l` belongs to a cluster `c_l`; its confusion matrix rows
//! are drawn as `Psi_t ~ Dirichlet(eta^c_t beta^c_t)` around a cluster-level
//! mean `beta^c_t ~ Dirichlet(lambda_t alpha_t)` with precision
//! `eta^c_t ~ Exponential(lambda_t)`. Confusion matrices are integrated out;
//! truths and clusters are Gibbs-sampled and `(eta, beta)` refreshed by MH.

mod confusion;
mod gibbs;
pub mod io;
mod mh;
mod select;
mod state;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use confusion::{most_reliable, shared_confusion, ConfusionMatrix};
pub use gibbs::{cluster_log_weights, normalize, sample_cluster, sample_truth, truth_log_weights};
pub use mh::{beta_conditional_log_density, eta_conditional_log_density, mh_beta, mh_eta, MhMode, MhStats};
pub use select::{bic_parameter_count, select_model, ModelScore, Selection};
pub use state::{init_state, log_likelihood, Counts, SamplerState};

use crate::corpus::{CrowdAnnotations, LabelId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_clusters: usize,
    /// Exponential rate per truth label.
    pub lambda: Vec<f64>,
    /// Row-major `T x T` Dirichlet base.
    alpha: Vec<f64>,
    pub eps_nu: f64,
    pub eps_gamma: f64,
}

impl Hyperparams {
    /// `lambda_t = 2`, `alpha` 0.7 on the diagonal and 0.3 elsewhere, both
    /// concentrations 1.
    pub fn new(n_clusters: usize, n_labels: usize) -> Self {
        let mut h = Hyperparams {
            n_clusters,
            lambda: vec![2.0; n_labels],
            alpha: vec![0.0; n_labels * n_labels],
            eps_nu: 1.0,
            eps_gamma: 1.0,
        };
        h.set_alpha(0.7, 0.3);
        h
    }

    pub fn n_labels(&self) -> usize {
        self.lambda.len()
    }

    pub fn set_alpha(&mut self, diagonal: f64, off_diagonal: f64) {
        let n = self.n_labels();
        for t in 0..n {
            for s in 0..n {
                self.alpha[t * n + s] = if t == s { diagonal } else { off_diagonal };
            }
        }
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda.iter_mut().for_each(|l| *l = lambda);
    }

    pub fn with_clusters(&self, n_clusters: usize) -> Self {
        Hyperparams {
            n_clusters,
            ..self.clone()
        }
    }

    pub fn alpha(&self, t: usize, s: usize) -> f64 {
        self.alpha[t * self.n_labels() + s]
    }

    pub fn alpha_row(&self, t: usize) -> &[f64] {
        let n = self.n_labels();
        &self.alpha[t * n..(t + 1) * n]
    }

    pub fn validate(&self, n_labels: usize) -> Result<()> {
        if self.n_labels() != n_labels {
            return Err(Error::Config(format!(
                "hyperparameters are for {} labels, data has {n_labels}",
                self.n_labels()
            )));
        }
        if self.n_clusters == 0 {
            return Err(Error::Config("need at least one cluster".into()));
        }
        let positive = |x: &f64| x.is_finite() && *x > 0.0;
        if !self.lambda.iter().all(positive)
            || !self.alpha.iter().all(positive)
            || !positive(&self.eps_nu)
            || !positive(&self.eps_gamma)
        {
            return Err(Error::Config("all hyperparameters must be strictly positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub burn_in: usize,
    /// Retained sweeps.
    pub n_samples: usize,
    pub thin: usize,
    /// MH steps per `(c, t, j)` and per `(c, t)` target in every sweep.
    pub mh_steps: usize,
    pub mh_mode: MhMode,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            burn_in: 200,
            n_samples: 300,
            thin: 2,
            mh_steps: 20,
            mh_mode: MhMode::Faithful,
        }
    }
}

impl Schedule {
    pub fn total_sweeps(&self) -> usize {
        self.burn_in + self.n_samples * self.thin
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub sweeps: usize,
    pub retained: usize,
    pub beta_moves: MhStats,
    pub eta_moves: MhStats,
    pub beta_acceptance: f64,
    pub eta_acceptance: f64,
    /// Collapsed log-likelihood after every sweep.
    pub log_likelihood: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AggregationResult {
    pub n_clusters: usize,
    pub n_labels: usize,
    /// Per-token posterior mode of the truth.
    pub z_hat: Vec<LabelId>,
    /// Per-annotator posterior mode of the cluster.
    pub c_hat: Vec<usize>,
    /// Shared confusion matrix of every cluster under `(z_hat, c_hat)`.
    pub shared: Vec<ConfusionMatrix>,
    pub reliable_cluster: usize,
    /// Posterior means over retained sweeps, `[c][t]` and `[c][t][s]`.
    pub eta_mean: Vec<f64>,
    pub beta_mean: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl AggregationResult {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.c_hat.len()).filter(|&l| self.c_hat[l] == cluster).collect()
    }

    /// Nonempty cluster with the smallest mean shared-confusion diagonal.
    pub fn least_reliable_cluster(&self) -> usize {
        (0..self.n_clusters)
            .filter(|&c| self.c_hat.contains(&c))
            .min_by(|&a, &b| {
                self.shared[a]
                    .mean_diagonal()
                    .total_cmp(&self.shared[b].mean_diagonal())
            })
            .unwrap_or(0)
    }
}

fn argmax_low(votes: &[u32]) -> usize {
    let mut best = 0;
    for (k, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = k;
        }
    }
    best
}

/// Run one chain and summarize it.
///
/// A sweep resamples every truth, then every cluster assignment, then
/// refreshes every off-diagonal `beta^c_{tj}` and every `eta^c_t` by MH.
pub fn run_chain(
    ann: &CrowdAnnotations,
    hyper: &Hyperparams,
    schedule: &Schedule,
    seed: u64,
) -> Result<AggregationResult> {
    sweep_chain(ann, hyper, schedule, seed)
}

/// [`run_chain`] with annotators visited (and their randomness consumed) in
/// ascending `keys` order rather than id order. Relabeling the annotators
/// together with their keys leaves the chain unchanged.
pub fn run_chain_keyed(
    ann: &CrowdAnnotations,
    hyper: &Hyperparams,
    schedule: &Schedule,
    seed: u64,
    keys: &[u64],
) -> Result<AggregationResult> {
    if keys.len() != ann.n_annotators() {
        return Err(Error::validation("need one key per annotator"));
    }
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&l| (keys[l], l));
    let mut rank = vec![0; keys.len()];
    for (r, &l) in order.iter().enumerate() {
        rank[l] = r;
    }
    let internal = ann.permute_annotators(&rank)?;
    let mut res = sweep_chain(&internal, hyper, schedule, seed)?;
    res.c_hat = (0..keys.len()).map(|l| res.c_hat[rank[l]]).collect();
    Ok(res)
}

fn sweep_chain(
    ann: &CrowdAnnotations,
    hyper: &Hyperparams,
    schedule: &Schedule,
    seed: u64,
) -> Result<AggregationResult> {
    if schedule.n_samples == 0 {
        return Err(Error::Config("schedule must retain at least one sample".into()));
    }
    if schedule.thin == 0 {
        return Err(Error::Config("thinning interval must be at least 1".into()));
    }
    let tn = ann.n_labels();
    if tn < 2 {
        return Err(Error::validation("aggregation needs at least two labels"));
    }
    ann.check_coverage()?;
    hyper.validate(tn)?;

    let cn = hyper.n_clusters;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = init_state(ann, hyper, &mut rng)?;

    let mut z_votes = vec![0u32; ann.n_tokens() * tn];
    let mut c_votes = vec![0u32; ann.n_annotators() * cn];
    let mut eta_sum = vec![0.0; cn * tn];
    let mut beta_sum = vec![0.0; cn * tn * tn];
    let mut beta_moves = MhStats::default();
    let mut eta_moves = MhStats::default();
    let mut trace = Vec::with_capacity(schedule.total_sweeps());
    let mut retained = 0;

    for sweep in 0..schedule.total_sweeps() {
        for i in 0..ann.n_tokens() {
            sample_truth(i, ann, &mut state, hyper, &mut rng)?;
        }
        for l in 0..ann.n_annotators() {
            sample_cluster(l, &mut state, hyper, &mut rng)?;
        }
        let members = state.members();
        for (c, m) in members.iter().enumerate() {
            for t in 0..tn {
                for j in (0..tn).filter(|&j| j != t) {
                    beta_moves.merge(mh_beta(
                        c,
                        t,
                        j,
                        &mut state,
                        m,
                        hyper,
                        schedule.mh_steps,
                        schedule.mh_mode,
                        &mut rng,
                    ));
                }
                eta_moves.merge(mh_eta(
                    c,
                    t,
                    &mut state,
                    m,
                    hyper,
                    schedule.mh_steps,
                    schedule.mh_mode,
                    &mut rng,
                ));
            }
        }
        let ll = log_likelihood(&state);
        if !ll.is_finite() {
            return Err(Error::numerical(
                format!("log-likelihood became {ll} at sweep {sweep}"),
                format!("eta: {:?}", state.eta_table()),
            ));
        }
        trace.push(ll);

        if sweep >= schedule.burn_in && (sweep - schedule.burn_in + 1).is_multiple_of(schedule.thin) {
            retained += 1;
            for (i, &t) in state.z.iter().enumerate() {
                z_votes[i * tn + t] += 1;
            }
            for (l, &c) in state.c.iter().enumerate() {
                c_votes[l * cn + c] += 1;
            }
            eta_sum.iter_mut().zip(state.eta_table()).for_each(|(a, b)| *a += b);
            beta_sum.iter_mut().zip(state.beta_table()).for_each(|(a, b)| *a += b);
        }
    }

    let z_hat: Vec<LabelId> = z_votes.chunks(tn).map(argmax_low).collect();
    let c_hat: Vec<usize> = c_votes.chunks(cn).map(argmax_low).collect();
    let shared: Vec<ConfusionMatrix> = (0..cn)
        .map(|c| {
            let members: Vec<usize> = (0..c_hat.len()).filter(|&l| c_hat[l] == c).collect();
            shared_confusion(ann, &z_hat, &members)
        })
        .collect();
    let sizes: Vec<usize> = (0..cn).map(|c| c_hat.iter().filter(|&&x| x == c).count()).collect();
    let reliable_cluster = most_reliable(&shared, &sizes);
    let scale = 1.0 / retained as f64;

    Ok(AggregationResult {
        n_clusters: cn,
        n_labels: tn,
        z_hat,
        c_hat,
        shared,
        reliable_cluster,
        eta_mean: eta_sum.into_iter().map(|x| x * scale).collect(),
        beta_mean: beta_sum.into_iter().map(|x| x * scale).collect(),
        diagnostics: Diagnostics {
            sweeps: schedule.total_sweeps(),
            retained,
            beta_acceptance: beta_moves.rate(),
            eta_acceptance: eta_moves.rate(),
            beta_moves,
            eta_moves,
            log_likelihood: trace,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Annotation;

    fn perfect_crowd(n_tokens: usize, n_labels: usize, n_ann: usize) -> (Vec<usize>, CrowdAnnotations) {
        let gold: Vec<usize> = (0..n_tokens).map(|i| (i * 5 + 1) % n_labels).collect();
        let entries = (0..n_tokens)
            .flat_map(|i| {
                let g = gold[i];
                (0..n_ann).map(move |l| Annotation { token: i, annotator: l, label: g })
            })
            .collect();
        (gold, CrowdAnnotations::new(&[n_tokens], n_labels, n_ann, entries).unwrap())
    }

    fn short() -> Schedule {
        Schedule {
            burn_in: 20,
            n_samples: 20,
            thin: 1,
            mh_steps: 5,
            mh_mode: MhMode::Faithful,
        }
    }

    #[test]
    fn perfect_annotators_recover_gold_for_any_cluster_count() {
        let (gold, ann) = perfect_crowd(60, 4, 4);
        for cn in 1..=3 {
            let res = run_chain(&ann, &Hyperparams::new(cn, 4), &short(), 3).unwrap();
            assert_eq!(res.z_hat, gold, "C = {cn}");
        }
    }

    #[test]
    fn zero_samples_is_an_error() {
        let (_, ann) = perfect_crowd(5, 2, 2);
        let sched = Schedule { n_samples: 0, ..short() };
        assert!(matches!(run_chain(&ann, &Hyperparams::new(1, 2), &sched, 0), Err(Error::Config(_))));
    }

    #[test]
    fn chain_is_deterministic_per_seed() {
        let (_, ann) = perfect_crowd(30, 3, 3);
        let h = Hyperparams::new(2, 3);
        let a = run_chain(&ann, &h, &short(), 9).unwrap();
        let b = run_chain(&ann, &h, &short(), 9).unwrap();
        assert_eq!(a.z_hat, b.z_hat);
        assert_eq!(a.c_hat, b.c_hat);
        assert_eq!(a.diagnostics.log_likelihood, b.diagnostics.log_likelihood);
    }

    #[test]
    fn hyperparameter_validation() {
        let mut h = Hyperparams::new(2, 3);
        assert!(h.validate(3).is_ok());
        assert!(h.validate(4).is_err());
        h.eps_nu = 0.0;
        assert!(h.validate(3).is_err());
    }

    #[test]
    fn identity_keys_match_plain_chain() {
        let (_, ann) = perfect_crowd(20, 3, 4);
        let h = Hyperparams::new(2, 3);
        let a = run_chain(&ann, &h, &short(), 5).unwrap();
        let b = run_chain_keyed(&ann, &h, &short(), 5, &[0, 1, 2, 3]).unwrap();
        assert_eq!(a.c_hat, b.c_hat);
        assert_eq!(a.z_hat, b.z_hat);
    }
}
