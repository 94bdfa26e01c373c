use rand::Rng;
use statrs::function::gamma::ln_gamma;

use super::Hyperparams;
use crate::corpus::{CrowdAnnotations, LabelId};
use crate::error::{Error, Result};
use crate::evaluate::mv_token;

/// Sufficient statistics of the collapsed model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counts {
    /// Annotators per cluster.
    pub n_c: Vec<usize>,
    /// Tokens per truth label.
    pub n_t: Vec<usize>,
    /// `[l][t]`: tokens annotated by `l` whose truth is `t`.
    pub n_lt: Vec<usize>,
    /// `[l][t][s]`: tokens annotated `s` by `l` whose truth is `t`.
    pub n_lts: Vec<usize>,
}

impl Counts {
    pub fn from_assignments(
        ann: &CrowdAnnotations,
        c: &[usize],
        z: &[LabelId],
        n_clusters: usize,
    ) -> Counts {
        let t_n = ann.n_labels();
        let l_n = ann.n_annotators();
        let mut counts = Counts {
            n_c: vec![0; n_clusters],
            n_t: vec![0; t_n],
            n_lt: vec![0; l_n * t_n],
            n_lts: vec![0; l_n * t_n * t_n],
        };
        for &cl in c {
            counts.n_c[cl] += 1;
        }
        for &t in z {
            counts.n_t[t] += 1;
        }
        for a in ann.entries() {
            let t = z[a.token];
            counts.n_lt[a.annotator * t_n + t] += 1;
            counts.n_lts[(a.annotator * t_n + t) * t_n + a.label] += 1;
        }
        counts
    }
}

/// Cluster assignments, truths, per-cluster `(eta, beta)` and count tables.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub(crate) n_clusters: usize,
    pub(crate) n_labels: usize,
    pub c: Vec<usize>,
    pub z: Vec<LabelId>,
    /// `[c][t]`
    pub(crate) eta: Vec<f64>,
    /// `[c][t][s]`, each `(c, t)` row on the simplex.
    pub(crate) beta: Vec<f64>,
    pub(crate) counts: Counts,
}

impl SamplerState {
    /// Build a state from explicit assignments and parameters.
    pub fn from_parts(
        ann: &CrowdAnnotations,
        n_clusters: usize,
        c: Vec<usize>,
        z: Vec<LabelId>,
        eta: Vec<f64>,
        beta: Vec<f64>,
    ) -> Result<Self> {
        let t_n = ann.n_labels();
        if c.len() != ann.n_annotators() || z.len() != ann.n_tokens() {
            return Err(Error::validation("assignment vectors do not match the annotations"));
        }
        if c.iter().any(|&x| x >= n_clusters) || z.iter().any(|&x| x >= t_n) {
            return Err(Error::validation("assignment out of range"));
        }
        if eta.len() != n_clusters * t_n || beta.len() != n_clusters * t_n * t_n {
            return Err(Error::validation("parameter tables have the wrong shape"));
        }
        let counts = Counts::from_assignments(ann, &c, &z, n_clusters);
        Ok(SamplerState {
            n_clusters,
            n_labels: t_n,
            c,
            z,
            eta,
            beta,
            counts,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn eta(&self, c: usize, t: usize) -> f64 {
        self.eta[c * self.n_labels + t]
    }

    pub fn beta(&self, c: usize, t: usize, s: usize) -> f64 {
        self.beta[(c * self.n_labels + t) * self.n_labels + s]
    }

    pub fn beta_row(&self, c: usize, t: usize) -> &[f64] {
        let start = (c * self.n_labels + t) * self.n_labels;
        &self.beta[start..start + self.n_labels]
    }

    pub fn eta_table(&self) -> &[f64] {
        &self.eta
    }

    pub fn beta_table(&self) -> &[f64] {
        &self.beta
    }

    pub fn counts(&self) -> &Counts {
        &self.counts
    }

    #[inline]
    pub(crate) fn n_lt(&self, l: usize, t: usize) -> usize {
        self.counts.n_lt[l * self.n_labels + t]
    }

    #[inline]
    pub(crate) fn n_lts(&self, l: usize, t: usize, s: usize) -> usize {
        self.counts.n_lts[(l * self.n_labels + t) * self.n_labels + s]
    }

    pub(crate) fn set_beta(&mut self, c: usize, t: usize, s: usize, value: f64) {
        self.beta[(c * self.n_labels + t) * self.n_labels + s] = value;
    }

    pub(crate) fn set_eta(&mut self, c: usize, t: usize, value: f64) {
        self.eta[c * self.n_labels + t] = value;
    }

    /// Recompute every table from `(c, z)` and compare with the incremental ones.
    pub fn counts_consistent(&self, ann: &CrowdAnnotations) -> bool {
        Counts::from_assignments(ann, &self.c, &self.z, self.n_clusters) == self.counts
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (l, &c) in self.c.iter().enumerate() {
            out[c].push(l);
        }
        out
    }

    /// Move token `i` from its current truth to `t`, updating counts.
    pub(crate) fn reassign_truth(&mut self, ann: &CrowdAnnotations, i: usize, t: LabelId) {
        let old = self.z[i];
        if old == t {
            return;
        }
        let tn = self.n_labels;
        self.counts.n_t[old] -= 1;
        self.counts.n_t[t] += 1;
        for a in ann.token(i) {
            let l = a.annotator;
            self.counts.n_lt[l * tn + old] -= 1;
            self.counts.n_lt[l * tn + t] += 1;
            self.counts.n_lts[(l * tn + old) * tn + a.label] -= 1;
            self.counts.n_lts[(l * tn + t) * tn + a.label] += 1;
        }
        self.z[i] = t;
    }

    pub(crate) fn reassign_cluster(&mut self, l: usize, c: usize) {
        let old = self.c[l];
        self.counts.n_c[old] -= 1;
        self.counts.n_c[c] += 1;
        self.c[l] = c;
    }
}

/// Truths from per-token majority vote, clusters uniformly at random, every
/// `beta_t` at the normalized base row `alpha_t` and every `eta_t` at its
/// prior mean `1 / lambda_t`.
pub fn init_state<R: Rng>(
    ann: &CrowdAnnotations,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<SamplerState> {
    hyper.validate(ann.n_labels())?;
    let t_n = ann.n_labels();
    let cn = hyper.n_clusters;
    let z = mv_token(ann);
    let c: Vec<usize> = (0..ann.n_annotators())
        .map(|_| if cn == 1 { 0 } else { rng.random_range(0..cn) })
        .collect();
    let mut eta = Vec::with_capacity(cn * t_n);
    let mut beta = Vec::with_capacity(cn * t_n * t_n);
    for _ in 0..cn {
        for t in 0..t_n {
            eta.push(1.0 / hyper.lambda[t]);
        }
        for t in 0..t_n {
            let row = hyper.alpha_row(t);
            let total: f64 = row.iter().sum();
            beta.extend(row.iter().map(|a| a / total));
        }
    }
    SamplerState::from_parts(ann, cn, c, z, eta, beta)
}

/// `ln Γ(n + x) − ln Γ(x)`, exactly zero for `n = 0`.
#[inline]
pub(crate) fn ln_rising(x: f64, n: usize) -> f64 {
    match n {
        0 => 0.0,
        1 => x.ln(),
        2 => (x * (x + 1.0)).ln(),
        _ => ln_gamma(n as f64 + x) - ln_gamma(x),
    }
}

/// Collapsed log-likelihood `ln p(Y | z, c, eta, beta)` with every
/// annotator's confusion rows integrated out.
pub fn log_likelihood(state: &SamplerState) -> f64 {
    state
        .c
        .iter()
        .enumerate()
        .map(|(l, &c)| annotator_log_likelihood(state, l, c))
        .sum()
}

/// Per-annotator factor of [`log_likelihood`] if `l` belonged to cluster `c`.
pub(crate) fn annotator_log_likelihood(state: &SamplerState, l: usize, c: usize) -> f64 {
    let t_n = state.n_labels;
    let mut total = 0.0;
    for t in 0..t_n {
        let n_lt = state.n_lt(l, t);
        if n_lt == 0 {
            continue;
        }
        let eta = state.eta(c, t);
        total -= ln_rising(eta, n_lt);
        let row = state.beta_row(c, t);
        for (s, &b) in row.iter().enumerate() {
            total += ln_rising(eta * b, state.n_lts(l, t, s));
        }
    }
    total
}
