//! Linear-chain sequence labeler trained either by conditional log-likelihood
//! or by the cost-sensitive objective
//!
//! ```text
//! sum_i [ s(z_i) - log sum_z cost(z, z_i) exp(s(z)) ] - (l2 / 2) |theta|^2
//! ```
//!
//! where `cost` is a Hamming loss whose per-position weight is
//! `1 - CF(y, t)` for a wrong label `y` against truth `t`.
//!
//! # Model file
//!
//! Little-endian throughout:
//!
//! | field | type |
//! |---|---|
//! | magic `CRWDCRF\0` | 8 bytes |
//! | format version (1) | u32 |
//! | mode (0 = cost, 1 = cll) | u8 |
//! | label count, then per label: byte length + UTF-8 | u32, (u32, bytes)* |
//! | feature count, then per feature: byte length + UTF-8 | u32, (u32, bytes)* |
//! | weight count, then weights | u64, f64* |
//!
//! Weights are `features x labels` emission weights followed by the
//! `labels x labels` transition matrix (previous label first).

mod chain;
mod features;
mod lbfgs;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use chain::{cost_weighted, cost_weighted_naive, forward_backward, viterbi, Posterior, Potentials};
pub use features::{token_features, FeatureIndex};
pub use lbfgs::{minimize, LbfgsConfig, Minimum};

use crate::ambiguity::LabelConfusion;
use crate::corpus::{Corpus, LabelId, LabelSet};
use crate::error::{Error, Result};

/// Largest confusion probability used in a cost weight.
pub const CF_CLAMP: f64 = 1.0 - 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Cost,
    Cll,
}

impl FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cost" => Ok(TrainMode::Cost),
            "cll" => Ok(TrainMode::Cll),
            _ => Err(Error::Config(format!("unknown training mode {s:?} (expected cost or cll)"))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Cost => "cost",
            TrainMode::Cll => "cll",
        })
    }
}

/// Per-position cost weights `w(y | t) = (1 - min(CF(y, t), CF_CLAMP)) [y != t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    n: usize,
    w: Vec<f64>,
}

impl CostTable {
    pub fn from_cf(cf: &LabelConfusion) -> Self {
        let n = cf.n_labels();
        let mut w = vec![0.0; n * n];
        for t in 0..n {
            for y in (0..n).filter(|&y| y != t) {
                w[t * n + y] = 1.0 - cf.get(y, t).min(CF_CLAMP);
            }
        }
        CostTable { n, w }
    }

    /// Plain Hamming weights (no confusion).
    pub fn hamming(n: usize) -> Self {
        CostTable::from_cf(&LabelConfusion::zeros(n))
    }

    pub fn n_labels(&self) -> usize {
        self.n
    }

    /// Weight of predicting `y` where the truth is `t`.
    pub fn weight(&self, t: LabelId, y: LabelId) -> f64 {
        self.w[t * self.n + y]
    }

    fn sequence_weights(&self, truth: &[LabelId]) -> Vec<f64> {
        truth.iter().flat_map(|&t| self.w[t * self.n..(t + 1) * self.n].iter().copied()).collect()
    }
}

/// Mean per-position weighted disagreement between `hypothesis` and `truth`.
pub fn cost(hypothesis: &[LabelId], truth: &[LabelId], table: &CostTable) -> Result<f64> {
    if hypothesis.len() != truth.len() {
        return Err(Error::validation(format!(
            "cost of sequences of different lengths ({} vs {})",
            hypothesis.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::validation("cost of an empty sequence"));
    }
    let total: f64 = hypothesis.iter().zip(truth).map(|(&y, &t)| table.weight(t, y)).sum();
    Ok(total / truth.len() as f64)
}

/// A featurized training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub feats: Vec<Vec<u32>>,
    pub gold: Vec<LabelId>,
}

/// Emission scores from `features x labels` weights followed by transitions.
pub fn potentials(weights: &[f64], n_labels: usize, feats: &[Vec<u32>]) -> Potentials {
    let tn = n_labels;
    let trans_at = weights.len() - tn * tn;
    let mut unary = vec![0.0; feats.len() * tn];
    for (k, fs) in feats.iter().enumerate() {
        for &f in fs {
            let row = &weights[f as usize * tn..(f as usize + 1) * tn];
            for y in 0..tn {
                unary[k * tn + y] += row[y];
            }
        }
    }
    Potentials {
        len: feats.len(),
        n_labels: tn,
        unary,
        trans: weights[trans_at..].to_vec(),
    }
}

/// Per-sequence objective term (to be maximized) and the distribution whose
/// feature expectation forms the negative half of its gradient.
pub fn sequence_objective(
    weights: &[f64],
    n_labels: usize,
    inst: &Instance,
    mode: TrainMode,
    table: Option<&CostTable>,
) -> Result<(f64, Posterior)> {
    let p = potentials(weights, n_labels, &inst.feats);
    let post = match mode {
        TrainMode::Cll => forward_backward(&p),
        TrainMode::Cost => {
            let table = table.ok_or_else(|| Error::Config("cost-sensitive mode needs a confusion matrix".into()))?;
            cost_weighted(&p, &table.sequence_weights(&inst.gold))?
        }
    };
    Ok((p.score(&inst.gold) - post.log_norm, post))
}

fn accumulate(grad: &mut [f64], n_labels: usize, inst: &Instance, post: &Posterior) {
    let tn = n_labels;
    let trans_at = grad.len() - tn * tn;
    for (k, fs) in inst.feats.iter().enumerate() {
        let marg = &post.unary[k * tn..(k + 1) * tn];
        for &f in fs {
            let row = &mut grad[f as usize * tn..(f as usize + 1) * tn];
            row[inst.gold[k]] += 1.0;
            for y in 0..tn {
                row[y] -= marg[y];
            }
        }
        if k > 0 {
            grad[trans_at + inst.gold[k - 1] * tn + inst.gold[k]] += 1.0;
        }
    }
    for (g, m) in grad[trans_at..].iter_mut().zip(&post.pair) {
        *g -= m;
    }
}

/// Fixed chunk size of the gradient reduction, independent of thread count.
const CHUNK: usize = 32;

/// Negated regularized objective and its gradient, ready for minimization.
pub fn objective_and_gradient(
    weights: &[f64],
    n_labels: usize,
    data: &[Instance],
    mode: TrainMode,
    table: Option<&CostTable>,
    l2: f64,
) -> Result<(f64, Vec<f64>)> {
    if mode == TrainMode::Cost && n_labels < 2 {
        return Err(Error::validation("cost-sensitive training needs at least two labels"));
    }
    let partials: Vec<(f64, Vec<f64>)> = data
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut ll = 0.0;
            let mut grad = vec![0.0; weights.len()];
            for inst in chunk {
                let (l, post) = sequence_objective(weights, n_labels, inst, mode, table)?;
                ll += l;
                accumulate(&mut grad, n_labels, inst, &post);
            }
            Ok((ll, grad))
        })
        .collect::<Result<_>>()?;
    let mut ll = 0.0;
    let mut grad = vec![0.0; weights.len()];
    for (l, g) in partials {
        ll += l;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let penalty: f64 = 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    let loss = penalty - ll;
    for (g, w) in grad.iter_mut().zip(weights) {
        *g = l2 * w - *g;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub l2: f64,
    pub max_epochs: usize,
    pub grad_tol: f64,
    /// Recorded for provenance. Training starts from zero weights and uses
    /// full-batch gradients, so no randomness is drawn.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { mode: TrainMode::Cost, l2: 1.0, max_epochs: 200, grad_tol: 1e-4, seed: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainStats {
    pub epochs: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    labels: LabelSet,
    mode: TrainMode,
    features: FeatureIndex,
    weights: Vec<f64>,
}

const MAGIC: &[u8; 8] = b"CRWDCRF\0";
const FORMAT_VERSION: u32 = 1;

impl CrfModel {
    pub fn new(labels: LabelSet, mode: TrainMode, features: FeatureIndex, weights: Vec<f64>) -> Result<Self> {
        let tn = labels.len();
        if weights.len() != (features.len() + tn) * tn {
            return Err(Error::Model(format!(
                "{} weights do not fit {} features and {tn} labels",
                weights.len(),
                features.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Model("model has non-finite weights".into()));
        }
        Ok(CrfModel { labels, mode, features, weights })
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn mode(&self) -> TrainMode {
        self.mode
    }

    pub fn features(&self) -> &FeatureIndex {
        &self.features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn potentials(&self, words: &[&str]) -> Potentials {
        potentials(&self.weights, self.labels.len(), &self.features.featurize(words))
    }

    pub fn predict_sequence(&self, words: &[&str]) -> Vec<LabelId> {
        if words.is_empty() {
            return Vec::new();
        }
        viterbi(&self.potentials(words)).0
    }

    /// Viterbi labels for every token of `corpus`, flattened.
    pub fn predict(&self, corpus: &Corpus) -> Vec<LabelId> {
        let per_seq: Vec<Vec<LabelId>> = corpus
            .sequences()
            .par_iter()
            .map(|seq| {
                let words: Vec<&str> = seq.iter().map(|t| t.surface.as_str()).collect();
                self.predict_sequence(&words)
            })
            .collect();
        per_seq.concat()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(match self.mode {
            TrainMode::Cost => 0,
            TrainMode::Cll => 1,
        });
        for names in [self.labels.names(), self.features.names()] {
            out.extend_from_slice(&(names.len() as u32).to_le_bytes());
            for n in names {
                out.extend_from_slice(&(n.len() as u32).to_le_bytes());
                out.extend_from_slice(n.as_bytes());
            }
        }
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Model("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Model(format!("unsupported model format version {version}")));
        }
        let mode = match r.take(1)?[0] {
            0 => TrainMode::Cost,
            1 => TrainMode::Cll,
            m => return Err(Error::Model(format!("unknown mode byte {m}"))),
        };
        let labels = LabelSet::new(r.strings()?).map_err(|e| Error::Model(format!("bad label set: {e}")))?;
        let features = FeatureIndex::from_names(r.strings()?)
            .ok_or_else(|| Error::Model("duplicate feature names".into()))?;
        let n = r.u64()? as usize;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Model("weight count overflows".into()))?)?;
        let weights = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if r.pos != bytes.len() {
            return Err(Error::Model("trailing bytes after weights".into()));
        }
        CrfModel::new(labels, mode, features, weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        CrfModel::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Model("model file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.u32()? as usize;
        (0..n)
            .map(|_| {
                let len = self.u32()? as usize;
                String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Model("invalid UTF-8 in model file".into()))
            })
            .collect()
    }
}

/// Featurize `corpus` (growing a fresh index) against flat labels.
pub fn build_instances(corpus: &Corpus, labels: &[LabelId]) -> Result<(FeatureIndex, Vec<Instance>)> {
    if labels.len() != corpus.n_tokens() {
        return Err(Error::validation(format!(
            "{} training labels for {} tokens",
            labels.len(),
            corpus.n_tokens()
        )));
    }
    let mut index = FeatureIndex::default();
    let instances = corpus
        .sequences()
        .iter()
        .zip(corpus.split(labels))
        .map(|(seq, gold)| {
            let words: Vec<&str> = seq.iter().map(|t| t.surface.as_str()).collect();
            Instance { feats: index.featurize_mut(&words), gold: gold.to_vec() }
        })
        .collect();
    Ok((index, instances))
}

/// Fit weights on prepared instances from zero.
pub fn train_instances(
    n_features: usize,
    n_labels: usize,
    data: &[Instance],
    table: Option<&CostTable>,
    config: &TrainConfig,
) -> Result<(Vec<f64>, TrainStats)> {
    if data.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if !config.l2.is_finite() || config.l2 < 0.0 {
        return Err(Error::Config(format!("l2 must be a nonnegative number, got {}", config.l2)));
    }
    let dim = (n_features + n_labels) * n_labels;
    let lbfgs = LbfgsConfig { grad_tol: config.grad_tol, max_iter: config.max_epochs, ..Default::default() };
    let min = minimize(
        |w| {
            let (loss, grad) = objective_and_gradient(w, n_labels, data, config.mode, table, config.l2)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::numerical(
                    "training diverged",
                    format!("loss {loss}, weight norm {}", w.iter().map(|x| x * x).sum::<f64>().sqrt()),
                ));
            }
            Ok((loss, grad))
        },
        vec![0.0; dim],
        &lbfgs,
    )?;
    if !min.converged {
        log::warn!(
            "training stopped after {} epochs with gradient norm {:.3e}",
            min.iterations,
            min.grad_norm
        );
    }
    let stats = TrainStats { epochs: min.iterations, loss: min.value, grad_norm: min.grad_norm, converged: min.converged };
    Ok((min.x, stats))
}

/// Train a model on `corpus` labeled with `labels` (flat, one per token).
pub fn train(
    corpus: &Corpus,
    labels: &[LabelId],
    label_set: &LabelSet,
    cf: Option<&LabelConfusion>,
    config: &TrainConfig,
) -> Result<(CrfModel, TrainStats)> {
    let tn = label_set.len();
    let table = match (config.mode, cf) {
        (TrainMode::Cost, Some(cf)) if cf.n_labels() == tn => Some(CostTable::from_cf(cf)),
        (TrainMode::Cost, Some(cf)) => {
            return Err(Error::validation(format!(
                "confusion matrix covers {} labels, label set has {tn}",
                cf.n_labels()
            )))
        }
        (TrainMode::Cost, None) => return Err(Error::Config("cost-sensitive mode needs a confusion matrix".into())),
        (TrainMode::Cll, _) => None,
    };
    let (index, data) = build_instances(corpus, labels)?;
    let (weights, stats) = train_instances(index.len(), tn, &data, table.as_ref(), config)?;
    Ok((CrfModel::new(label_set.clone(), config.mode, index, weights)?, stats))
}
