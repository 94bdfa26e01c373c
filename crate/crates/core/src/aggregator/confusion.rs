use serde::Serialize;

use crate::corpus::{CrowdAnnotations, LabelId};

/// Square label x label matrix; row `t` is indexed by truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    n: usize,
    values: Vec<f64>,
    /// Number of truth-`t` tokens behind row `t`.
    support: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> Self {
        ConfusionMatrix {
            n,
            values: vec![0.0; n * n],
            support: vec![0; n],
        }
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n);
        ConfusionMatrix {
            n,
            values,
            support: vec![0; n],
        }
    }

    pub fn n_labels(&self) -> usize {
        self.n
    }

    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.n + s]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n..(t + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Rows with no truth tokens behind them (left all-zero).
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.n).filter(|&t| self.support[t] == 0).collect()
    }

    pub fn mean_diagonal(&self) -> f64 {
        (0..self.n).map(|t| self.get(t, t)).sum::<f64>() / self.n as f64
    }
}

/// Cluster-level confusion matrix from unanimous member votes.
///
/// Row `t` column `s` is the fraction of truth-`t` tokens on which every
/// member of the cluster labeled `s`. A token some member skipped counts in
/// the denominator only, so rows may sum to less than one.
pub fn shared_confusion(
    ann: &CrowdAnnotations,
    z_hat: &[LabelId],
    members: &[usize],
) -> ConfusionMatrix {
    let tn = ann.n_labels();
    let mut m = ConfusionMatrix::zeros(tn);
    if members.is_empty() {
        return m;
    }
    let mut is_member = vec![false; ann.n_annotators()];
    for &l in members {
        is_member[l] = true;
    }
    let mut hits = vec![0usize; tn * tn];
    for (i, &t) in z_hat.iter().enumerate() {
        m.support[t] += 1;
        let mut seen = 0;
        let mut label = None;
        let mut unanimous = true;
        for a in ann.token(i).iter().filter(|a| is_member[a.annotator]) {
            seen += 1;
            match label {
                None => label = Some(a.label),
                Some(s) if s != a.label => unanimous = false,
                _ => {}
            }
        }
        if let (true, true, Some(s)) = (unanimous, seen == members.len(), label) {
            hits[t * tn + s] += 1;
        }
    }
    for t in 0..tn {
        if m.support[t] > 0 {
            for s in 0..tn {
                m.values[t * tn + s] = hits[t * tn + s] as f64 / m.support[t] as f64;
            }
        }
    }
    m
}

/// Index of the matrix with the largest mean diagonal; ties go to the smaller
/// index. Clusters of size zero are skipped unless every cluster is empty.
pub fn most_reliable(matrices: &[ConfusionMatrix], sizes: &[usize]) -> usize {
    let mut best: Option<usize> = None;
    for (c, m) in matrices.iter().enumerate() {
        if sizes[c] == 0 {
            continue;
        }
        if best.is_none_or(|b| m.mean_diagonal() > matrices[b].mean_diagonal()) {
            best = Some(c);
        }
    }
    best.unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Annotation;

    fn ann(rows: &[(usize, usize, usize)], n_tokens: usize, n_labels: usize, n_ann: usize) -> CrowdAnnotations {
        CrowdAnnotations::new(
            &[n_tokens],
            n_labels,
            n_ann,
            rows.iter()
                .map(|&(token, annotator, label)| Annotation { token, annotator, label })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_cluster_gives_identity() {
        let z = vec![0, 1, 2, 1];
        let rows: Vec<_> = (0..4).flat_map(|i| (0..2).map(move |l| (i, l, [0, 1, 2, 1][i]))).collect();
        let m = shared_confusion(&ann(&rows, 4, 3, 2), &z, &[0, 1]);
        for t in 0..3 {
            for s in 0..3 {
                assert_eq!(m.get(t, s), if t == s { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(m.mean_diagonal(), 1.0);
    }

    #[test]
    fn split_vote_contributes_nowhere() {
        let a = ann(&[(0, 0, 0), (0, 1, 1)], 1, 2, 2);
        let m = shared_confusion(&a, &[0], &[0, 1]);
        assert_eq!(m.row(0), &[0.0, 0.0]);
        assert_eq!(m.support()[0], 1);
        assert_eq!(m.empty_rows(), vec![1]);
    }

    #[test]
    fn skipped_token_counts_in_denominator_only() {
        let a = ann(&[(0, 0, 0), (0, 1, 0), (1, 0, 0)], 2, 2, 2);
        let m = shared_confusion(&a, &[0, 0], &[0, 1]);
        assert_eq!(m.get(0, 0), 0.5);
    }

    #[test]
    fn empty_cluster_is_all_zero() {
        let a = ann(&[(0, 0, 0)], 1, 2, 1);
        let m = shared_confusion(&a, &[0], &[]);
        assert!(m.values().iter().all(|&v| v == 0.0));
        assert_eq!(m.empty_rows(), vec![0, 1]);
    }

    #[test]
    fn most_reliable_breaks_ties_low() {
        let a = ConfusionMatrix::from_values(2, vec![0.5, 0.5, 0.5, 0.5]);
        let b = ConfusionMatrix::from_values(2, vec![0.9, 0.1, 0.2, 0.8]);
        assert_eq!(most_reliable(&[a.clone(), a.clone()], &[1, 1]), 0);
        assert_eq!(most_reliable(&[a.clone(), b.clone()], &[1, 1]), 1);
        assert_eq!(most_reliable(&[a.clone(), b.clone()], &[2, 0]), 0);
        assert_eq!(most_reliable(&[b, a], &[0, 0]), 0);
    }
}
