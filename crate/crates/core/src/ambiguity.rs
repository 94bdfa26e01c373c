//! Ambiguity and label confusion from the disagreement of reliable annotators.
//!
//! Per sequence, the reliable annotators' group sizes form a matrix
//! `A(l, j) ~ omega_l * mu_j`; the leading singular triple gives annotator
//! reliability `omega` and element unambiguity `mu`. The lowest-`mu` tokens
//! are flagged, their observed labels scored by mean supporter reliability,
//! and the resulting candidate sets turned into a symmetric label-confusion
//! matrix.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{CrowdAnnotations, LabelId, LabelSet};
use crate::error::{Error, Result};
use crate::tsv::write_matrix;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::validation(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data.chunks(self.cols).map(|row| dot(row, v)).collect()
    }

    fn tr_mul_vec(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &ur) in self.data.chunks(self.cols).zip(u) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * ur;
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Group-size matrix of one sequence over the given reliable annotators.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSizeMatrix {
    pub seq: usize,
    /// Annotator ids, one per row, ascending.
    pub annotators: Vec<usize>,
    pub matrix: Matrix,
}

/// `A(l, j)` is the number of `annotators` who gave element `j` the same label
/// as `l`, or 0 if `l` skipped it. Rows are restricted to annotators in
/// `members` who labeled at least one element of `seq`.
pub fn build_group_matrix(ann: &CrowdAnnotations, members: &[usize], seq: usize) -> GroupSizeMatrix {
    let start = ann.offsets()[seq];
    let len = ann.offsets()[seq + 1] - start;
    let member: HashSet<usize> = members.iter().copied().collect();
    let mut annotators: Vec<usize> = (start..start + len)
        .flat_map(|i| ann.token(i).iter().map(|a| a.annotator))
        .filter(|l| member.contains(l))
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    annotators.sort_unstable();
    let row_of: BTreeMap<usize, usize> = annotators.iter().enumerate().map(|(r, &l)| (l, r)).collect();

    let mut matrix = Matrix::zeros(annotators.len(), len);
    let mut group = vec![0usize; ann.n_labels()];
    for j in 0..len {
        let votes: Vec<_> = ann
            .token(start + j)
            .iter()
            .filter(|a| row_of.contains_key(&a.annotator))
            .collect();
        for a in &votes {
            group[a.label] += 1;
        }
        for a in &votes {
            matrix.set(row_of[&a.annotator], j, group[a.label] as f64);
        }
        for a in &votes {
            group[a.label] = 0;
        }
    }
    GroupSizeMatrix { seq, annotators, matrix }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rank1 {
    pub sigma: f64,
    /// `u_1 sqrt(sigma)`.
    pub omega: Vec<f64>,
    /// `v_1 sqrt(sigma)`.
    pub mu: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 1000;

/// Leading singular triple by power iteration on `A^T A` from the all-ones
/// vector; stops when the unit iterate moves less than `1e-10`.
pub fn rank1_factorize(a: &Matrix) -> Result<Rank1> {
    if a.rows == 0 || a.cols == 0 || a.data.iter().all(|&x| x == 0.0) {
        return Err(Error::validation("cannot factorize a zero matrix"));
    }
    if a.data.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::validation("rank-1 factorization needs a finite nonnegative matrix"));
    }
    let mut v = vec![1.0 / (a.cols as f64).sqrt(); a.cols];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < POWER_MAX_ITER {
        iterations += 1;
        let mut next = a.tr_mul_vec(&a.mul_vec(&v));
        let n = norm(&next);
        if n == 0.0 {
            return Err(Error::numerical("power iteration collapsed to zero", format!("{a:?}")));
        }
        next.iter_mut().for_each(|x| *x /= n);
        let change = norm(&next.iter().zip(&v).map(|(x, y)| x - y).collect::<Vec<_>>());
        v = next;
        if change < POWER_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("power iteration hit {POWER_MAX_ITER} iterations without converging");
    }
    let av = a.mul_vec(&v);
    let sigma = norm(&av);
    let root = sigma.sqrt();
    // Nonnegative A keeps the iterates nonnegative; clear rounding residue.
    let omega = av.iter().map(|x| (x / sigma * root).max(0.0)).collect();
    let mu = v.iter().map(|x| (x * root).max(0.0)).collect();
    Ok(Rank1 { sigma, omega, mu, iterations, converged })
}

/// Candidate label with its score. A token's inferred truth that no reliable
/// annotator chose is appended with score 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredLabel {
    pub label: LabelId,
    pub score: f64,
}

/// Distinct observed labels scored by the mean `omega` of their supporters,
/// highest first (ties by smaller label id).
pub fn score_labels(votes: &[(usize, LabelId)], omega: &BTreeMap<usize, f64>) -> Vec<ScoredLabel> {
    let mut acc: BTreeMap<LabelId, (f64, usize)> = BTreeMap::new();
    for &(l, y) in votes {
        if let Some(&w) = omega.get(&l) {
            let e = acc.entry(y).or_insert((0.0, 0));
            e.0 += w;
            e.1 += 1;
        }
    }
    let mut scored: Vec<ScoredLabel> = acc
        .into_iter()
        .map(|(label, (sum, n))| ScoredLabel { label, score: sum / n as f64 })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.label.cmp(&b.label)));
    scored
}

/// Top two scored labels followed by `z_hat` if it is not among them.
pub fn candidate_list(scored: &[ScoredLabel], z_hat: LabelId) -> Vec<ScoredLabel> {
    let mut out: Vec<ScoredLabel> = scored.iter().take(2).copied().collect();
    if !out.iter().any(|s| s.label == z_hat) {
        let score = scored.iter().find(|s| s.label == z_hat).map_or(0.0, |s| s.score);
        out.push(ScoredLabel { label: z_hat, score });
    }
    out
}

/// Symmetric label-confusion matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelConfusion {
    n: usize,
    values: Vec<f64>,
    /// Labels never inferred as truth; their directed rates are 0.
    pub empty_rows: Vec<LabelId>,
}

impl LabelConfusion {
    pub fn zeros(n: usize) -> Self {
        LabelConfusion { n, values: vec![0.0; n * n], empty_rows: Vec::new() }
    }

    /// Wrap an existing matrix (e.g. read from disk). Must be square,
    /// symmetric and within `[0, 1]`; the diagonal is ignored and zeroed.
    pub fn from_values(n: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::validation(format!("confusion matrix needs {} entries", n * n)));
        }
        for i in 0..n {
            values[i * n + i] = 0.0;
            for j in 0..n {
                let v = values[i * n + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::validation(format!("confusion value {v} outside [0, 1]")));
                }
                if (v - values[j * n + i]).abs() > 1e-12 {
                    return Err(Error::validation(format!("confusion matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(LabelConfusion { n, values, empty_rows: Vec::new() })
    }

    pub fn n_labels(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: LabelId, j: LabelId) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `p(i, j)` is the fraction of tokens inferred as `i` whose candidate set
/// also holds `j`; `CF(i, j)` averages `p(i, j)` and `p(j, i)`.
pub fn build_cf(candidates: &[Vec<LabelId>], z_hat: &[LabelId], n_labels: usize) -> Result<LabelConfusion> {
    if candidates.len() != z_hat.len() {
        return Err(Error::validation("need one candidate set per token"));
    }
    let n = n_labels;
    let mut support = vec![0usize; n];
    let mut hits = vec![0usize; n * n];
    for (set, &t) in candidates.iter().zip(z_hat) {
        support[t] += 1;
        let distinct: HashSet<LabelId> = set.iter().copied().collect();
        for &j in distinct.iter().filter(|&&j| j != t) {
            hits[t * n + j] += 1;
        }
    }
    let p = |i: usize, j: usize| {
        if support[i] == 0 {
            0.0
        } else {
            hits[i * n + j] as f64 / support[i] as f64
        }
    };
    let mut cf = LabelConfusion::zeros(n);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            cf.values[i * n + j] = 0.5 * (p(i, j) + p(j, i));
        }
    }
    cf.empty_rows = (0..n).filter(|&i| support[i] == 0).collect();
    if !cf.empty_rows.is_empty() {
        log::warn!("labels {:?} never inferred as truth; their confusion rows are 0", cf.empty_rows);
    }
    Ok(cf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmbiguityConfig {
    /// Fraction of eligible tokens to flag.
    pub p: f64,
    /// Divide each sequence's `mu` by its maximum before ranking.
    pub normalize: bool,
}

impl Default for AmbiguityConfig {
    fn default() -> Self {
        AmbiguityConfig { p: 0.10, normalize: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFactors {
    pub seq: usize,
    pub annotators: Vec<usize>,
    pub omega: Vec<f64>,
    pub mu: Vec<f64>,
    pub normalized_mu: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityReport {
    pub factors: Vec<SequenceFactors>,
    /// Flat token indices that took part in the ranking.
    pub eligible: Vec<usize>,
    /// Flagged flat token indices, ascending.
    pub flagged: Vec<usize>,
    /// Candidate list per flagged token.
    pub candidates: BTreeMap<usize, Vec<ScoredLabel>>,
    pub cf: LabelConfusion,
}

impl AmbiguityReport {
    /// Candidate label set of every token: the flagged ones' lists, `{z_hat}` elsewhere.
    pub fn candidate_sets(&self, z_hat: &[LabelId]) -> Vec<Vec<LabelId>> {
        candidate_sets(&self.candidates, z_hat)
    }

    pub fn flagged_set(&self) -> HashSet<usize> {
        self.flagged.iter().copied().collect()
    }
}

pub fn candidate_sets(candidates: &BTreeMap<usize, Vec<ScoredLabel>>, z_hat: &[LabelId]) -> Vec<Vec<LabelId>> {
    z_hat
        .iter()
        .enumerate()
        .map(|(i, &z)| match candidates.get(&i) {
            Some(list) => list.iter().map(|s| s.label).collect(),
            None => vec![z],
        })
        .collect()
}

/// Bottom-`p` selection over `(token, score)` pairs: `floor(p * n)` tokens,
/// lowest score first, ties in token order. Scores are compared on a 1e-9
/// grid relative to the largest score so that round-off does not reorder
/// tokens whose factorizations are mathematically equal.
pub fn flag_ambiguous(scored: &[(usize, f64)], p: f64) -> Result<Vec<usize>> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("flag fraction must lie in (0, 1), got {p}")));
    }
    if scored.is_empty() {
        log::warn!("no eligible tokens; nothing flagged");
        return Ok(Vec::new());
    }
    let top = scored.iter().map(|s| s.1).fold(0.0, f64::max);
    let scale = if top > 0.0 { top } else { 1.0 };
    let mut keyed: Vec<(i64, usize)> = scored
        .iter()
        .map(|&(i, s)| ((s / scale * 1e9).round() as i64, i))
        .collect();
    keyed.sort_unstable();
    let k = (p * scored.len() as f64).floor() as usize;
    let mut flagged: Vec<usize> = keyed.into_iter().take(k).map(|(_, i)| i).collect();
    flagged.sort_unstable();
    Ok(flagged)
}

/// Run the full analysis for the annotators in `members`.
pub fn analyze(
    ann: &CrowdAnnotations,
    members: &[usize],
    z_hat: &[LabelId],
    config: &AmbiguityConfig,
) -> Result<AmbiguityReport> {
    if z_hat.len() != ann.n_tokens() {
        return Err(Error::validation("z_hat does not cover every token"));
    }
    let factors: Vec<Option<SequenceFactors>> = (0..ann.n_sequences())
        .into_par_iter()
        .map(|s| {
            let g = build_group_matrix(ann, members, s);
            if g.annotators.len() < 2 {
                log::warn!(
                    "sequence {s}: {} reliable annotator(s); skipped",
                    g.annotators.len()
                );
                return Ok(None);
            }
            let r = rank1_factorize(&g.matrix)?;
            let max = r.mu.iter().copied().fold(0.0, f64::max);
            let normalized_mu = r.mu.iter().map(|m| if max > 0.0 { m / max } else { 0.0 }).collect();
            Ok(Some(SequenceFactors {
                seq: s,
                annotators: g.annotators,
                omega: r.omega,
                mu: r.mu,
                normalized_mu,
                converged: r.converged,
            }))
        })
        .collect::<Result<_>>()?;
    let factors: Vec<SequenceFactors> = factors.into_iter().flatten().collect();

    let member: HashSet<usize> = members.iter().copied().collect();
    let mut eligible = Vec::new();
    let mut scored = Vec::new();
    for f in &factors {
        let start = ann.offsets()[f.seq];
        for j in 0..f.mu.len() {
            let i = start + j;
            if ann.token(i).iter().any(|a| member.contains(&a.annotator)) {
                eligible.push(i);
                scored.push((i, if config.normalize { f.normalized_mu[j] } else { f.mu[j] }));
            }
        }
    }
    let flagged = flag_ambiguous(&scored, config.p)?;

    let by_seq: BTreeMap<usize, &SequenceFactors> = factors.iter().map(|f| (f.seq, f)).collect();
    let mut candidates = BTreeMap::new();
    for &i in &flagged {
        let (s, _) = ann.seq_pos(i);
        let f = by_seq[&s];
        let omega: BTreeMap<usize, f64> = f.annotators.iter().copied().zip(f.omega.iter().copied()).collect();
        let votes: Vec<(usize, LabelId)> = ann.token(i).iter().map(|a| (a.annotator, a.label)).collect();
        candidates.insert(i, candidate_list(&score_labels(&votes, &omega), z_hat[i]));
    }
    let cf = build_cf(&candidate_sets(&candidates, z_hat), z_hat, ann.n_labels())?;
    Ok(AmbiguityReport { factors, eligible, flagged, candidates, cf })
}

fn write_text(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write `mu.tsv`, `flagged.tsv`, `candidates.tsv` and `cf.tsv` into `out_dir`.
pub fn write_report(out_dir: &Path, ann: &CrowdAnnotations, labels: &LabelSet, report: &AmbiguityReport) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut mu = String::new();
    for f in &report.factors {
        for j in 0..f.mu.len() {
            let _ = writeln!(mu, "{}\t{j}\t{}\t{}", f.seq, f.mu[j], f.normalized_mu[j]);
        }
    }
    write_text(&out_dir.join("mu.tsv"), mu)?;
    let mut flagged = String::new();
    for &i in &report.flagged {
        let (s, p) = ann.seq_pos(i);
        let _ = writeln!(flagged, "{s}\t{p}");
    }
    write_text(&out_dir.join("flagged.tsv"), flagged)?;
    let mut cands = String::new();
    for (&i, list) in &report.candidates {
        let (s, p) = ann.seq_pos(i);
        for c in list {
            let _ = writeln!(cands, "{s}\t{p}\t{}\t{}", labels.name(c.label), c.score);
        }
    }
    write_text(&out_dir.join("candidates.tsv"), cands)?;
    write_matrix(&out_dir.join("cf.tsv"), labels, report.cf.values())
}

fn token_at(path: &Path, line: usize, cols: &[&str], offsets: &[usize]) -> Result<usize> {
    let s: usize = cols[0].parse().map_err(|_| Error::parse(path, line, "bad sequence id"))?;
    let p: usize = cols[1].parse().map_err(|_| Error::parse(path, line, "bad position"))?;
    match offsets.get(s + 1) {
        Some(&end) if offsets[s] + p < end => Ok(offsets[s] + p),
        _ => Err(Error::validation(format!(
            "{}:{line}: token (seq {s}, position {p}) does not exist",
            path.display()
        ))),
    }
}

/// Read `flagged.tsv` into flat token indices.
pub fn read_flagged(path: &Path, offsets: &[usize]) -> Result<HashSet<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashSet::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(Error::parse(path, n + 1, "expected `seq \\t pos`"));
        }
        out.insert(token_at(path, n + 1, &cols, offsets)?);
    }
    Ok(out)
}

/// Read `candidates.tsv` into per-token candidate lists.
pub fn read_candidates(path: &Path, offsets: &[usize], labels: &LabelSet) -> Result<BTreeMap<usize, Vec<ScoredLabel>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<usize, Vec<ScoredLabel>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(path, n + 1, "expected `seq \\t pos \\t label \\t score`"));
        }
        let i = token_at(path, n + 1, &cols, offsets)?;
        let label = labels
            .index(cols[2])
            .ok_or_else(|| Error::validation(format!("{}:{}: unknown label {:?}", path.display(), n + 1, cols[2])))?;
        let score: f64 = cols[3].parse().map_err(|_| Error::parse(path, n + 1, "bad score"))?;
        out.entry(i).or_default().push(ScoredLabel { label, score });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Annotation;
    use proptest::prelude::*;

    fn crowd(seq_lengths: &[usize], n_labels: usize, n_ann: usize, rows: &[(usize, usize, usize)]) -> CrowdAnnotations {
        let entries = rows
            .iter()
            .map(|&(token, annotator, label)| Annotation { token, annotator, label })
            .collect();
        CrowdAnnotations::new(seq_lengths, n_labels, n_ann, entries).unwrap()
    }

    #[test]
    fn group_sizes() {
        // j=0: X X X, j=1: X X Y, j=2: X Y Z
        let rows = [
            (0, 0, 0), (0, 1, 0), (0, 2, 0),
            (1, 0, 0), (1, 1, 0), (1, 2, 1),
            (2, 0, 0), (2, 1, 1), (2, 2, 2),
        ];
        let g = build_group_matrix(&crowd(&[3], 3, 3, &rows), &[0, 1, 2], 0);
        assert_eq!(g.matrix.column(0), vec![3.0, 3.0, 3.0]);
        assert_eq!(g.matrix.column(1), vec![2.0, 2.0, 1.0]);
        assert_eq!(g.matrix.column(2), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn skipped_and_outside_annotators() {
        // annotator 2 skips j=1; annotator 3 is not a member.
        let rows = [(0, 0, 0), (0, 1, 0), (0, 2, 0), (0, 3, 0), (1, 0, 1), (1, 1, 1), (1, 3, 1)];
        let g = build_group_matrix(&crowd(&[2], 2, 4, &rows), &[0, 1, 2], 0);
        assert_eq!(g.annotators, vec![0, 1, 2]);
        assert_eq!(g.matrix.column(0), vec![3.0, 3.0, 3.0]);
        assert_eq!(g.matrix.column(1), vec![2.0, 2.0, 0.0]);
    }

    #[test]
    fn rank1_exact_example() {
        let a = Matrix::new(2, 3, vec![6.0, 0.0, 2.0, 3.0, 0.0, 1.0]).unwrap();
        let r = rank1_factorize(&a).unwrap();
        assert!(r.converged);
        for l in 0..2 {
            for j in 0..3 {
                assert!((r.omega[l] * r.mu[j] - a.get(l, j)).abs() < 1e-8);
            }
        }
        assert!((r.omega[0] - 2.3784).abs() < 1e-4 && (r.omega[1] - 1.1892).abs() < 1e-4);
        assert!((r.mu[0] - 2.5227).abs() < 1e-4 && r.mu[1] == 0.0 && (r.mu[2] - 0.8409).abs() < 1e-4);
    }

    #[test]
    fn rank1_all_ones() {
        let r = rank1_factorize(&Matrix::new(2, 2, vec![1.0; 4]).unwrap()).unwrap();
        assert!((r.sigma - 2.0).abs() < 1e-12);
        for x in r.omega.iter().chain(&r.mu) {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank1_rejects_zero() {
        assert!(rank1_factorize(&Matrix::zeros(2, 2)).is_err());
    }

    proptest! {
        #[test]
        fn scaling_a_scales_factors_by_root_k(
            data in proptest::collection::vec(0.0f64..5.0, 12),
            k in 0.1f64..10.0,
        ) {
            prop_assume!(data.iter().any(|&x| x > 0.1));
            let a = Matrix::new(3, 4, data.clone()).unwrap();
            let b = Matrix::new(3, 4, data.iter().map(|x| x * k).collect()).unwrap();
            let (ra, rb) = (rank1_factorize(&a).unwrap(), rank1_factorize(&b).unwrap());
            for (x, y) in ra.omega.iter().zip(&rb.omega).chain(ra.mu.iter().zip(&rb.mu)) {
                prop_assert!((x * k.sqrt() - y).abs() < 1e-6 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn cf_is_symmetric_with_unit_range(
            sets in proptest::collection::vec((0usize..4, proptest::collection::vec(0usize..4, 0..3)), 1..40)
        ) {
            let z: Vec<usize> = sets.iter().map(|s| s.0).collect();
            let c: Vec<Vec<usize>> = sets.iter().map(|s| { let mut v = s.1.clone(); v.push(s.0); v }).collect();
            let cf = build_cf(&c, &z, 4).unwrap();
            for i in 0..4 {
                prop_assert_eq!(cf.get(i, i), 0.0);
                for j in 0..4 {
                    prop_assert_eq!(cf.get(i, j), cf.get(j, i));
                    prop_assert!((0.0..=1.0).contains(&cf.get(i, j)));
                }
            }
        }
    }

    #[test]
    fn split_token_ranks_below_unanimous_ones() {
        // Three annotators, four tokens, token 2 split 2-vs-1.
        let mut rows = Vec::new();
        for j in 0..4 {
            for l in 0..3 {
                rows.push((j, l, if j == 2 && l == 2 { 1 } else { 0 }));
            }
        }
        let ann = crowd(&[4], 2, 3, &rows);
        let cfg = AmbiguityConfig { p: 0.25, normalize: true };
        let rep = analyze(&ann, &[0, 1, 2], &[0; 4], &cfg).unwrap();
        let mu = &rep.factors[0].normalized_mu;
        for j in [0, 1, 3] {
            assert!(mu[2] < mu[j]);
        }
        assert_eq!(rep.flagged, vec![2]);
    }

    #[test]
    fn unanimous_ties_break_by_position() {
        let rows: Vec<_> = (0..20).flat_map(|j| (0..3).map(move |l| (j, l, j % 2))).collect();
        let ann = crowd(&[7, 6, 7], 2, 3, &rows);
        let z: Vec<usize> = (0..20).map(|j| j % 2).collect();
        let rep = analyze(&ann, &[0, 1, 2], &z, &AmbiguityConfig { p: 0.1, normalize: true }).unwrap();
        for f in &rep.factors {
            assert!(f.normalized_mu.iter().all(|m| (m - 1.0).abs() < 1e-9));
        }
        assert_eq!(rep.flagged, vec![0, 1]);
        assert!(rep.cf.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flag_count_is_floor_of_fraction() {
        let scored: Vec<(usize, f64)> = (0..1000).map(|i| (i, ((i * 7919) % 1000) as f64)).collect();
        assert_eq!(flag_ambiguous(&scored, 0.10).unwrap().len(), 100);
        assert!(flag_ambiguous(&scored, 0.0).is_err());
        assert!(flag_ambiguous(&[], 0.1).unwrap().is_empty());
    }

    #[test]
    fn label_scores() {
        let omega: BTreeMap<usize, f64> = [(0, 0.9), (1, 0.5), (2, 0.8)].into_iter().collect();
        let s = score_labels(&[(0, 0), (1, 0), (2, 1)], &omega);
        assert_eq!(s[0].label, 1);
        assert!((s[0].score - 0.8).abs() < 1e-15);
        assert!((s[1].score - 0.7).abs() < 1e-15);

        let unanimous = score_labels(&[(0, 3), (1, 3)], &omega);
        let c = candidate_list(&unanimous, 5);
        assert_eq!(c.iter().map(|s| s.label).collect::<Vec<_>>(), vec![3, 5]);
        assert_eq!(c[1].score, 0.0);

        let single = score_labels(&[(2, 4)], &omega);
        assert_eq!(single, vec![ScoredLabel { label: 4, score: 0.8 }]);
    }

    #[test]
    fn cf_reference_values() {
        let (adj, noun) = (0, 1);
        let mut z = vec![adj; 10];
        z.extend(vec![noun; 20]);
        let mut c: Vec<Vec<usize>> = z.iter().map(|&t| vec![t]).collect();
        for set in c.iter_mut().take(3) {
            set.push(noun);
        }
        for set in c.iter_mut().skip(10).take(2) {
            set.push(adj);
        }
        let cf = build_cf(&c, &z, 3).unwrap();
        assert!((cf.get(adj, noun) - 0.2).abs() < 1e-15);
        assert_eq!(cf.empty_rows, vec![2]);
    }

    #[test]
    fn sequences_with_one_reliable_annotator_are_skipped() {
        let rows = [(0, 0, 0), (1, 0, 1), (1, 1, 1), (2, 0, 0), (2, 1, 1)];
        let ann = crowd(&[1, 2], 2, 2, &rows);
        let rep = analyze(&ann, &[0, 1], &[0, 1, 0], &AmbiguityConfig::default()).unwrap();
        assert_eq!(rep.factors.len(), 1);
        assert_eq!(rep.eligible, vec![1, 2]);
    }

    #[test]
    fn report_round_trip() {
        let rows: Vec<_> = (0..10)
            .flat_map(|j| (0..3).map(move |l| (j, l, if j == 4 && l == 0 { 1 } else { 0 })))
            .collect();
        let ann = crowd(&[5, 5], 2, 3, &rows);
        let labels = LabelSet::new(["A", "B"]).unwrap();
        let rep = analyze(&ann, &[0, 1, 2], &[0; 10], &AmbiguityConfig { p: 0.1, normalize: true }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &ann, &labels, &rep).unwrap();
        let flagged = read_flagged(&dir.path().join("flagged.tsv"), ann.offsets()).unwrap();
        assert_eq!(flagged, rep.flagged_set());
        let cands = read_candidates(&dir.path().join("candidates.tsv"), ann.offsets(), &labels).unwrap();
        assert_eq!(cands, rep.candidates);
    }
}
