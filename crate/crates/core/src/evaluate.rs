//! Scoring: token accuracy, chunk F1, ambiguity identification rates,
//! label-confusion comparison, and the per-token majority-vote baseline.

use std::collections::HashSet;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::ambiguity::build_cf;
use crate::corpus::{CrowdAnnotations, LabelId, LabelSet};
use crate::error::{Error, Result};

/// Per-token plurality label; ties go to the smallest label id.
pub fn mv_token(ann: &CrowdAnnotations) -> Vec<LabelId> {
    let mut votes = vec![0u32; ann.n_labels()];
    (0..ann.n_tokens())
        .map(|i| {
            votes.iter_mut().for_each(|v| *v = 0);
            for a in ann.token(i) {
                votes[a.label] += 1;
            }
            let mut best = 0;
            for (t, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = t;
                }
            }
            best
        })
        .collect()
}

fn check_aligned(pred: &[LabelId], gold: &[LabelId]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::validation(format!(
            "prediction has {} tokens, gold has {}",
            pred.len(),
            gold.len()
        )));
    }
    Ok(())
}

pub fn token_accuracy(pred: &[LabelId], gold: &[LabelId]) -> Result<f64> {
    check_aligned(pred, gold)?;
    if gold.is_empty() {
        return Err(Error::validation("accuracy of an empty sequence is undefined"));
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanScheme {
    /// `B-X` / `I-X` / `O` chunks.
    Bio,
    /// Every token is its own span.
    Token,
}

impl SpanScheme {
    pub fn detect(labels: &LabelSet) -> SpanScheme {
        if labels
            .names()
            .iter()
            .any(|n| n.starts_with("B-") || n.starts_with("I-"))
        {
            SpanScheme::Bio
        } else {
            SpanScheme::Token
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(correct: usize, predicted: usize, gold: usize) -> Prf {
        let precision = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

/// `(start, end, type)` spans, `end` exclusive, within one sequence.
fn chunks(labels: &[LabelId], names: &LabelSet, scheme: SpanScheme, base: usize) -> Vec<(usize, usize, String)> {
    if scheme == SpanScheme::Token {
        return labels
            .iter()
            .enumerate()
            .map(|(k, &l)| (base + k, base + k + 1, names.name(l).to_string()))
            .collect();
    }
    let mut out = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (k, &l) in labels.iter().enumerate() {
        let name = names.name(l);
        let (tag, kind) = match name.split_once('-') {
            Some((p @ ("B" | "I"), rest)) => (p, rest),
            _ if name == "O" => ("O", ""),
            _ => ("B", name),
        };
        let continues = tag == "I" && open.as_ref().is_some_and(|(_, t)| t == kind);
        if !continues {
            if let Some((start, t)) = open.take() {
                out.push((base + start, base + k, t));
            }
            if tag != "O" {
                open = Some((k, kind.to_string()));
            }
        }
    }
    if let Some((start, t)) = open {
        out.push((base + start, base + labels.len(), t));
    }
    out
}

/// Exact-match span precision/recall/F1. `offsets` are sequence boundaries
/// (flat indices, with a trailing total) so that spans never cross sequences.
pub fn span_f1(
    pred: &[LabelId],
    gold: &[LabelId],
    labels: &LabelSet,
    offsets: &[usize],
    scheme: SpanScheme,
) -> Result<Prf> {
    check_aligned(pred, gold)?;
    if offsets.last().copied() != Some(gold.len()) {
        return Err(Error::validation("sequence offsets do not cover the labels"));
    }
    let mut p_spans = HashSet::new();
    let mut g_spans = HashSet::new();
    for w in offsets.windows(2) {
        p_spans.extend(chunks(&pred[w[0]..w[1]], labels, scheme, w[0]));
        g_spans.extend(chunks(&gold[w[0]..w[1]], labels, scheme, w[0]));
    }
    let correct = p_spans.intersection(&g_spans).count();
    Ok(Prf::from_counts(correct, p_spans.len(), g_spans.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmbiguityAccuracy {
    pub acc1: f64,
    pub acc2: f64,
    pub n_gold_ambiguous: usize,
    pub n_identified: usize,
    pub n_double_annotated: usize,
}

/// Identification rates against doubly-gold data. A token is gold-ambiguous
/// when its two gold labels differ; it is correctly double-annotated when it
/// is flagged and its candidate set contains both gold labels.
pub fn ambiguity_accuracy(
    flagged: &HashSet<usize>,
    candidates: &[Vec<LabelId>],
    gold1: &[LabelId],
    gold2: &[LabelId],
) -> Result<AmbiguityAccuracy> {
    check_aligned(gold1, gold2)?;
    check_aligned(candidates.iter().map(|_| 0).collect::<Vec<_>>().as_slice(), gold1)?;
    let ambiguous: Vec<usize> = (0..gold1.len()).filter(|&i| gold1[i] != gold2[i]).collect();
    if ambiguous.is_empty() {
        return Err(Error::validation("no gold-ambiguous tokens; identification accuracy is undefined"));
    }
    let identified = ambiguous.iter().filter(|i| flagged.contains(i)).count();
    let double = ambiguous
        .iter()
        .filter(|&&i| {
            flagged.contains(&i) && candidates[i].contains(&gold1[i]) && candidates[i].contains(&gold2[i])
        })
        .count();
    let n = ambiguous.len() as f64;
    Ok(AmbiguityAccuracy {
        acc1: identified as f64 / n,
        acc2: double as f64 / n,
        n_gold_ambiguous: ambiguous.len(),
        n_identified: identified,
        n_double_annotated: double,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusedPair {
    pub a: String,
    pub b: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CfComparison {
    /// Mean absolute difference over off-diagonal entries.
    pub distance: f64,
    pub top_a: Vec<ConfusedPair>,
    pub top_b: Vec<ConfusedPair>,
}

/// Unordered label pairs by descending confusion (`(m_ij + m_ji) / 2`); ties by index.
pub fn top_pairs(m: &[f64], labels: &LabelSet, k: usize) -> Vec<ConfusedPair> {
    let n = labels.len();
    let mut pairs: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, 0.5 * (m[i * n + j] + m[j * n + i])))
        .collect();
    pairs.sort_by(|x, y| y.2.total_cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    pairs
        .into_iter()
        .take(k)
        .map(|(i, j, value)| ConfusedPair {
            a: labels.name(i).to_string(),
            b: labels.name(j).to_string(),
            value,
        })
        .collect()
}

pub fn cf_compare(a: &[f64], b: &[f64], labels: &LabelSet, top_k: usize) -> Result<CfComparison> {
    let n = labels.len();
    if a.len() != n * n || b.len() != n * n {
        return Err(Error::validation("confusion matrices do not match the label set"));
    }
    if n < 2 {
        return Err(Error::validation("need at least two labels"));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            total += (a[i * n + j] - b[i * n + j]).abs();
        }
    }
    Ok(CfComparison {
        distance: total / (n * n - n) as f64,
        top_a: top_pairs(a, labels, top_k),
        top_b: top_pairs(b, labels, top_k),
    })
}

/// Inputs of a full evaluation report. Everything past `scheme` is optional.
#[derive(Debug, Clone, Copy)]
pub struct ReportInputs<'a> {
    pub pred: &'a [LabelId],
    pub gold: &'a [LabelId],
    pub labels: &'a LabelSet,
    pub offsets: &'a [usize],
    pub scheme: SpanScheme,
    pub gold2: Option<&'a [LabelId]>,
    /// Flagged tokens and the candidate set of every token.
    pub ambiguity: Option<(&'a HashSet<usize>, &'a [Vec<LabelId>])>,
    /// Derived label-confusion matrix to compare with the one implied by
    /// the two gold columns.
    pub cf: Option<&'a [f64]>,
    pub top_k: usize,
}

/// Flat JSON object of named scalars plus confused-pair listings.
pub fn report(inp: &ReportInputs) -> Result<Map<String, Value>> {
    let mut out = Map::new();
    out.insert("n_tokens".into(), json!(inp.gold.len()));
    out.insert("token_accuracy".into(), json!(token_accuracy(inp.pred, inp.gold)?));
    let prf = span_f1(inp.pred, inp.gold, inp.labels, inp.offsets, inp.scheme)?;
    out.insert("span_scheme".into(), json!(inp.scheme));
    out.insert("span_precision".into(), json!(prf.precision));
    out.insert("span_recall".into(), json!(prf.recall));
    out.insert("span_f1".into(), json!(prf.f1));
    let Some(gold2) = inp.gold2 else {
        if inp.ambiguity.is_some() || inp.cf.is_some() {
            return Err(Error::validation("ambiguity metrics need a second gold column"));
        }
        return Ok(out);
    };
    out.insert("gold2_token_accuracy".into(), json!(token_accuracy(inp.pred, gold2)?));
    if let Some((flagged, candidates)) = inp.ambiguity {
        let acc = ambiguity_accuracy(flagged, candidates, inp.gold, gold2)?;
        out.insert("acc1".into(), json!(acc.acc1));
        out.insert("acc2".into(), json!(acc.acc2));
        out.insert("acc2_semantics".into(), json!("superset"));
        out.insert("n_gold_ambiguous".into(), json!(acc.n_gold_ambiguous));
        out.insert("n_identified".into(), json!(acc.n_identified));
        out.insert("n_double_annotated".into(), json!(acc.n_double_annotated));
    }
    if let Some(cf) = inp.cf {
        let sets: Vec<Vec<LabelId>> = inp.gold.iter().zip(gold2).map(|(&a, &b)| vec![a, b]).collect();
        let gold_cf = build_cf(&sets, inp.gold, inp.labels.len())?;
        let cmp = cf_compare(cf, gold_cf.values(), inp.labels, inp.top_k)?;
        out.insert("matrix_distance".into(), json!(cmp.distance));
        out.insert("top_pairs_derived".into(), json!(cmp.top_a));
        out.insert("top_pairs_gold".into(), json!(cmp.top_b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Annotation;
    use proptest::prelude::*;

    fn votes(labels: &[usize], n_labels: usize) -> CrowdAnnotations {
        let entries = labels
            .iter()
            .enumerate()
            .map(|(l, &label)| Annotation { token: 0, annotator: l, label })
            .collect();
        CrowdAnnotations::new(&[1], n_labels, labels.len(), entries).unwrap()
    }

    #[test]
    fn majority_and_ties() {
        assert_eq!(mv_token(&votes(&[0, 0, 1], 2)), vec![0]);
        assert_eq!(mv_token(&votes(&[1, 0], 2)), vec![0]);
        assert_eq!(mv_token(&votes(&[2, 1, 2, 1], 3)), vec![1]);
    }

    proptest! {
        #[test]
        fn majority_is_permutation_invariant(
            labels in proptest::collection::vec(0usize..4, 1..9),
            seed in any::<u64>(),
        ) {
            let mut shuffled = labels.clone();
            let n = shuffled.len();
            for k in (1..n).rev() {
                shuffled.swap(k, (seed as usize).wrapping_mul(k + 7) % (k + 1));
            }
            prop_assert_eq!(mv_token(&votes(&labels, 4)), mv_token(&votes(&shuffled, 4)));
        }

        #[test]
        fn span_f1_equals_token_f1_for_unit_spans(
            pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..30)
        ) {
            let labels = LabelSet::new(["A", "B", "C"]).unwrap();
            let (pred, gold): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let prf = span_f1(&pred, &gold, &labels, &[0, gold.len()], SpanScheme::Token).unwrap();
            let acc = token_accuracy(&pred, &gold).unwrap();
            prop_assert!((prf.f1 - acc).abs() < 1e-12);
            prop_assert!((prf.f1 - 2.0 * prf.precision * prf.recall / (prf.precision + prf.recall).max(1e-300)).abs() < 1e-12 || prf.f1 == 0.0);
        }
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(token_accuracy(&[0, 1], &[0, 1]).unwrap(), 1.0);
        assert_eq!(token_accuracy(&[0, 0], &[0, 1]).unwrap(), 0.5);
        assert!(token_accuracy(&[0], &[0, 1]).is_err());
    }

    fn ner() -> LabelSet {
        LabelSet::new(["O", "B-PER", "I-PER", "B-LOC", "I-LOC"]).unwrap()
    }

    #[test]
    fn perfect_spans() {
        let l = ner();
        let g = vec![1, 2, 0, 3];
        let prf = span_f1(&g, &g, &l, &[0, 4], SpanScheme::detect(&l)).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_predicted_spans() {
        let l = ner();
        let prf = span_f1(&[0, 0, 0, 0], &[1, 2, 0, 3], &l, &[0, 4], SpanScheme::Bio).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn half_of_gold_spans_matched() {
        let l = ner();
        // gold: PER[0,2) LOC[3,4); pred: PER[0,2) only, LOC truncated wrong type
        let prf = span_f1(&[1, 2, 0, 0], &[1, 2, 0, 3], &l, &[0, 4], SpanScheme::Bio).unwrap();
        assert_eq!(prf.recall, 0.5);
        assert_eq!(prf.precision, 1.0);
    }

    #[test]
    fn spans_do_not_cross_sequences() {
        let l = ner();
        // B-PER | I-PER across a boundary is two spans.
        let prf = span_f1(&[1, 2], &[1, 1], &l, &[0, 1, 2], SpanScheme::Bio).unwrap();
        assert_eq!(prf.f1, 1.0);
    }

    #[test]
    fn scheme_detection() {
        assert_eq!(SpanScheme::detect(&ner()), SpanScheme::Bio);
        assert_eq!(SpanScheme::detect(&LabelSet::new(["NOUN", "VERB"]).unwrap()), SpanScheme::Token);
    }

    #[test]
    fn ambiguity_perfect_identification() {
        let g1 = vec![0, 1, 2, 0];
        let g2 = vec![1, 1, 0, 0];
        let flagged: HashSet<usize> = [0, 2].into_iter().collect();
        let cands = vec![vec![0, 1], vec![1], vec![2, 0], vec![0]];
        let r = ambiguity_accuracy(&flagged, &cands, &g1, &g2).unwrap();
        assert_eq!((r.acc1, r.acc2), (1.0, 1.0));
    }

    #[test]
    fn ambiguity_counts_reproduce_reported_rates() {
        // 931 ambiguous tokens, 725 flagged, 614 of those with both labels.
        let n = 931;
        let g1 = vec![0; n];
        let g2 = vec![1; n];
        let flagged: HashSet<usize> = (0..725).collect();
        let cands: Vec<Vec<usize>> = (0..n).map(|i| if i < 614 { vec![0, 1] } else { vec![0] }).collect();
        let r = ambiguity_accuracy(&flagged, &cands, &g1, &g2).unwrap();
        assert!((r.acc1 - 0.779).abs() < 5e-4);
        assert!((r.acc2 - 0.660).abs() < 5e-4);
        assert!(r.acc2 <= r.acc1);
    }

    #[test]
    fn ambiguity_undefined_without_ambiguous_tokens() {
        assert!(ambiguity_accuracy(&HashSet::new(), &[vec![0]], &[0], &[0]).is_err());
    }

    #[test]
    fn cf_distance_cases() {
        let l = LabelSet::new(["A", "B", "C"]).unwrap();
        let zero = vec![0.0; 9];
        assert_eq!(cf_compare(&zero, &zero, &l, 3).unwrap().distance, 0.0);
        let mut b = zero.clone();
        b[1] = 0.2;
        b[3] = 0.2;
        let cmp = cf_compare(&zero, &b, &l, 1).unwrap();
        assert!((cmp.distance - 0.4 / 6.0).abs() < 1e-15);
        assert_eq!((cmp.top_b[0].a.as_str(), cmp.top_b[0].b.as_str()), ("A", "B"));
        assert!(cf_compare(&zero, &[0.0; 4], &l, 1).is_err());
    }

    #[test]
    fn report_fields() {
        let l = LabelSet::new(["ADJ", "NOUN", "VERB"]).unwrap();
        let gold = vec![0, 1, 2, 1];
        let gold2 = vec![1, 1, 2, 1];
        let flagged: HashSet<usize> = [0].into_iter().collect();
        let cands = vec![vec![0, 1], vec![1], vec![2], vec![1]];
        let mut cf = vec![0.0; 9];
        cf[1] = 0.5;
        cf[3] = 0.5;
        let r = report(&ReportInputs {
            pred: &gold,
            gold: &gold,
            labels: &l,
            offsets: &[0, 4],
            scheme: SpanScheme::Token,
            gold2: Some(&gold2),
            ambiguity: Some((&flagged, &cands)),
            cf: Some(&cf),
            top_k: 2,
        })
        .unwrap();
        assert_eq!(r["token_accuracy"], json!(1.0));
        assert_eq!(r["acc1"], json!(1.0));
        assert_eq!(r["acc2"], json!(1.0));
        assert_eq!(r["top_pairs_derived"][0]["a"], json!("ADJ"));
        assert_eq!(r["top_pairs_gold"][0]["b"], json!("NOUN"));
        assert!(r["matrix_distance"].as_f64().unwrap() >= 0.0);
    }
}
