//! Artifacts of an aggregation run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{AggregationResult, Diagnostics, Hyperparams, ModelScore, Schedule};
use crate::corpus::{write_labels, Corpus, CrowdAnnotations, LabelSet};
use crate::error::{Error, Result};
use crate::tsv::write_matrix;

#[derive(Serialize)]
struct Report<'a> {
    n_clusters: usize,
    reliable_cluster: usize,
    mean_diagonals: Vec<f64>,
    cluster_sizes: Vec<usize>,
    seed: u64,
    schedule: &'a Schedule,
    hyperparams: &'a Hyperparams,
    model_selection: Option<&'a [ModelScore]>,
    diagnostics: &'a Diagnostics,
}

/// Write `zhat.tsv`, `clusters.tsv`, `annotators.tsv`, one `M_<c>.tsv` per
/// cluster and `diagnostics.json` into `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn write_aggregation(
    out_dir: &Path,
    corpus: &Corpus,
    labels: &LabelSet,
    ann: &CrowdAnnotations,
    res: &AggregationResult,
    hyper: &Hyperparams,
    schedule: &Schedule,
    seed: u64,
    selection: Option<&[ModelScore]>,
) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_labels(corpus, &res.z_hat, labels, &out_dir.join("zhat.tsv"))?;
    let names = ann.annotator_names();
    let mut clusters = String::new();
    let mut mapping = String::new();
    for (l, &c) in res.c_hat.iter().enumerate() {
        let _ = writeln!(clusters, "{}\t{c}", names[l]);
        let _ = writeln!(mapping, "{l}\t{}", names[l]);
    }
    let path = out_dir.join("clusters.tsv");
    fs::write(&path, clusters).map_err(|e| Error::io(&path, e))?;
    let path = out_dir.join("annotators.tsv");
    fs::write(&path, mapping).map_err(|e| Error::io(&path, e))?;
    for (c, m) in res.shared.iter().enumerate() {
        write_matrix(&out_dir.join(format!("M_{c}.tsv")), labels, m.values())?;
    }
    let report = Report {
        n_clusters: res.n_clusters,
        reliable_cluster: res.reliable_cluster,
        mean_diagonals: res.shared.iter().map(|m| m.mean_diagonal()).collect(),
        cluster_sizes: (0..res.n_clusters).map(|c| res.members(c).len()).collect(),
        seed,
        schedule,
        hyperparams: hyper,
        model_selection: selection,
        diagnostics: &res.diagnostics,
    };
    let path = out_dir.join("diagnostics.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// Read `clusters.tsv` (`annotator_id \t cluster`) against the annotator names.
pub fn read_clusters(path: &Path, ann: &CrowdAnnotations) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = vec![None; ann.n_annotators()];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, cluster) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `annotator_id \\t cluster`"))?;
        let l = ann
            .annotator_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::parse(path, i + 1, format!("unknown annotator {name:?}")))?;
        let c: usize = cluster
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad cluster {cluster:?}")))?;
        out[l] = Some(c);
    }
    out.into_iter()
        .enumerate()
        .map(|(l, c)| c.ok_or_else(|| Error::validation(format!("annotator {l} has no cluster in {}", path.display()))))
        .collect()
}
