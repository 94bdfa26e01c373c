//! Synthetic crowds with controlled per-annotator precision.
//!
//! Annotator `l` is drawn from its own ChaCha stream (`seed`, stream `l`), so
//! the output does not depend on the order annotators are generated in.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Annotation, Corpus, CrowdAnnotations, LabelId};
use crate::error::{Error, Result};

/// Groups of annotators sharing a precision range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimPlan {
    pub group_sizes: Vec<usize>,
    /// `(lo, hi)` with `0 <= lo <= hi <= 1`.
    pub precision_ranges: Vec<(f64, f64)>,
    pub seed: u64,
}

impl SimPlan {
    pub fn new(group_sizes: Vec<usize>, precision_ranges: Vec<(f64, f64)>, seed: u64) -> Result<Self> {
        if group_sizes.is_empty() || group_sizes.len() != precision_ranges.len() {
            return Err(Error::Config(
                "need one precision range per annotator group".into(),
            ));
        }
        if group_sizes.contains(&0) {
            return Err(Error::Config("group sizes must be positive".into()));
        }
        let precision_ranges = precision_ranges
            .into_iter()
            .map(|(a, b)| {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
                    return Err(Error::Config(format!("precision range ({a}, {b}) outside [0, 1]")));
                }
                Ok((lo, hi))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimPlan {
            group_sizes,
            precision_ranges,
            seed,
        })
    }

    /// The plan used throughout the experiments: `groups` over the high,
    /// medium and low precision bands.
    pub fn three_band(groups: [usize; 3], seed: u64) -> Self {
        SimPlan::new(groups.to_vec(), vec![(0.7, 0.9), (0.4, 0.7), (0.1, 0.4)], seed)
            .expect("static plan is valid")
    }

    pub fn n_annotators(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    /// Group index of every annotator, in id order.
    pub fn group_of(&self) -> Vec<usize> {
        self.group_sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
            .collect()
    }
}

/// Parse `8,4,3`.
pub fn parse_groups(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad group size {s:?}")))
        })
        .collect()
}

/// Parse `0.9:0.7,0.7:0.4`; either bound order is accepted.
pub fn parse_ranges(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(|r| {
            let (a, b) = r
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad precision range {r:?}")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad precision {s:?}")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub annotations: CrowdAnnotations,
    /// Drawn precision of each annotator.
    pub precisions: Vec<f64>,
    /// Plan group of each annotator.
    pub groups: Vec<usize>,
}

pub(crate) fn annotator_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Every annotator labels every token: the first gold label with probability
/// equal to its precision, otherwise a uniformly drawn non-gold label.
pub fn simulate(corpus: &Corpus, n_labels: usize, plan: &SimPlan) -> Result<Simulation> {
    if n_labels < 2 {
        return Err(Error::validation("simulation needs at least two labels"));
    }
    let gold = corpus
        .gold_column(0)
        .ok_or_else(|| Error::validation("simulation needs a gold label on every token"))?;
    simulate_labels(&gold, &corpus.seq_lengths(), n_labels, plan)
}

/// Like [`simulate`] but from a bare flat gold vector.
pub fn simulate_labels(
    gold: &[LabelId],
    seq_lengths: &[usize],
    n_labels: usize,
    plan: &SimPlan,
) -> Result<Simulation> {
    if n_labels < 2 {
        return Err(Error::validation("simulation needs at least two labels"));
    }
    let groups = plan.group_of();
    let per_annotator: Vec<(f64, Vec<Annotation>)> = groups
        .par_iter()
        .enumerate()
        .map(|(l, &g)| {
            let mut rng = annotator_rng(plan.seed, l as u64);
            let (lo, hi) = plan.precision_ranges[g];
            let precision = if hi > lo { lo + (hi - lo) * rng.random::<f64>() } else { lo };
            let entries = gold
                .iter()
                .enumerate()
                .map(|(token, &truth)| {
                    let label = if rng.random::<f64>() < precision {
                        truth
                    } else {
                        let k = rng.random_range(0..n_labels - 1);
                        if k >= truth {
                            k + 1
                        } else {
                            k
                        }
                    };
                    Annotation {
                        token,
                        annotator: l,
                        label,
                    }
                })
                .collect();
            (precision, entries)
        })
        .collect();

    let mut precisions = Vec::with_capacity(groups.len());
    let mut entries = Vec::with_capacity(groups.len() * gold.len());
    for (p, e) in per_annotator {
        precisions.push(p);
        entries.extend(e);
    }
    let annotations = CrowdAnnotations::new(seq_lengths, n_labels, groups.len(), entries)?;
    Ok(Simulation {
        annotations,
        precisions,
        groups,
    })
}

pub fn write_precisions(sim: &Simulation, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (l, p) in sim.precisions.iter().enumerate() {
        let _ = writeln!(out, "{l}\t{p}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
