//! End-to-end runs: simulate -> aggregate -> ambiguity -> train -> predict ->
//! evaluate, driven by a flat `key = value` config file.
//!
//! Every stage writes into its own subdirectory of the run directory. A stage
//! is keyed by the SHA-256 of its parameters and the digests of its input
//! files; when the key and the recorded output digests still match, the
//! stage is skipped. `manifest.json` lists every stage's key, inputs and
//! outputs and contains nothing run-specific, so identical configs give
//! identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::aggregator::io::{read_clusters, write_aggregation};
use crate::aggregator::{run_chain, select_model, Hyperparams, MhMode, Schedule};
use crate::ambiguity::{self, AmbiguityConfig, LabelConfusion};
use crate::corpus::{load_corpus, load_crowd, load_labels, write_crowd, write_labels, Corpus, LabelSet};
use crate::crowdsim::{parse_groups, parse_ranges, simulate, write_precisions, SimPlan};
use crate::error::{Error, Result};
use crate::evaluate::{self, mv_token, token_accuracy, ReportInputs, SpanScheme};
use crate::labeler::{self, CrfModel, TrainConfig, TrainMode};
use crate::tsv::read_matrix;

pub const STAGES: [&str; 6] = ["simulate", "aggregate", "ambiguity", "train", "predict", "evaluate"];

/// Cluster counts to try.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterSpec {
    Fixed(usize),
    Range(usize, usize),
}

impl ClusterSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad cluster spec {text:?} (expected N or LO:HI)"));
        match text.split_once(':') {
            Some((a, b)) => {
                let (lo, hi): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if lo == 0 || hi < lo {
                    return Err(bad());
                }
                Ok(ClusterSpec::Range(lo, hi))
            }
            None => {
                let n: usize = text.trim().parse().map_err(|_| bad())?;
                if n == 0 {
                    return Err(bad());
                }
                Ok(ClusterSpec::Fixed(n))
            }
        }
    }

    pub fn candidates(&self) -> Vec<usize> {
        match *self {
            ClusterSpec::Fixed(n) => vec![n],
            ClusterSpec::Range(lo, hi) => (lo..=hi).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub test_corpus: Option<PathBuf>,
    /// Use these crowd labels instead of simulating.
    pub crowd: Option<PathBuf>,
    pub groups: Vec<usize>,
    pub ranges: Vec<(f64, f64)>,
    pub clusters: ClusterSpec,
    pub lambda: f64,
    pub alpha_diag: f64,
    pub alpha_off: f64,
    pub eps_nu: f64,
    pub eps_gamma: f64,
    pub schedule: Schedule,
    pub ambiguity: AmbiguityConfig,
    pub mode: TrainMode,
    pub l2: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Canonical `key=value` pairs as parsed (paths as written).
    entries: BTreeMap<String, String>,
}

const KEYS: [&str; 23] = [
    "corpus", "test_corpus", "crowd", "groups", "ranges", "clusters", "lambda", "alpha_diag", "alpha_off",
    "eps_nu", "eps_gamma", "burn_in", "samples", "thin", "mh_steps", "mh_mode", "p", "normalize", "mode", "l2",
    "max_epochs", "seed", "out_dir",
];

fn defaults() -> BTreeMap<String, String> {
    [
        ("groups", "8,4,3"),
        ("ranges", "0.9:0.7,0.7:0.4,0.4:0.1"),
        ("clusters", "2:5"),
        ("lambda", "2"),
        ("alpha_diag", "0.7"),
        ("alpha_off", "0.3"),
        ("eps_nu", "1"),
        ("eps_gamma", "1"),
        ("burn_in", "200"),
        ("samples", "300"),
        ("thin", "2"),
        ("mh_steps", "20"),
        ("mh_mode", "faithful"),
        ("p", "0.10"),
        ("normalize", "true"),
        ("mode", "cost"),
        ("l2", "1.0"),
        ("max_epochs", "200"),
        ("out_dir", "run"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn parse_num<T: std::str::FromStr>(entries: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = &entries[key];
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    /// Parse config text; relative paths resolve against `base_dir`.
    /// `overrides` are applied on top, in order.
    pub fn parse(text: &str, base_dir: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let mut entries = defaults();
        let mut set = |k: &str, v: &str, line: Option<usize>| -> Result<()> {
            if !KEYS.contains(&k) {
                let at = line.map(|n| format!(" (line {n})")).unwrap_or_default();
                return Err(Error::Config(format!("unknown config key {k:?}{at}")));
            }
            entries.insert(k.to_string(), v.to_string());
            Ok(())
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            set(k.trim(), v.trim(), Some(i + 1))?;
        }
        for (k, v) in overrides {
            set(k, v, None)?;
        }
        RunConfig::from_entries(entries, base_dir)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base, overrides)
    }

    fn from_entries(entries: BTreeMap<String, String>, base: &Path) -> Result<Self> {
        let path = |k: &str| entries.get(k).map(|v| base.join(v));
        let corpus = path("corpus").ok_or_else(|| Error::Config("config needs `corpus`".into()))?;
        if !entries.contains_key("seed") {
            return Err(Error::Config("config needs `seed`".into()));
        }
        let normalize = match entries["normalize"].as_str() {
            "true" | "yes" | "1" => true,
            "false" | "no" | "0" => false,
            v => return Err(Error::Config(format!("normalize: expected true or false, got {v:?}"))),
        };
        let mh_mode = match entries["mh_mode"].as_str() {
            "faithful" => MhMode::Faithful,
            "corrected" => MhMode::Corrected,
            v => return Err(Error::Config(format!("mh_mode: expected faithful or corrected, got {v:?}"))),
        };
        let cfg = RunConfig {
            corpus,
            test_corpus: path("test_corpus"),
            crowd: path("crowd"),
            groups: parse_groups(&entries["groups"])?,
            ranges: parse_ranges(&entries["ranges"])?,
            clusters: ClusterSpec::parse(&entries["clusters"])?,
            lambda: parse_num(&entries, "lambda")?,
            alpha_diag: parse_num(&entries, "alpha_diag")?,
            alpha_off: parse_num(&entries, "alpha_off")?,
            eps_nu: parse_num(&entries, "eps_nu")?,
            eps_gamma: parse_num(&entries, "eps_gamma")?,
            schedule: Schedule {
                burn_in: parse_num(&entries, "burn_in")?,
                n_samples: parse_num(&entries, "samples")?,
                thin: parse_num(&entries, "thin")?,
                mh_steps: parse_num(&entries, "mh_steps")?,
                mh_mode,
            },
            ambiguity: AmbiguityConfig { p: parse_num(&entries, "p")?, normalize },
            mode: entries["mode"].parse()?,
            l2: parse_num(&entries, "l2")?,
            max_epochs: parse_num(&entries, "max_epochs")?,
            seed: parse_num(&entries, "seed")?,
            out_dir: base.join(&entries["out_dir"]),
            entries,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [Some(&self.corpus), self.test_corpus.as_ref(), self.crowd.as_ref()].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        if self.crowd.is_none() {
            SimPlan::new(self.groups.clone(), self.ranges.clone(), self.seed)?;
        }
        if !(self.ambiguity.p > 0.0 && self.ambiguity.p < 1.0) {
            return Err(Error::Config("p must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Canonical text of every setting except the output location.
    pub fn canonical(&self) -> String {
        self.entries
            .iter()
            .filter(|(k, _)| k.as_str() != "out_dir")
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn hyperparams(&self, n_labels: usize) -> Hyperparams {
        let mut h = Hyperparams::new(1, n_labels);
        h.set_lambda(self.lambda);
        h.set_alpha(self.alpha_diag, self.alpha_off);
        h.eps_nu = self.eps_nu;
        h.eps_gamma = self.eps_gamma;
        h
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Digests of the regular, non-hidden files directly inside `dir`.
fn dir_digests(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || !entry.path().is_file() {
            continue;
        }
        out.insert(name, file_digest(&entry.path())?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub run_dir: PathBuf,
    /// `(stage, served from cache)` in execution order.
    pub stages: Vec<(String, bool)>,
    pub manifest: Manifest,
}

struct Runner {
    root: PathBuf,
    records: Vec<StageRecord>,
    outcomes: Vec<(String, bool)>,
}

impl Runner {
    fn stage_dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Run `body` unless a matching cached result exists.
    fn stage(
        &mut self,
        name: &'static str,
        params: String,
        inputs: BTreeMap<String, String>,
        body: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<()> {
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        h.update(b"\n");
        h.update(params.as_bytes());
        for (role, d) in &inputs {
            h.update(format!("\n{role}={d}").as_bytes());
        }
        let key = hex::encode(h.finalize());
        let dir = self.stage_dir(name);
        let record_path = self.root.join(".cache").join(format!("{name}.json"));

        let cached: Option<StageRecord> = fs::read_to_string(&record_path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .filter(|r: &StageRecord| r.key == key)
            .filter(|r| dir.is_dir() && dir_digests(&dir).map(|d| d == r.outputs).unwrap_or(false));
        if let Some(rec) = cached {
            log::info!("{name}: cached");
            self.records.push(rec);
            self.outcomes.push((name.to_string(), true));
            return Ok(());
        }

        log::info!("{name}: running");
        let wrap = |e: Error| Error::Stage { stage: name, source: Box::new(e) };
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| wrap(Error::io(&dir, e)))?;
        }
        fs::create_dir_all(&dir).map_err(|e| wrap(Error::io(&dir, e)))?;
        body(&dir).map_err(wrap)?;
        let outputs = dir_digests(&dir).map_err(wrap)?;
        let rec = StageRecord { name: name.to_string(), key, inputs, outputs };
        let cache_dir = self.root.join(".cache");
        fs::create_dir_all(&cache_dir).map_err(|e| wrap(Error::io(&cache_dir, e)))?;
        let text = serde_json::to_string_pretty(&rec).expect("record serializes");
        fs::write(&record_path, text).map_err(|e| wrap(Error::io(&record_path, e)))?;
        self.records.push(rec);
        self.outcomes.push((name.to_string(), false));
        Ok(())
    }

    fn digest(&self, rel: &str) -> Result<String> {
        file_digest(&self.root.join(rel))
    }
}

fn inputs(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn reliable_cluster(diagnostics: &Path) -> Result<usize> {
    let text = fs::read_to_string(diagnostics).map_err(|e| Error::io(diagnostics, e))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| Error::parse(diagnostics, e.line(), e.to_string()))?;
    v["reliable_cluster"]
        .as_u64()
        .map(|c| c as usize)
        .ok_or_else(|| Error::validation(format!("{} has no reliable_cluster", diagnostics.display())))
}

fn load_cf(path: &Path, labels: &LabelSet) -> Result<LabelConfusion> {
    LabelConfusion::from_values(labels.len(), read_matrix(path, labels)?)
}

/// Execute every stage of `cfg`, reusing cached stages.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let root = cfg.out_dir.clone();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let (corpus, labels) = load_corpus(&cfg.corpus, None)?;
    let test_path = cfg.test_corpus.clone().unwrap_or_else(|| cfg.corpus.clone());
    let corpus_digest = file_digest(&cfg.corpus)?;
    let test_digest = file_digest(&test_path)?;
    let labels_text = labels.names().join(" ");

    let mut r = Runner { root: root.clone(), records: Vec::new(), outcomes: Vec::new() };

    // simulate
    let crowd_path = match &cfg.crowd {
        Some(p) => p.clone(),
        None => {
            let params = format!("groups={:?}\nranges={:?}\nseed={}", cfg.groups, cfg.ranges, cfg.seed);
            r.stage("simulate", params, inputs(&[("corpus", corpus_digest.clone())]), |dir| {
                let plan = SimPlan::new(cfg.groups.clone(), cfg.ranges.clone(), cfg.seed)?;
                let sim = simulate(&corpus, labels.len(), &plan)?;
                write_crowd(&sim.annotations, &labels, &dir.join("crowd.tsv"))?;
                write_precisions(&sim, &dir.join("precisions.tsv"))?;
                write_json(&dir.join("simulation.json"), &json!({ "plan": plan, "groups": sim.groups }))
            })?;
            root.join("simulate/crowd.tsv")
        }
    };
    let crowd_digest = file_digest(&crowd_path)?;

    // aggregate
    let hyper = cfg.hyperparams(labels.len());
    let params = format!(
        "clusters={:?}\nhyper={}\nschedule={}\nseed={}",
        cfg.clusters,
        serde_json::to_string(&hyper).unwrap(),
        serde_json::to_string(&cfg.schedule).unwrap(),
        cfg.seed
    );
    r.stage(
        "aggregate",
        params,
        inputs(&[("corpus", corpus_digest.clone()), ("crowd", crowd_digest.clone())]),
        |dir| {
            let ann = load_crowd(&crowd_path, &corpus, &labels)?;
            match cfg.clusters {
                ClusterSpec::Fixed(c) => {
                    let h = hyper.with_clusters(c);
                    let res = run_chain(&ann, &h, &cfg.schedule, cfg.seed)?;
                    write_aggregation(dir, &corpus, &labels, &ann, &res, &h, &cfg.schedule, cfg.seed, None)
                }
                ClusterSpec::Range(..) => {
                    let sel = select_model(&ann, &hyper, &cfg.clusters.candidates(), &cfg.schedule, cfg.seed)?;
                    let h = hyper.with_clusters(sel.best_clusters);
                    write_aggregation(dir, &corpus, &labels, &ann, &sel.result, &h, &cfg.schedule, cfg.seed, Some(&sel.scores))
                }
            }
        },
    )?;

    // ambiguity
    let agg_inputs = inputs(&[
        ("crowd", crowd_digest.clone()),
        ("zhat", r.digest("aggregate/zhat.tsv")?),
        ("clusters", r.digest("aggregate/clusters.tsv")?),
        ("diagnostics", r.digest("aggregate/diagnostics.json")?),
    ]);
    let params = format!("p={}\nnormalize={}", cfg.ambiguity.p, cfg.ambiguity.normalize);
    r.stage("ambiguity", params, agg_inputs, |dir| {
        let agg = root.join("aggregate");
        let ann = load_crowd(&crowd_path, &corpus, &labels)?;
        let z_hat = load_labels(&agg.join("zhat.tsv"), &corpus, &labels)?;
        let clusters = read_clusters(&agg.join("clusters.tsv"), &ann)?;
        let k = reliable_cluster(&agg.join("diagnostics.json"))?;
        let members: Vec<usize> = (0..clusters.len()).filter(|&l| clusters[l] == k).collect();
        let rep = ambiguity::analyze(&ann, &members, &z_hat, &cfg.ambiguity)?;
        ambiguity::write_report(dir, &ann, &labels, &rep)
    })?;

    // train
    let params = format!(
        "mode={}\nl2={}\nmax_epochs={}\nseed={}\nlabels={labels_text}",
        cfg.mode, cfg.l2, cfg.max_epochs, cfg.seed
    );
    let train_inputs = inputs(&[
        ("corpus", corpus_digest.clone()),
        ("zhat", r.digest("aggregate/zhat.tsv")?),
        ("cf", r.digest("ambiguity/cf.tsv")?),
    ]);
    r.stage("train", params, train_inputs, |dir| {
        let z_hat = load_labels(&root.join("aggregate/zhat.tsv"), &corpus, &labels)?;
        let cf = load_cf(&root.join("ambiguity/cf.tsv"), &labels)?;
        let tc = TrainConfig { mode: cfg.mode, l2: cfg.l2, max_epochs: cfg.max_epochs, seed: cfg.seed, ..Default::default() };
        let (model, stats) = labeler::train(&corpus, &z_hat, &labels, Some(&cf), &tc)?;
        model.save(&dir.join("model.bin"))?;
        write_json(&dir.join("train.json"), &json!({ "config": tc, "stats": stats }))
    })?;

    // predict
    let test_corpus = || -> Result<Corpus> { Ok(load_corpus(&test_path, Some(&labels))?.0) };
    let predict_inputs = inputs(&[("model", r.digest("train/model.bin")?), ("test_corpus", test_digest.clone())]);
    r.stage("predict", String::new(), predict_inputs, |dir| {
        let model = CrfModel::load(&root.join("train/model.bin"))?;
        let test = test_corpus()?;
        write_labels(&test, &model.predict(&test), &labels, &dir.join("pred.tsv"))
    })?;

    // evaluate
    let eval_inputs = inputs(&[
        ("corpus", corpus_digest),
        ("test_corpus", test_digest),
        ("crowd", crowd_digest),
        ("pred", r.digest("predict/pred.tsv")?),
        ("zhat", r.digest("aggregate/zhat.tsv")?),
        ("flagged", r.digest("ambiguity/flagged.tsv")?),
        ("candidates", r.digest("ambiguity/candidates.tsv")?),
        ("cf", r.digest("ambiguity/cf.tsv")?),
    ]);
    r.stage("evaluate", String::new(), eval_inputs, |dir| {
        let test = test_corpus()?;
        let pred = load_labels(&root.join("predict/pred.tsv"), &test, &labels)?;
        let gold = test
            .gold_column(0)
            .ok_or_else(|| Error::validation("test corpus needs gold labels"))?;
        let mut report = evaluate::report(&ReportInputs {
            pred: &pred,
            gold: &gold,
            labels: &labels,
            offsets: test.offsets(),
            scheme: SpanScheme::detect(&labels),
            gold2: None,
            ambiguity: None,
            cf: None,
            top_k: 5,
        })?;
        let ann = load_crowd(&crowd_path, &corpus, &labels)?;
        let z_hat = load_labels(&root.join("aggregate/zhat.tsv"), &corpus, &labels)?;
        if let Some(train_gold) = corpus.gold_column(0) {
            report.insert("aggregation_accuracy".into(), json!(token_accuracy(&z_hat, &train_gold)?));
            report.insert("mv_token_accuracy".into(), json!(token_accuracy(&mv_token(&ann), &train_gold)?));
            if let Some(gold2) = corpus.gold_column(1).filter(|g2| g2 != &train_gold) {
                let amb = root.join("ambiguity");
                let flagged = ambiguity::read_flagged(&amb.join("flagged.tsv"), corpus.offsets())?;
                let cands = ambiguity::read_candidates(&amb.join("candidates.tsv"), corpus.offsets(), &labels)?;
                let sets = ambiguity::candidate_sets(&cands, &z_hat);
                let cf = read_matrix(&amb.join("cf.tsv"), &labels)?;
                let amb_report = evaluate::report(&ReportInputs {
                    pred: &z_hat,
                    gold: &train_gold,
                    labels: &labels,
                    offsets: corpus.offsets(),
                    scheme: SpanScheme::detect(&labels),
                    gold2: Some(&gold2),
                    ambiguity: Some((&flagged, &sets)),
                    cf: Some(&cf),
                    top_k: 5,
                })?;
                for key in ["acc1", "acc2", "acc2_semantics", "n_gold_ambiguous", "matrix_distance", "top_pairs_derived", "top_pairs_gold"] {
                    if let Some(v) = amb_report.get(key) {
                        report.insert(key.into(), v.clone());
                    }
                }
            }
        }
        write_json(&dir.join("report.json"), &Value::Object(report))
    })?;

    let manifest = Manifest {
        tool: "crowdlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: sha256_hex(cfg.canonical().as_bytes()),
        config: cfg.entries.iter().filter(|(k, _)| k.as_str() != "out_dir").map(|(k, v)| (k.clone(), v.clone())).collect(),
        stages: r.records,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let path = root.join("manifest.json");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(RunReport { run_dir: root, stages: r.outcomes, manifest })
}

/// Files under `run_dir` whose digest no longer matches `manifest.json`.
pub fn verify(run_dir: &Path) -> Result<Vec<String>> {
    let path = run_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;
    let mut bad = Vec::new();
    for stage in &manifest.stages {
        for (file, digest) in &stage.outputs {
            let rel = format!("{}/{file}", stage.name);
            match file_digest(&run_dir.join(&rel)) {
                Ok(d) if &d == digest => {}
                _ => bad.push(rel),
            }
        }
    }
    Ok(bad)
}
