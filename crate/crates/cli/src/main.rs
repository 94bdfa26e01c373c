use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crowdlab_core::aggregator::io::{read_clusters, write_aggregation};
use crowdlab_core::aggregator::{run_chain, select_model, Hyperparams, MhMode, Schedule};
use crowdlab_core::ambiguity::{self, AmbiguityConfig, LabelConfusion};
use crowdlab_core::corpus::{load_corpus, load_crowd, load_labels, write_corpus, write_crowd, write_labels};
use crowdlab_core::crowdsim::{parse_groups, parse_ranges, simulate, write_precisions, SimPlan};
use crowdlab_core::evaluate::{self, ReportInputs, SpanScheme};
use crowdlab_core::labeler::{self, CrfModel, TrainConfig, TrainMode};
use crowdlab_core::pipeline::{self, ClusterSpec, RunConfig};
use crowdlab_core::synthetic::{synthetic_pos_corpus, SyntheticConfig};
use crowdlab_core::tsv::read_matrix;

#[derive(Parser)]
#[command(name = "crowdlab", version, about = "Crowd-label aggregation, ambiguity detection and cost-sensitive CRF training")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate crowd annotations from a gold corpus.
    Simulate(SimulateArgs),
    /// Infer true labels and annotator clusters from crowd annotations.
    Aggregate(AggregateArgs),
    /// Flag ambiguous tokens from the reliable cluster's disagreements.
    Ambiguity(AmbiguityArgs),
    /// Train a CRF tagger on aggregated labels.
    Train(TrainArgs),
    /// Tag a corpus with a trained model.
    Predict(PredictArgs),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Run every stage from a config file.
    Run(RunArgs),
    /// Check a run directory against its manifest.
    Verify {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Write a synthetic doubly-gold POS corpus.
    SynthCorpus(SynthArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "8,4,3")]
    groups: String,
    #[arg(long, default_value = "0.9:0.7,0.7:0.4,0.4:0.1")]
    ranges: String,
    #[arg(long)]
    seed: u64,
    /// Crowd file to write; `precisions.tsv` goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    crowd: PathBuf,
    /// Fixed number of annotator clusters.
    #[arg(long, conflicts_with = "select_clusters")]
    clusters: Option<usize>,
    /// Pick the cluster count by BIC over a range, e.g. 2:5.
    #[arg(long)]
    select_clusters: Option<String>,
    #[arg(long, default_value_t = 200)]
    burn_in: usize,
    #[arg(long, default_value_t = 300)]
    samples: usize,
    #[arg(long, default_value_t = 2)]
    thin: usize,
    #[arg(long, default_value_t = 20)]
    mh_steps: usize,
    /// Add the Hastings correction to the Metropolis steps.
    #[arg(long)]
    corrected_mh: bool,
    #[arg(long, default_value_t = 2.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.7)]
    alpha_diag: f64,
    #[arg(long, default_value_t = 0.3)]
    alpha_off: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AmbiguityArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    crowd: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    /// Defaults to the cluster recorded in diagnostics.json beside `--clusters`.
    #[arg(long)]
    reliable_cluster: Option<usize>,
    #[arg(long)]
    zhat: PathBuf,
    #[arg(short, default_value_t = 0.10)]
    p: f64,
    /// Rank raw μ instead of per-sequence normalized μ.
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Training labels (seq, pos, label), e.g. zhat.tsv. Defaults to the corpus gold column.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Label confusion matrix; required in cost mode.
    #[arg(long)]
    cf: Option<PathBuf>,
    #[arg(long, default_value = "cost")]
    mode: TrainMode,
    #[arg(long, default_value_t = 1.0)]
    l2: f64,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Bio,
    Token,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Corpus holding the gold column(s).
    #[arg(long)]
    gold: PathBuf,
    /// Also score against the corpus's second gold column.
    #[arg(long)]
    gold2: bool,
    #[arg(long, requires = "candidates", requires = "gold2")]
    flagged: Option<PathBuf>,
    #[arg(long, requires = "flagged")]
    candidates: Option<PathBuf>,
    /// Derived label confusion matrix to compare with the gold one.
    #[arg(long, requires = "gold2")]
    cf: Option<PathBuf>,
    /// Span scheme; detected from the label names when omitted.
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config entry, e.g. `--set seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    sequences: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let (corpus, labels) = load_corpus(&a.corpus, None)?;
    let plan = SimPlan::new(parse_groups(&a.groups)?, parse_ranges(&a.ranges)?, a.seed)?;
    let sim = simulate(&corpus, labels.len(), &plan)?;
    write_crowd(&sim.annotations, &labels, &a.out)?;
    let precisions = a.out.with_file_name("precisions.tsv");
    write_precisions(&sim, &precisions)?;
    log::info!("{} annotations -> {}", sim.annotations.len(), a.out.display());
    Ok(())
}

fn cmd_aggregate(a: AggregateArgs) -> Result<()> {
    let (corpus, labels) = load_corpus(&a.corpus, None)?;
    let ann = load_crowd(&a.crowd, &corpus, &labels)?;
    let mut hyper = Hyperparams::new(1, labels.len());
    hyper.set_lambda(a.lambda);
    hyper.set_alpha(a.alpha_diag, a.alpha_off);
    let schedule = Schedule {
        burn_in: a.burn_in,
        n_samples: a.samples,
        thin: a.thin,
        mh_steps: a.mh_steps,
        mh_mode: if a.corrected_mh { MhMode::Corrected } else { MhMode::Faithful },
    };
    let spec = match (a.clusters, &a.select_clusters) {
        (Some(c), None) => ClusterSpec::Fixed(c),
        (None, Some(range)) => ClusterSpec::parse(range)?,
        (None, None) => ClusterSpec::Range(2, 5),
        (Some(_), Some(_)) => unreachable!("clap rejects both"),
    };
    let (res, hyper, scores) = match spec {
        ClusterSpec::Fixed(c) => {
            let h = hyper.with_clusters(c);
            (run_chain(&ann, &h, &schedule, a.seed)?, h, None)
        }
        ClusterSpec::Range(..) => {
            let sel = select_model(&ann, &hyper, &spec.candidates(), &schedule, a.seed)?;
            for s in &sel.scores {
                log::info!("C={} bic={:.3}", s.n_clusters, s.bic);
            }
            (sel.result, hyper.with_clusters(sel.best_clusters), Some(sel.scores))
        }
    };
    write_aggregation(&a.out_dir, &corpus, &labels, &ann, &res, &hyper, &schedule, a.seed, scores.as_deref())?;
    println!("clusters: {}  reliable cluster: {}", res.n_clusters, res.reliable_cluster);
    Ok(())
}

fn recorded_reliable_cluster(clusters: &Path) -> Result<usize> {
    let diag = clusters.with_file_name("diagnostics.json");
    let text = fs::read_to_string(&diag)
        .with_context(|| format!("--reliable-cluster not given and {} is unreadable", diag.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    v["reliable_cluster"].as_u64().map(|c| c as usize).context("diagnostics.json lacks reliable_cluster")
}

fn cmd_ambiguity(a: AmbiguityArgs) -> Result<()> {
    let (corpus, labels) = load_corpus(&a.corpus, None)?;
    let ann = load_crowd(&a.crowd, &corpus, &labels)?;
    let z_hat = load_labels(&a.zhat, &corpus, &labels)?;
    let clusters = read_clusters(&a.clusters, &ann)?;
    let k = match a.reliable_cluster {
        Some(k) => k,
        None => recorded_reliable_cluster(&a.clusters)?,
    };
    let members: Vec<usize> = (0..clusters.len()).filter(|&l| clusters[l] == k).collect();
    if members.is_empty() {
        bail!("cluster {k} has no annotators");
    }
    let config = AmbiguityConfig { p: a.p, normalize: !a.no_normalize };
    let report = ambiguity::analyze(&ann, &members, &z_hat, &config)?;
    ambiguity::write_report(&a.out_dir, &ann, &labels, &report)?;
    println!("flagged {} of {} eligible tokens", report.flagged.len(), report.eligible.len());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (corpus, labels) = load_corpus(&a.corpus, None)?;
    let targets = match &a.labels {
        Some(p) => load_labels(p, &corpus, &labels)?,
        None => corpus.gold_column(0).context("corpus has no gold column; pass --labels")?,
    };
    let cf = match &a.cf {
        Some(p) => Some(LabelConfusion::from_values(labels.len(), read_matrix(p, &labels)?)?),
        None => None,
    };
    let cfg = TrainConfig { mode: a.mode, l2: a.l2, max_epochs: a.max_epochs, seed: a.seed, ..Default::default() };
    let (model, stats) = labeler::train(&corpus, &targets, &labels, cf.as_ref(), &cfg)?;
    model.save(&a.model)?;
    println!(
        "epochs {}  loss {:.6}  grad {:.2e}  converged {}",
        stats.epochs, stats.loss, stats.grad_norm, stats.converged
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let model = CrfModel::load(&a.model)?;
    let (corpus, _) = load_corpus(&a.corpus, Some(model.labels()))?;
    write_labels(&corpus, &model.predict(&corpus), model.labels(), &a.out)?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let (corpus, labels) = load_corpus(&a.gold, None)?;
    let pred = load_labels(&a.pred, &corpus, &labels)?;
    let gold = corpus.gold_column(0).context("gold corpus has no label column")?;
    let gold2 = match a.gold2 {
        true => Some(corpus.gold_column(1).context("gold corpus has no second label column")?),
        false => None,
    };
    let flagged: Option<HashSet<usize>> =
        a.flagged.as_ref().map(|p| ambiguity::read_flagged(p, corpus.offsets())).transpose()?;
    let sets = match &a.candidates {
        Some(p) => Some(ambiguity::candidate_sets(&ambiguity::read_candidates(p, corpus.offsets(), &labels)?, &pred)),
        None => None,
    };
    let cf = a.cf.as_ref().map(|p| read_matrix(p, &labels)).transpose()?;
    let scheme = match a.scheme {
        Some(Scheme::Bio) => SpanScheme::Bio,
        Some(Scheme::Token) => SpanScheme::Token,
        None => SpanScheme::detect(&labels),
    };
    let report = evaluate::report(&ReportInputs {
        pred: &pred,
        gold: &gold,
        labels: &labels,
        offsets: corpus.offsets(),
        scheme,
        gold2: gold2.as_deref(),
        ambiguity: flagged.as_ref().zip(sets.as_deref()),
        cf: cf.as_deref(),
        top_k: a.top_k,
    })?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    fs::write(&a.report, text).with_context(|| format!("writing {}", a.report.display()))?;
    for key in ["token_accuracy", "span_f1", "acc1", "acc2", "matrix_distance"] {
        if let Some(v) = report.get(key) {
            println!("{key}: {v}");
        }
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let overrides = a
        .overrides
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = RunConfig::load(&a.config, &overrides)?;
    let report = pipeline::run(&cfg)?;
    for (stage, cached) in &report.stages {
        println!("{stage:<10} {}", if *cached { "cached" } else { "ran" });
    }
    println!("manifest: {}", report.run_dir.join("manifest.json").display());
    Ok(())
}

fn cmd_verify(run_dir: &Path) -> Result<()> {
    let bad = pipeline::verify(run_dir)?;
    if bad.is_empty() {
        println!("all artifacts match the manifest");
        return Ok(());
    }
    for f in &bad {
        println!("mismatch: {f}");
    }
    bail!("{} artifact(s) do not match the manifest", bad.len())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig { n_sequences: a.sequences, seed: a.seed, ..Default::default() };
    let (corpus, labels) = synthetic_pos_corpus(&cfg)?;
    write_corpus(&corpus, &labels, &a.out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Aggregate(a) => cmd_aggregate(a),
        Command::Ambiguity(a) => cmd_ambiguity(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Run(a) => cmd_run(a),
        Command::Verify { run_dir } => cmd_verify(&run_dir),
        Command::SynthCorpus(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
