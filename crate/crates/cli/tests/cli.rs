use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn crowdlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdlab")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = crowdlab(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn standalone_stages_chain_together() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth-corpus", "--sequences", "25", "--seed", "2", "--out", "train.tsv"]);
    ok(d, &["simulate", "--corpus", "train.tsv", "--groups", "4,3", "--ranges", "0.95:0.8,0.4:0.2", "--seed", "7", "--out", "crowd.tsv"]);
    assert_eq!(fs::read_to_string(d.join("precisions.tsv")).unwrap().lines().count(), 7);

    let agg = ok(
        d,
        &["aggregate", "--corpus", "train.tsv", "--crowd", "crowd.tsv", "--clusters", "2", "--burn-in", "20", "--samples", "20", "--corrected-mh", "--seed", "7", "--out-dir", "agg"],
    );
    assert!(agg.contains("reliable cluster"));
    for f in ["zhat.tsv", "clusters.tsv", "annotators.tsv", "M_0.tsv", "M_1.tsv", "diagnostics.json"] {
        assert!(d.join("agg").join(f).is_file(), "{f}");
    }

    ok(
        d,
        &["ambiguity", "--corpus", "train.tsv", "--crowd", "crowd.tsv", "--clusters", "agg/clusters.tsv", "--zhat", "agg/zhat.tsv", "-p", "0.1", "--out-dir", "amb"],
    );
    for f in ["mu.tsv", "flagged.tsv", "candidates.tsv", "cf.tsv"] {
        assert!(d.join("amb").join(f).is_file(), "{f}");
    }

    ok(d, &["train", "--corpus", "train.tsv", "--labels", "agg/zhat.tsv", "--cf", "amb/cf.tsv", "--mode", "cost", "--max-epochs", "20", "--model", "model.bin"]);
    ok(d, &["predict", "--model", "model.bin", "--corpus", "train.tsv", "--out", "pred.tsv"]);
    let printed = ok(
        d,
        &["evaluate", "--pred", "agg/zhat.tsv", "--gold", "train.tsv", "--gold2", "--flagged", "amb/flagged.tsv", "--candidates", "amb/candidates.tsv", "--cf", "amb/cf.tsv", "--report", "report.json"],
    );
    assert!(printed.contains("token_accuracy"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    for key in ["token_accuracy", "span_f1", "acc1", "acc2", "matrix_distance", "top_pairs_derived"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert!(report["token_accuracy"].as_f64().unwrap() > 0.9);

    ok(d, &["evaluate", "--pred", "pred.tsv", "--gold", "train.tsv", "--report", "pred.json"]);
}

#[test]
fn run_is_cached_and_verifiable() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth-corpus", "--sequences", "20", "--seed", "9", "--out", "c.tsv"]);
    fs::write(d.join("run.cfg"), "corpus = c.tsv\nseed = 1\nburn_in = 10\nsamples = 10\nclusters = 2\nmax_epochs = 10\n").unwrap();
    let first = ok(d, &["run", "--config", "run.cfg"]);
    assert!(first.lines().filter(|l| l.ends_with("ran")).count() == 6, "{first}");
    let second = ok(d, &["run", "--config", "run.cfg"]);
    assert!(second.lines().filter(|l| l.ends_with("cached")).count() == 6, "{second}");
    ok(d, &["verify", "--run-dir", "run"]);

    fs::write(d.join("run/train/model.bin"), b"junk").unwrap();
    let bad = crowdlab(d, &["verify", "--run-dir", "run"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stdout).contains("train/model.bin"));

    let over = ok(d, &["run", "--config", "run.cfg", "--set", "l2=3"]);
    assert!(over.contains("simulate   cached") && over.contains("train      ran"), "{over}");
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = crowdlab(d, &["simulate", "--corpus", "missing.tsv", "--seed", "1", "--out", "x.tsv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.tsv"));

    fs::write(d.join("run.cfg"), "seed = 1\n").unwrap();
    let out = crowdlab(d, &["run", "--config", "run.cfg"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus"));

    ok(d, &["synth-corpus", "--sequences", "5", "--out", "c.tsv"]);
    let out = crowdlab(d, &["train", "--corpus", "c.tsv", "--mode", "cost", "--model", "m.bin"]);
    assert!(!out.status.success(), "cost mode without a confusion matrix must fail");

    let out = crowdlab(d, &["aggregate", "--corpus", "c.tsv", "--crowd", "c.tsv", "--clusters", "2", "--select-clusters", "2:3", "--seed", "1", "--out-dir", "o"]);
    assert_eq!(out.status.code(), Some(2));
}
