use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn awe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_awe"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = awe(dir, args);
    assert!(
        out.status.success(),
        "awe {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_corpus(dir: &Path) {
    ok(dir, &[
        "gen-corpus",
        "--out",
        "c",
        "--seed",
        "3",
        "--set",
        "n_languages=3",
        "--set",
        "vocab_size_per_language=6",
        "--set",
        "speakers_per_language=4",
        "--set",
        "instances_per_word=4",
        "--set",
        "dim=4",
    ]);
}

const TINY_MODEL: [&str; 8] = [
    "--set",
    "model.encoder_units=4",
    "--set",
    "model.decoder_units=4",
    "--set",
    "model.embedding_dim=3",
    "--set",
    "train.epochs=1",
];

#[test]
fn pipeline_from_corpus_to_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    tiny_corpus(d);
    ok(d, &["simulate-utd", "--corpus", "c", "--languages", "L2", "--out", "cl.tsv"]);
    assert!(fs::read_to_string(d.join("cl.tsv")).unwrap().starts_with("cluster\tsegment\tstart\tend\n"));

    let mut args = vec!["train", "--corpus", "c", "--languages", "L0,L1", "--kind", "cae", "--out", "m.awem"];
    args.extend(["--n-pairs", "20", "--log", "log.tsv"]);
    args.extend(TINY_MODEL);
    ok(d, &args);
    let mut args = vec!["train", "--corpus", "c", "--languages", "L2", "--kind", "cae", "--out", "u.awem"];
    args.extend(["--clusters", "cl.tsv"]);
    args.extend(TINY_MODEL);
    ok(d, &args);

    ok(d, &["embed", "--corpus", "c", "--languages", "L2", "--model", "m.awem", "--out", "e.tsv"]);
    let emb = fs::read_to_string(d.join("e.tsv")).unwrap();
    assert_eq!(emb.lines().count(), 1 + 24);
    assert_eq!(emb.lines().next().unwrap(), "id\tz0\tz1\tz2");

    let metrics = ok(d, &["eval-samediff", "--corpus", "c", "--embeddings", "e.tsv"]);
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[0], "cross_speaker");
    let ap: f64 = row[1].parse().unwrap();
    assert!((0.0..=1.0).contains(&ap));

    let dtw = ok(d, &["eval-dtw", "--corpus", "c", "--languages", "L2", "--pr", "pr.tsv"]);
    assert_eq!(dtw.lines().nth(1).unwrap().split('\t').nth(2), row.get(2).copied());
    assert!(d.join("pr.tsv").exists());

    ok(d, &["embed", "--corpus", "c", "--out", "all.tsv"]);
    let probe = ok(d, &["probe", "--corpus", "c", "--embeddings", "all.tsv", "--kind", "language_acc", "--pca", "p.tsv"]);
    assert_eq!(probe.lines().filter(|l| l.contains("\tf1:")).count(), 3);
    assert_eq!(fs::read_to_string(d.join("p.tsv")).unwrap().lines().count(), 1 + 72);
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    tiny_corpus(d);
    let mut args = vec!["train", "--corpus", "c", "--languages", "L0,L1", "--kind", "siamese", "--out", "m.awem"];
    args.extend(TINY_MODEL);
    let mut runs = Vec::new();
    for threads in ["1", "3"] {
        let out = Command::new(env!("CARGO_BIN_EXE_awe"))
            .current_dir(d)
            .env("AWE_THREADS", threads)
            .args(&args)
            .output()
            .unwrap();
        assert!(out.status.success());
        runs.push(fs::read(d.join("m.awem")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn failures_exit_nonzero_with_a_stage_tag() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    let out = awe(d, &["eval-dtw", "--corpus", "missing"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: [eval-dtw]"));

    let out = awe(d, &["gen-corpus", "--out", "c", "--set", "no_such_key=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[gen-corpus]"));

    let out = Command::new(env!("CARGO_BIN_EXE_awe"))
        .current_dir(d)
        .env("AWE_THREADS", "zero")
        .args(["gen-corpus", "--out", "c"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!d.join("c").exists());
}

#[test]
fn run_experiment_honours_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("x.ini"),
        "name = x\nseed = 2\noutput_dir = ignored\n\n[corpus]\nn_languages = 3\nvocab_size_per_language = 5\n\
         speakers_per_language = 4\ninstances_per_word = 3\ndim = 4\n\n[languages]\ntrain = L0, L1\n\
         zero_resource = L2\n\n[systems]\nrun = downsample, dtw\n",
    )
    .unwrap();
    ok(d, &["run-experiment", "--config", "x.ini", "--output-dir", "out", "--set", "eval.downsample_frames=4"]);
    assert!(!d.join("ignored").exists());
    let ap = fs::read_to_string(d.join("out/ap.tsv")).unwrap();
    assert_eq!(ap.lines().count(), 3);
    let manifest = fs::read_to_string(d.join("out/manifest.tsv")).unwrap();
    assert!(manifest.lines().any(|l| l.starts_with("ap.tsv\t")));

    let out = awe(d, &["run-experiment", "--config", "x.ini", "--set", "languages.zero_resource=L9"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: [config]"));
}
