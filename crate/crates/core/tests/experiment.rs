use std::fs;
use std::path::Path;

use awe_core::experiment::{run_experiment, ExperimentConfig, Manifest, NoiseCondition, System};

const TINY: &str = "
name = tiny
seed = 11
mode = transfer

[corpus]
n_languages = 3
vocab_size_per_language = 6
speakers_per_language = 4
instances_per_word = 4
word_length_range = 2, 4
frames_per_phone_range = 1, 3
dim = 4

[languages]
train = L0, L1
zero_resource = L2

[systems]
run = downsample, dtw, cae, cae_lc, classifier, classifier_branched, siamese, ae_utd, cae_utd, classifier_utd, siamese_utd

[model]
encoder_layers = 1
encoder_units = 4
decoder_layers = 1
decoder_units = 4
embedding_dim = 3
language_dim = 2
branch_units = 3

[train]
epochs = 1
n_pairs = 20
batch_size = 8
pair_batch_size = 8
siamese_classes = 3
siamese_instances = 2

[train.cae_utd]
ae_pretrain_epochs = 1

[utd]
label_error_rate = 0.3
boundary_jitter_frames = 1
";

fn config(out: &Path, extra: &[(&str, &str)]) -> ExperimentConfig {
    let mut o: Vec<(String, String)> = vec![("output_dir".into(), out.display().to_string())];
    o.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    ExperimentConfig::parse(TINY, &o).unwrap()
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    fs::read(dir.join(rel)).unwrap()
}

#[test]
fn transfer_run_covers_every_system_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ra = run_experiment(&config(&a, &[])).unwrap();
    let rb = run_experiment(&config(&b, &[])).unwrap();
    assert_eq!(ra.manifest, rb.manifest);
    assert_eq!(read(&a, Manifest::FILE), read(&b, Manifest::FILE));
    assert_eq!(ra.ap.len(), 11);
    for row in &ra.ap {
        assert!((0.0..=1.0).contains(&row.result.ap), "{}", row.system);
        assert_eq!(row.language, "L2");
    }
    let paths: Vec<&str> = ra.manifest.entries.iter().map(|e| e.path.as_str()).collect();
    assert!(paths.contains(&"ap.tsv"));
    assert!(paths.contains(&"logs/cae.tsv"));
    assert!(paths.contains(&"logs/siamese_utd_L2.tsv"));
    assert!(paths.contains(&"utd/cae_utd_L2.tsv"));
    for e in &ra.manifest.entries {
        let bytes = read(&a, &e.path);
        assert_eq!(awe_core::experiment::sha256_hex(&bytes), e.sha256);
    }
    let ap = String::from_utf8(read(&a, "ap.tsv")).unwrap();
    assert!(ap.starts_with("system\ttraining_languages\tcondition\tlanguage\tap\t"));
    assert!(ap.contains("\ncae\t2\t-\tL2\t"));
}

#[test]
fn baseline_only_run_emits_one_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &[("systems.run", "downsample"), ("train.epochs", "0")]);
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.manifest.entries.len(), 1);
    assert_eq!(r.manifest.entries[0].path, "ap.tsv");
    let first = read(tmp.path(), Manifest::FILE);
    run_experiment(&cfg).unwrap();
    assert_eq!(read(tmp.path(), Manifest::FILE), first);
}

#[test]
fn language_ladder_emits_a_table_per_model() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        &[("mode", "language_ladder"), ("ladder.sizes", "1, 2"), ("systems.run", "downsample, classifier, siamese")],
    );
    let r = run_experiment(&cfg).unwrap();
    for s in ["classifier", "siamese"] {
        let t = String::from_utf8(read(tmp.path(), &format!("ladder/{s}.tsv"))).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3, "{t}");
        assert!(lines[1].starts_with("1\tL0\tL2\t"));
        assert!(lines[2].starts_with("2\tL0,L1\tL2\t"));
    }
    let sys: System = "classifier".parse().unwrap();
    assert!(r.ap_of(sys, Some(1), None, "L2").is_some());
    assert!(r.ap_of(sys, Some(2), None, "L2").is_some());
}

#[test]
fn noise_ladder_trains_once_per_condition() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &[("mode", "noise_ladder"), ("systems.run", "cae_utd, siamese_utd")]);
    let r = run_experiment(&cfg).unwrap();
    for s in ["cae_utd", "siamese_utd"] {
        let sys: System = s.parse().unwrap();
        for c in NoiseCondition::ALL {
            assert!(r.ap_of(sys, None, Some(c), "L2").is_some());
        }
        let t = String::from_utf8(read(tmp.path(), &format!("noise/{s}.tsv"))).unwrap();
        assert_eq!(t.lines().count(), 5);
    }
    // both-fixed discovery output is the ground truth grouping
    let clean = String::from_utf8(read(tmp.path(), "utd/cae_utd_both_fixed_L2.tsv")).unwrap();
    let raw = String::from_utf8(read(tmp.path(), "utd/cae_utd_raw_L2.tsv")).unwrap();
    assert_ne!(clean, raw);
}

#[test]
fn probes_leave_training_and_eval_outputs_unchanged() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let base = [("systems.run", "downsample, cae, classifier")];
    let ra = run_experiment(&config(&a, &base)).unwrap();
    let probes = [
        base[0],
        ("probe.run", "edit_distance_bins, duration_r2, speaker_acc, language_acc"),
        ("probe.pca", "true"),
    ];
    let rb = run_experiment(&config(&b, &probes)).unwrap();
    for e in &ra.manifest.entries {
        assert_eq!(rb.manifest.get(&e.path), Some(e), "{}", e.path);
    }
    assert!(rb.manifest.get("probes.tsv").is_some());
    assert!(rb.manifest.get("pca/cae_L2.tsv").is_some());
    assert!(rb.manifest.get("probes/downsample_L2_edit_distance.tsv").is_some());
    let lang: Vec<_> = rb
        .probes
        .iter()
        .filter(|p| p.report.kind == awe_core::probe::ProbeKind::LanguageAcc)
        .collect();
    assert_eq!(lang.len(), 3);
    for p in lang {
        // every language of the corpus gets a score, seen in training or not
        assert_eq!(p.report.per_class.len(), 3);
    }
}

#[test]
fn failures_carry_a_stage_tag_and_keep_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &[("languages.zero_resource", "L7")]);
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.stage(), Some("config"));

    // one test speaker leaves no cross-speaker pair to score
    let cfg = config(tmp.path(), &[("systems.run", "cae"), ("corpus.speakers_per_language", "2")]);
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.stage(), Some("eval:cae:L2"), "{err}");
    assert!(tmp.path().join("logs/cae.tsv").exists());
    assert!(!tmp.path().join(Manifest::FILE).exists());
    assert!(err.to_string().starts_with("[eval:cae:L2]"));
}
