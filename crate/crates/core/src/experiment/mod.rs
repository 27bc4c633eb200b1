//! Config-driven pipelines: corpus → training → embedding → same-different
//! evaluation → probes, with every output file hashed into a manifest.
//!
//! Sub-seeds all derive from the global seed by stage name:
//!
//! | stage | name |
//! |---|---|
//! | synthetic corpus | `corpus` |
//! | zero-resource speaker split | `split/<language>` |
//! | term discovery | `utd/<language>` |
//! | supervised pairs | `pairs/<n training languages>` |
//! | supervised model | `train/<system>` |
//! | discovery-trained model | `train/<system>/<language>` |
//! | probe splits | `probe/duration`, `probe/speaker`, `probe/language` |
//! | trigram probe set | `probe/trigrams` |

mod config;

pub use config::{
    parse_list, set_corruption, set_synthetic, set_train, CorpusSource, EvalConfig, ExperimentConfig, Ini, Mode,
    NoiseCondition, ProbeConfig, SystemConfig, System,
};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::corpus::{
    all_word_pairs, read_corpus, sample_word_pairs, simulate_utd, split_corpus_ids, write_clusters,
    Corpus, SplitBy, SyntheticWorld,
};
use crate::dtw::{dtw_frames, DtwConfig};
use crate::error::{Error, Result};
use crate::eval::{condensed_distances, samediff_ap, samediff_from_distances, SameDiffResult};
use crate::features::{append_deltas_frames, downsample_frames, Embedding};
use crate::models::{train, Model, ModelKind, TrainConfig, TrainData, Vocabulary};
use crate::nn::write_checkpoint;
use crate::probe::{
    cosine_by_edit_distance, fit_duration_regression, fit_linear_classifier, pca_2d, write_edit_distance_bins,
    write_pca, ProbeKind, ProbeReport,
};
use crate::rng::derive_seed;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "AWE_THREADS";

/// Thread cap from `AWE_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::InvalidConfig(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs `f` on a pool of `threads` workers (the global pool when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

trait Stage<T> {
    fn stage(self, name: &str) -> Result<T>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, name: &str) -> Result<T> {
        self.map_err(|e| e.in_stage(name))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.tsv";

    pub fn get(&self, path: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.path == path)
    }

    pub fn write_tsv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "path\tsha256\tbytes")?;
        for e in &self.entries {
            writeln!(w, "{}\t{}\t{}", e.path, e.sha256, e.bytes)?;
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes files atomically (temporary file, then rename) and records them.
struct Output {
    dir: PathBuf,
    manifest: Manifest,
}

impl Output {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            manifest: Manifest::default(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        self.manifest.entries.retain(|e| e.path != rel);
        self.manifest.entries.push(ManifestEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    fn finish(mut self) -> Result<Manifest> {
        self.manifest.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let mut buf = Vec::new();
        self.manifest.write_tsv(&mut buf)?;
        let path = self.dir.join(Manifest::FILE);
        let tmp = path.with_extension("partial");
        fs::write(&tmp, &buf)?;
        fs::rename(&tmp, &path)?;
        Ok(self.manifest)
    }
}

/// One same-different evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ApRow {
    pub system: System,
    /// Number of training languages, for supervised systems.
    pub training_languages: Option<usize>,
    /// Noise condition, for discovery-trained systems in a noise ladder.
    pub condition: Option<NoiseCondition>,
    pub language: String,
    pub result: SameDiffResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub system: System,
    /// Zero-resource language whose test set (or, for the language probe,
    /// whose model) was probed.
    pub language: String,
    pub report: ProbeReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub manifest: Manifest,
    pub ap: Vec<ApRow>,
    pub probes: Vec<ProbeRow>,
}

impl ExperimentResult {
    pub fn ap_of(
        &self,
        system: System,
        training_languages: Option<usize>,
        condition: Option<NoiseCondition>,
        language: &str,
    ) -> Option<f64> {
        self.ap
            .iter()
            .find(|r| {
                r.system == system
                    && r.training_languages == training_languages
                    && r.condition == condition
                    && r.language == language
            })
            .map(|r| r.result.ap)
    }
}

fn dash<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

fn file_tag(system: System, k: Option<usize>, condition: Option<NoiseCondition>, language: Option<&str>) -> String {
    let mut tag = system.to_string();
    if let Some(k) = k {
        tag.push_str(&format!("_k{k}"));
    }
    if let Some(c) = condition {
        tag.push_str(&format!("_{c}"));
    }
    if let Some(l) = language {
        tag.push_str(&format!("_{l}"));
    }
    tag
}

/// A zero-resource language cut by speaker into discovery and test parts.
struct ZeroResource {
    language: String,
    utd: Corpus,
    test: Corpus,
    /// Corpus ids of the test segments.
    test_ids: Vec<usize>,
}

fn split_zero_resource(cfg: &ExperimentConfig, corpus: &Corpus, language: &str) -> Result<ZeroResource> {
    let ids = &corpus.language_index()[language];
    let sub = corpus.subset(ids)?;
    let parts = split_corpus_ids(
        &sub,
        &[cfg.utd_fraction, 1.0 - cfg.utd_fraction],
        SplitBy::Speaker,
        derive_seed(cfg.seed, &format!("split/{language}")),
    )?;
    Ok(ZeroResource {
        language: language.to_string(),
        utd: sub.subset(&parts[0])?,
        test: sub.subset(&parts[1])?,
        test_ids: parts[1].iter().map(|&i| ids[i]).collect(),
    })
}

fn embed_corpus(system: System, model: Option<&Model>, corpus: &Corpus, eval: &EvalConfig) -> Result<Vec<Embedding>> {
    match (system, model) {
        (System::Downsample, _) => corpus
            .segments()
            .iter()
            .map(|s| downsample_frames(s.frames(), eval.downsample_frames))
            .collect(),
        (_, Some(m)) => {
            let frames: Vec<_> = corpus.segments().iter().map(|s| s.frames()).collect();
            m.embed_batch(&frames)
        }
        _ => Err(Error::InvalidInput(format!("{system} produces no embeddings"))),
    }
}

fn dtw_samediff(test: &Corpus, eval: &EvalConfig) -> Result<SameDiffResult> {
    let frames = test
        .segments()
        .iter()
        .map(|s| {
            if eval.dtw_deltas {
                append_deltas_frames(s.frames(), 2)
            } else {
                Ok(s.frames().clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = DtwConfig {
        normalize: eval.dtw_normalize,
    };
    let d = condensed_distances(frames.len(), |i, j| dtw_frames(&frames[i], &frames[j], cfg).unwrap_or(f64::NAN));
    let metas: Vec<_> = test.segments().iter().map(|s| s.meta().clone()).collect();
    samediff_from_distances(&d, &metas, eval.mode)
}

fn train_config(sc: &SystemConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..sc.train.clone()
    }
}

fn train_supervised(
    cfg: &ExperimentConfig,
    sc: &SystemConfig,
    train_corpus: &Corpus,
    n_languages: usize,
) -> Result<crate::models::TrainedModel> {
    let tc = train_config(sc, derive_seed(cfg.seed, &format!("train/{}", sc.system)));
    match sc.model.kind {
        ModelKind::Cae | ModelKind::CaeLc => {
            let pairs = if cfg.n_pairs == 0 {
                all_word_pairs(train_corpus)
            } else {
                sample_word_pairs(
                    train_corpus,
                    cfg.n_pairs,
                    derive_seed(cfg.seed, &format!("pairs/{n_languages}")),
                )?
            };
            train(&sc.model, &tc, TrainData::Pairs {
                corpus: train_corpus,
                pairs: &pairs,
            })
        }
        _ => {
            let vocab = Vocabulary::from_corpus(train_corpus, sc.model.vocab_cap)?;
            train(&sc.model, &tc, TrainData::Labelled {
                corpus: train_corpus,
                vocab: &vocab,
            })
        }
    }
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: Output,
    ap: Vec<ApRow>,
    /// Test-set embeddings by (system, language), for probing.
    embeddings: BTreeMap<(System, String), Vec<Embedding>>,
    /// Models behind those embeddings, for the trigram probe set.
    models: BTreeMap<(System, String), Model>,
}

impl Runner<'_> {
    fn record_training(&mut self, tag: &str, trained: &crate::models::TrainedModel) -> Result<()> {
        self.out
            .write_with(&format!("logs/{tag}.tsv"), |w| trained.log.write_tsv(w))?;
        if self.cfg.save_models {
            self.out.write_with(&format!("models/{tag}.awem"), |w| {
                write_checkpoint(w, &trained.model.to_checkpoint())
            })?;
        }
        Ok(())
    }

    fn evaluate(
        &mut self,
        system: System,
        model: Option<&Model>,
        zr: &ZeroResource,
        k: Option<usize>,
        condition: Option<NoiseCondition>,
        keep: bool,
    ) -> Result<()> {
        let stage = format!("eval:{system}:{}", zr.language);
        let result = if system == System::Dtw {
            dtw_samediff(&zr.test, &self.cfg.eval).stage(&stage)?
        } else {
            let emb = embed_corpus(system, model, &zr.test, &self.cfg.eval).stage(&format!("embed:{system}"))?;
            let metas: Vec<_> = zr.test.segments().iter().map(|s| s.meta().clone()).collect();
            let r = samediff_ap(&emb, &metas, self.cfg.eval.mode).stage(&stage)?;
            if keep {
                self.embeddings.insert((system, zr.language.clone()), emb);
            }
            r
        };
        if self.cfg.eval.pr_curves {
            let tag = file_tag(system, k, condition, Some(&zr.language));
            self.out
                .write_with(&format!("pr/{tag}.tsv"), |w| result.write_pr_curve(w))
                .stage("write")?;
        }
        self.ap.push(ApRow {
            system,
            training_languages: k,
            condition,
            language: zr.language.clone(),
            result,
        });
        Ok(())
    }
}

fn load_corpus(cfg: &ExperimentConfig) -> Result<(Corpus, Option<SyntheticWorld>)> {
    match &cfg.corpus {
        CorpusSource::Path(p) => Ok((read_corpus(p)?, None)),
        CorpusSource::Synthetic(spec) => {
            let spec = crate::corpus::SyntheticSpec {
                seed: derive_seed(cfg.seed, "corpus"),
                ..spec.clone()
            };
            let world = SyntheticWorld::new(&spec)?;
            Ok((world.corpus()?, Some(world)))
        }
    }
}

/// Runs the whole pipeline and writes `manifest.tsv` last. Files written
/// before a failure stay in place.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate().stage("config")?;
    let out = Output::create(&cfg.output_dir).stage("output")?;
    let (corpus, world) = load_corpus(cfg).stage("corpus")?;
    for l in cfg.training_languages.iter().chain(&cfg.zero_resource_languages) {
        if !corpus.language_index().contains_key(l) {
            return Err(Error::InvalidConfig(format!("language {l} is not in the corpus")).in_stage("config"));
        }
    }
    let zrs = cfg
        .zero_resource_languages
        .iter()
        .map(|l| split_zero_resource(cfg, &corpus, l))
        .collect::<Result<Vec<_>>>()
        .stage("split")?;

    let mut run = Runner {
        cfg,
        out,
        ap: Vec::new(),
        embeddings: BTreeMap::new(),
        models: BTreeMap::new(),
    };
    let probing = !cfg.probe.kinds.is_empty();
    let probed = |s: System| probing && s.has_embeddings() && (cfg.probe.systems.is_empty() || cfg.probe.systems.contains(&s));

    for sc in &cfg.systems {
        let system = sc.system;
        match system {
            System::Downsample | System::Dtw => {
                for zr in &zrs {
                    run.evaluate(system, None, zr, None, None, probed(system))?;
                }
            }
            System::Supervised(_) => {
                let sizes = match cfg.mode {
                    Mode::LanguageLadder => cfg.ladder.clone(),
                    _ => vec![cfg.training_languages.len()],
                };
                for k in sizes {
                    let stage = format!("train:{system}");
                    let train_corpus = corpus.select_languages(&cfg.training_languages[..k]).stage(&stage)?;
                    let trained = train_supervised(cfg, sc, &train_corpus, k).stage(&stage)?;
                    let ladder = cfg.mode == Mode::LanguageLadder;
                    let tag = file_tag(system, ladder.then_some(k), None, None);
                    run.record_training(&tag, &trained).stage("write")?;
                    for zr in &zrs {
                        run.evaluate(system, Some(&trained.model), zr, Some(k), None, probed(system))?;
                        if probed(system) {
                            run.models.insert((system, zr.language.clone()), trained.model.clone());
                        }
                    }
                }
            }
            System::Utd(kind) => {
                let conditions: Vec<Option<NoiseCondition>> = match cfg.mode {
                    Mode::NoiseLadder => cfg.noise.iter().copied().map(Some).collect(),
                    _ => vec![None],
                };
                for zr in &zrs {
                    for &cond in &conditions {
                        let stage = format!("utd:{}", zr.language);
                        let base = crate::corpus::CorruptionConfig {
                            seed: derive_seed(cfg.seed, &format!("utd/{}", zr.language)),
                            ..cfg.utd.clone()
                        };
                        let ccfg = cond.map_or(base.clone(), |c| c.apply(&base));
                        let clusters = simulate_utd(&zr.utd, &ccfg).stage(&stage)?;
                        let ctag = file_tag(system, None, cond, Some(&zr.language));
                        run.out
                            .write_with(&format!("utd/{ctag}.tsv"), |w| write_clusters(&clusters, w))
                            .stage("write")?;
                        let tc = train_config(sc, derive_seed(cfg.seed, &format!("train/{system}/{}", zr.language)));
                        let model_cfg = crate::models::ModelConfig { kind, ..sc.model.clone() };
                        let trained = train(&model_cfg, &tc, TrainData::Discovered {
                            corpus: &zr.utd,
                            clusters: &clusters,
                            n_pairs: cfg.utd.n_pairs,
                        })
                        .stage(&format!("train:{system}"))?;
                        run.record_training(&ctag, &trained).stage("write")?;
                        run.evaluate(system, Some(&trained.model), zr, None, cond, probed(system))?;
                        if probed(system) {
                            run.models.insert((system, zr.language.clone()), trained.model);
                        }
                    }
                }
            }
        }
    }

    write_ap_tables(&mut run).stage("write")?;
    let probes = if probing {
        run_probes(&mut run, &zrs, world.as_ref())?
    } else {
        Vec::new()
    };
    let Runner { out, ap, .. } = run;
    let manifest = out.finish().stage("write")?;
    Ok(ExperimentResult { manifest, ap, probes })
}

fn write_ap_tables(run: &mut Runner<'_>) -> Result<()> {
    let rows = run.ap.clone();
    run.out.write_with("ap.tsv", |w| {
        writeln!(w, "system\ttraining_languages\tcondition\tlanguage\tap\tn_positive_pairs\tn_total_pairs")?;
        for r in &rows {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.system,
                dash(r.training_languages),
                dash(r.condition),
                r.language,
                r.result.ap,
                r.result.n_positive_pairs,
                r.result.n_total_pairs
            )?;
        }
        Ok(())
    })?;
    let cfg = run.cfg;
    match cfg.mode {
        Mode::LanguageLadder => {
            for sc in cfg.systems.iter().filter(|s| matches!(s.system, System::Supervised(_))) {
                run.out.write_with(&format!("ladder/{}.tsv", sc.system), |w| {
                    writeln!(w, "n_training_languages\ttraining_languages\tlanguage\tap")?;
                    for r in rows.iter().filter(|r| r.system == sc.system) {
                        let k = r.training_languages.unwrap_or(0);
                        writeln!(
                            w,
                            "{k}\t{}\t{}\t{}",
                            cfg.training_languages[..k].join(","),
                            r.language,
                            r.result.ap
                        )?;
                    }
                    Ok(())
                })?;
            }
        }
        Mode::NoiseLadder => {
            for sc in cfg.systems.iter().filter(|s| matches!(s.system, System::Utd(_))) {
                run.out.write_with(&format!("noise/{}.tsv", sc.system), |w| {
                    writeln!(w, "condition\tlanguage\tap")?;
                    for r in rows.iter().filter(|r| r.system == sc.system) {
                        writeln!(w, "{}\t{}\t{}", dash(r.condition), r.language, r.result.ap)?;
                    }
                    Ok(())
                })?;
            }
        }
        Mode::Transfer => {}
    }
    Ok(())
}

fn run_probes(run: &mut Runner<'_>, zrs: &[ZeroResource], world: Option<&SyntheticWorld>) -> Result<Vec<ProbeRow>> {
    let cfg = run.cfg;
    let mut rows = Vec::new();
    let keys: Vec<(System, String)> = run.embeddings.keys().cloned().collect();
    for (system, language) in keys {
        let zr = zrs.iter().find(|z| z.language == language).expect("evaluated language");
        let emb = &run.embeddings[&(system, language.clone())];
        let tag = file_tag(system, None, None, Some(&language));
        for &kind in &cfg.probe.kinds {
            let stage = format!("probe:{kind}");
            let report = match kind {
                ProbeKind::EditDistanceBins => {
                    let bins = cosine_by_edit_distance(&zr.test, emb, cfg.probe.max_edit_bin).stage(&stage)?;
                    run.out
                        .write_with(&format!("probes/{tag}_edit_distance.tsv"), |w| write_edit_distance_bins(&bins, w))
                        .stage("write")?;
                    ProbeReport::from_bins(&bins)
                }
                ProbeKind::DurationR2 => {
                    let d: Vec<f64> = zr.test.segments().iter().map(|s| s.meta().duration_ms).collect();
                    let r = fit_duration_regression(emb, &d, derive_seed(cfg.seed, "probe/duration")).stage(&stage)?;
                    ProbeReport::from_regression(&r)
                }
                ProbeKind::SpeakerAcc => {
                    let labels: Vec<&str> = zr.test.segments().iter().map(|s| s.meta().speaker.as_str()).collect();
                    let r = fit_linear_classifier(emb, &labels, derive_seed(cfg.seed, "probe/speaker")).stage(&stage)?;
                    ProbeReport::from_classifier(kind, &r)
                }
                ProbeKind::LanguageAcc => continue,
            };
            rows.push(ProbeRow {
                system,
                language: language.clone(),
                report,
            });
        }
        if cfg.probe.pca {
            let p = pca_2d(emb).stage("probe:pca")?;
            run.out
                .write_with(&format!("pca/{tag}.tsv"), |w| write_pca(&zr.test_ids, &p, w))
                .stage("write")?;
        }
    }

    if cfg.probe.kinds.contains(&ProbeKind::LanguageAcc) {
        let stage = "probe:language_acc";
        let world = world
            .ok_or_else(|| Error::InvalidConfig("the language probe needs a synthetic corpus".into()))
            .stage(stage)?;
        let all: Vec<usize> = (0..world.spec().n_languages).collect();
        let trigrams = world
            .trigram_corpus(
                &all,
                cfg.probe.trigrams,
                cfg.probe.trigram_repeats,
                derive_seed(cfg.seed, "probe/trigrams"),
            )
            .stage(stage)?;
        let labels: Vec<&str> = trigrams.segments().iter().map(|s| s.meta().language.as_str()).collect();
        let keys: Vec<(System, String)> = run.embeddings.keys().cloned().collect();
        for key in keys {
            let emb = embed_corpus(key.0, run.models.get(&key), &trigrams, &cfg.eval).stage(stage)?;
            let r = fit_linear_classifier(&emb, &labels, derive_seed(cfg.seed, "probe/language")).stage(stage)?;
            rows.push(ProbeRow {
                system: key.0,
                language: key.1,
                report: ProbeReport::from_classifier(ProbeKind::LanguageAcc, &r),
            });
        }
    }

    let table = rows.clone();
    run.out
        .write_with("probes.tsv", |w| {
            writeln!(w, "system\tlanguage\tkind\tname\tvalue\tsupport")?;
            for r in &table {
                let mut buf = Vec::new();
                r.report.write_tsv(&mut buf)?;
                for line in String::from_utf8_lossy(&buf).lines().skip(1) {
                    let rest = line.split_once('\t').map_or("", |(_, x)| x);
                    writeln!(w, "{}\t{}\t{}\t{rest}", r.system, r.language, r.report.kind)?;
                }
            }
            Ok(())
        })
        .stage("write")?;
    Ok(rows)
}
