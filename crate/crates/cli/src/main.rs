use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use awe_core::corpus::{
    all_word_pairs, generate_corpus, read_clusters, read_corpus, sample_word_pairs, simulate_utd, write_clusters,
    write_corpus, Corpus, CorruptionConfig, SyntheticSpec,
};
use awe_core::dtw::{dtw_frames, DtwConfig};
use awe_core::eval::{condensed_distances, samediff_ap, samediff_from_distances, SameDiffMode, SameDiffResult};
use awe_core::experiment::{
    run_experiment, set_corruption, set_synthetic, set_train, threads_from_env, with_threads, ExperimentConfig,
};
use awe_core::features::{append_deltas_frames, downsample_frames, read_embeddings, write_embeddings, Embedding};
use awe_core::models::{train, Model, ModelConfig, ModelKind, TrainConfig, TrainData, Vocabulary};
use awe_core::nn::{read_checkpoint, write_checkpoint};
use awe_core::probe::{
    cosine_by_edit_distance, fit_duration_regression, fit_linear_classifier, pca_2d, write_edit_distance_bins,
    write_pca, ProbeKind, ProbeReport,
};
use clap::{Args, Parser, Subcommand};

/// Acoustic word embeddings for zero-resource languages.
#[derive(Parser)]
#[command(name = "awe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multilingual corpus.
    GenCorpus(GenCorpus),
    /// Simulate term discovery on one language of a corpus.
    SimulateUtd(SimulateUtd),
    /// Train an embedding model.
    Train(TrainCmd),
    /// Embed corpus segments with a model or by downsampling.
    Embed(EmbedCmd),
    /// Same-different evaluation of an embedding table.
    EvalSamediff(EvalSamediff),
    /// Same-different evaluation with DTW distances.
    EvalDtw(EvalDtw),
    /// Probe an embedding table.
    Probe(ProbeCmd),
    /// Run a whole experiment from a config file.
    RunExperiment(RunExperiment),
}

/// `key=value` option.
fn key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

#[derive(Args)]
struct CorpusArg {
    /// Corpus directory (metadata.tsv + features.bin).
    #[arg(long)]
    corpus: PathBuf,
    /// Keep only these languages (comma-separated).
    #[arg(long, value_delimiter = ',')]
    languages: Vec<String>,
}

impl CorpusArg {
    fn load(&self) -> anyhow::Result<Corpus> {
        let c = read_corpus(&self.corpus).with_context(|| format!("reading {}", self.corpus.display()))?;
        if self.languages.is_empty() {
            Ok(c)
        } else {
            Ok(c.select_languages(&self.languages)?)
        }
    }
}

#[derive(Args)]
struct GenCorpus {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generator setting, e.g. `vocab_size_per_language=50`.
    #[arg(long = "set", value_parser = key_value)]
    settings: Vec<(String, String)>,
}

#[derive(Args)]
struct SimulateUtd {
    #[command(flatten)]
    corpus: CorpusArg,
    /// Cluster table to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    label_error_rate: f64,
    #[arg(long, default_value_t = 2)]
    boundary_jitter_frames: usize,
    #[arg(long)]
    fix_boundaries: bool,
    #[arg(long)]
    fix_labels: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    corpus: CorpusArg,
    /// ae, cae, cae_lc, classifier, classifier_branched or siamese.
    #[arg(long)]
    kind: ModelKind,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Train on discovered clusters instead of true labels.
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// Correspondence pairs to sample (0 = all same-word pairs).
    #[arg(long, default_value_t = 0)]
    n_pairs: usize,
    /// Per-epoch loss table.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `model.<key>=value` or `train.<key>=value`.
    #[arg(long = "set", value_parser = key_value)]
    settings: Vec<(String, String)>,
}

#[derive(Args)]
struct EmbedCmd {
    #[command(flatten)]
    corpus: CorpusArg,
    /// Model checkpoint; omit to use downsampling.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Frames kept by the downsampling embedder.
    #[arg(long, default_value_t = 10)]
    downsample: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalSamediff {
    #[arg(long)]
    corpus: PathBuf,
    /// Embedding table whose ids index the corpus.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value = "cross_speaker")]
    mode: SameDiffMode,
    /// Metrics table; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Precision-recall curve table.
    #[arg(long)]
    pr: Option<PathBuf>,
}

#[derive(Args)]
struct EvalDtw {
    #[command(flatten)]
    corpus: CorpusArg,
    #[arg(long, default_value = "cross_speaker")]
    mode: SameDiffMode,
    /// Compare static frames only.
    #[arg(long)]
    no_deltas: bool,
    /// Report raw accumulated cost.
    #[arg(long)]
    no_normalize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    pr: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeCmd {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// edit_distance_bins, duration_r2, speaker_acc or language_acc.
    #[arg(long)]
    kind: ProbeKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    max_edit_bin: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write 2-D PCA coordinates here.
    #[arg(long)]
    pca: Option<PathBuf>,
}

#[derive(Args)]
struct RunExperiment {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Config override, `section.key=value` or `key=value`.
    #[arg(long = "set", value_parser = key_value)]
    settings: Vec<(String, String)>,
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Runs `f` against the file at `path`, or stdout.
fn emit(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> awe_core::Result<()>) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
        }
    }
    Ok(())
}

/// `Write` adapter so trait objects can feed `impl Write` writers.
struct Dyn<'a>(&'a mut dyn Write);

impl Write for Dyn<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.flush()
    }
}

fn gen_corpus(a: GenCorpus) -> anyhow::Result<()> {
    let mut spec = SyntheticSpec {
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    for (k, v) in &a.settings {
        set_synthetic(&mut spec, k, v)?;
    }
    let corpus = generate_corpus(&spec)?;
    write_corpus(&corpus, &a.out)?;
    eprintln!("{} segments written to {}", corpus.len(), a.out.display());
    Ok(())
}

fn simulate(a: SimulateUtd) -> anyhow::Result<()> {
    let corpus = a.corpus.load()?;
    let mut cfg = CorruptionConfig::default();
    for (k, v) in [
        ("label_error_rate", a.label_error_rate.to_string()),
        ("boundary_jitter_frames", a.boundary_jitter_frames.to_string()),
        ("fix_boundaries", a.fix_boundaries.to_string()),
        ("fix_labels", a.fix_labels.to_string()),
        ("seed", a.seed.to_string()),
    ] {
        set_corruption(&mut cfg, k, &v)?;
    }
    let clusters = simulate_utd(&corpus, &cfg)?;
    let mut w = create(&a.out)?;
    write_clusters(&clusters, &mut w)?;
    w.flush()?;
    eprintln!("{} clusters over {} spans", clusters.clusters.len(), clusters.n_spans());
    Ok(())
}

fn train_cmd(a: TrainCmd) -> anyhow::Result<()> {
    let corpus = a.corpus.load()?;
    let mut model = ModelConfig::new(a.kind);
    let mut tc = TrainConfig {
        seed: a.seed,
        ..TrainConfig::default()
    };
    for (k, v) in &a.settings {
        match k.split_once('.') {
            Some(("model", key)) if key != "kind" => model.set(key, v)?,
            Some(("train", key)) => set_train(&mut tc, key, v)?,
            _ => bail!("unknown setting {k:?} (expected model.<key> or train.<key>)"),
        }
    }
    let trained = if let Some(path) = &a.clusters {
        let clusters = read_clusters(File::open(path).with_context(|| format!("opening {}", path.display()))?)?;
        train(&model, &tc, TrainData::Discovered {
            corpus: &corpus,
            clusters: &clusters,
            n_pairs: a.n_pairs,
        })?
    } else {
        match a.kind {
            ModelKind::Ae => train(&model, &tc, TrainData::Segments { corpus: &corpus })?,
            ModelKind::Cae | ModelKind::CaeLc => {
                let pairs = if a.n_pairs == 0 {
                    all_word_pairs(&corpus)
                } else {
                    sample_word_pairs(&corpus, a.n_pairs, a.seed)?
                };
                train(&model, &tc, TrainData::Pairs {
                    corpus: &corpus,
                    pairs: &pairs,
                })?
            }
            _ => {
                let vocab = Vocabulary::from_corpus(&corpus, model.vocab_cap)?;
                train(&model, &tc, TrainData::Labelled {
                    corpus: &corpus,
                    vocab: &vocab,
                })?
            }
        }
    };
    let mut w = create(&a.out)?;
    write_checkpoint(&mut w, &trained.model.to_checkpoint())?;
    w.flush()?;
    if let Some(log) = &a.log {
        let mut w = create(log)?;
        trained.log.write_tsv(&mut w)?;
        w.flush()?;
    }
    if let Some(loss) = trained.log.last_loss() {
        eprintln!("final loss {loss}");
    }
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<Model> {
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Model::from_checkpoint(&read_checkpoint(&mut f)?)?)
}

fn embed_cmd(a: EmbedCmd) -> anyhow::Result<()> {
    let full = read_corpus(&a.corpus.corpus)?;
    let ids: Vec<usize> = if a.corpus.languages.is_empty() {
        (0..full.len()).collect()
    } else {
        let mut ids: Vec<usize> = a
            .corpus
            .languages
            .iter()
            .map(|l| {
                full.language_index()
                    .get(l)
                    .cloned()
                    .ok_or_else(|| anyhow!("language {l} is not in the corpus"))
            })
            .collect::<anyhow::Result<Vec<_>>>()?
            .concat();
        ids.sort_unstable();
        ids
    };
    let frames: Vec<_> = ids.iter().map(|&i| full.segment(i).frames()).collect();
    let emb: Vec<Embedding> = match &a.model {
        Some(p) => load_model(p)?.embed_batch(&frames)?,
        None => frames
            .iter()
            .map(|f| downsample_frames(f, a.downsample))
            .collect::<awe_core::Result<_>>()?,
    };
    let mut w = create(&a.out)?;
    write_embeddings(&ids, &emb, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Embeddings and the metadata of the segments they belong to.
fn load_embedded(corpus: &Path, embeddings: &Path) -> anyhow::Result<(Corpus, Vec<usize>, Vec<Embedding>)> {
    let full = read_corpus(corpus)?;
    let (ids, emb) = read_embeddings(File::open(embeddings).with_context(|| format!("opening {}", embeddings.display()))?)?;
    if let Some(&bad) = ids.iter().find(|&&i| i >= full.len()) {
        bail!("embedding id {bad} is outside the corpus");
    }
    let sub = full.subset(&ids)?;
    Ok((sub, ids, emb))
}

fn report_samediff(r: &SameDiffResult, out: Option<&Path>, pr: Option<&Path>) -> anyhow::Result<()> {
    emit(out, |w| r.write_metrics(&mut Dyn(w)))?;
    if let Some(p) = pr {
        emit(Some(p), |w| r.write_pr_curve(&mut Dyn(w)))?;
    }
    Ok(())
}

fn eval_samediff(a: EvalSamediff) -> anyhow::Result<()> {
    let (sub, _, emb) = load_embedded(&a.corpus, &a.embeddings)?;
    let metas: Vec<_> = sub.segments().iter().map(|s| s.meta().clone()).collect();
    let r = samediff_ap(&emb, &metas, a.mode)?;
    report_samediff(&r, a.out.as_deref(), a.pr.as_deref())
}

fn eval_dtw(a: EvalDtw) -> anyhow::Result<()> {
    let corpus = a.corpus.load()?;
    let frames = corpus
        .segments()
        .iter()
        .map(|s| {
            if a.no_deltas {
                Ok(s.frames().clone())
            } else {
                append_deltas_frames(s.frames(), 2)
            }
        })
        .collect::<awe_core::Result<Vec<_>>>()?;
    let cfg = DtwConfig {
        normalize: !a.no_normalize,
    };
    let d = condensed_distances(frames.len(), |i, j| dtw_frames(&frames[i], &frames[j], cfg).unwrap_or(f64::NAN));
    let metas: Vec<_> = corpus.segments().iter().map(|s| s.meta().clone()).collect();
    let r = samediff_from_distances(&d, &metas, a.mode)?;
    report_samediff(&r, a.out.as_deref(), a.pr.as_deref())
}

fn probe_cmd(a: ProbeCmd) -> anyhow::Result<()> {
    let (sub, ids, emb) = load_embedded(&a.corpus, &a.embeddings)?;
    let metas: Vec<_> = sub.segments().iter().map(|s| s.meta()).collect();
    let report = match a.kind {
        ProbeKind::EditDistanceBins => {
            let bins = cosine_by_edit_distance(&sub, &emb, a.max_edit_bin)?;
            if let Some(out) = &a.out {
                let bins_path = out.with_extension("bins.tsv");
                emit(Some(&bins_path), |w| write_edit_distance_bins(&bins, &mut Dyn(w)))?;
            }
            ProbeReport::from_bins(&bins)
        }
        ProbeKind::DurationR2 => {
            let d: Vec<f64> = metas.iter().map(|m| m.duration_ms).collect();
            ProbeReport::from_regression(&fit_duration_regression(&emb, &d, a.seed)?)
        }
        ProbeKind::SpeakerAcc => {
            let labels: Vec<&str> = metas.iter().map(|m| m.speaker.as_str()).collect();
            ProbeReport::from_classifier(a.kind, &fit_linear_classifier(&emb, &labels, a.seed)?)
        }
        ProbeKind::LanguageAcc => {
            let labels: Vec<&str> = metas.iter().map(|m| m.language.as_str()).collect();
            ProbeReport::from_classifier(a.kind, &fit_linear_classifier(&emb, &labels, a.seed)?)
        }
    };
    emit(a.out.as_deref(), |w| report.write_tsv(&mut Dyn(w)))?;
    if let Some(p) = &a.pca {
        let coords = pca_2d(&emb)?;
        emit(Some(p), |w| write_pca(&ids, &coords, &mut Dyn(w)))?;
    }
    Ok(())
}

fn run_experiment_cmd(a: RunExperiment) -> anyhow::Result<()> {
    let mut settings = a.settings;
    if let Some(dir) = &a.output_dir {
        settings.push(("output_dir".into(), dir.display().to_string()));
    }
    let cfg = ExperimentConfig::from_file(&a.config, &settings).map_err(|e| e.in_stage("config"))?;
    let result = run_experiment(&cfg)?;
    for row in &result.ap {
        eprintln!(
            "{}\t{}\t{}\t{}\tAP {:.4}",
            row.system,
            row.training_languages.map_or("-".into(), |k| k.to_string()),
            row.condition.map_or("-".into(), |c| c.to_string()),
            row.language,
            row.result.ap
        );
    }
    eprintln!(
        "{} files listed in {}",
        result.manifest.entries.len(),
        cfg.output_dir.join("manifest.tsv").display()
    );
    Ok(())
}

fn run(cli: Cli) -> (&'static str, anyhow::Result<()>) {
    match cli.command {
        Command::GenCorpus(a) => ("gen-corpus", gen_corpus(a)),
        Command::SimulateUtd(a) => ("simulate-utd", simulate(a)),
        Command::Train(a) => ("train", train_cmd(a)),
        Command::Embed(a) => ("embed", embed_cmd(a)),
        Command::EvalSamediff(a) => ("eval-samediff", eval_samediff(a)),
        Command::EvalDtw(a) => ("eval-dtw", eval_dtw(a)),
        Command::Probe(a) => ("probe", probe_cmd(a)),
        Command::RunExperiment(a) => ("run-experiment", run_experiment_cmd(a)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: [threads] {e}");
            return ExitCode::FAILURE;
        }
    };
    let (name, result) = match with_threads(threads, || run(cli)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: [threads] {e}");
            return ExitCode::FAILURE;
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // experiment errors already carry their stage
            let tagged = e
                .downcast_ref::<awe_core::Error>()
                .and_then(|x| x.stage())
                .is_some();
            if tagged {
                eprintln!("error: {e:#}");
            } else {
                eprintln!("error: [{name}] {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}
