use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::losses::{classifier_example, reconstruction_example, siamese_loss_grad, sum_in_order};
use super::{Model, ModelConfig, ModelKind, Vocabulary};
use crate::corpus::{Corpus, DiscoveredClusters, PairList};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{adam_step, AdamConfig, AdamState};
use crate::rng::{rng_for, SplitMix64};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Segments per classifier / autoencoder batch.
    pub batch_size: usize,
    /// Directed pairs per correspondence-autoencoder batch.
    pub pair_batch_size: usize,
    pub epochs: usize,
    /// Autoencoder epochs run before correspondence training.
    pub ae_pretrain_epochs: usize,
    /// Word types per Siamese batch (P).
    pub siamese_classes: usize,
    /// Instances per word type in a Siamese batch (K).
    pub siamese_instances: usize,
    pub seed: u64,
    /// Record real elapsed time in the log; off keeps logs reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 64,
            pair_batch_size: 32,
            epochs: 25,
            ae_pretrain_epochs: 0,
            siamese_classes: 8,
            siamese_instances: 4,
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.pair_batch_size == 0 {
            return Err(Error::InvalidConfig("batch sizes must be at least 1".into()));
        }
        if self.siamese_classes < 2 || self.siamese_instances < 2 {
            return Err(Error::InvalidConfig(
                "Siamese batches need at least 2 word types of at least 2 instances".into(),
            ));
        }
        Ok(())
    }
}

/// What a model is trained on.
#[derive(Clone, Copy, Debug)]
pub enum TrainData<'a> {
    /// Segments whose word type is in the vocabulary, with those classes.
    Labelled { corpus: &'a Corpus, vocab: &'a Vocabulary },
    /// Same-type segment pairs without class labels.
    Pairs { corpus: &'a Corpus, pairs: &'a PairList },
    /// Output of term discovery: spans cut from the segments, labelled with
    /// their cluster; pairs are within-cluster pairs, at most `n_pairs` of
    /// them (0 = all).
    Discovered {
        corpus: &'a Corpus,
        clusters: &'a DiscoveredClusters,
        n_pairs: usize,
    },
    /// Unlabelled segments.
    Segments { corpus: &'a Corpus },
}

struct Item {
    frames: Matrix,
    class: Option<usize>,
    language: usize,
}

struct TrainingSet {
    languages: Vec<String>,
    vocab: Option<Vocabulary>,
    items: Vec<Item>,
    pairs: Vec<(usize, usize)>,
}

fn within_class_pairs(items: &[Item]) -> Vec<(usize, usize)> {
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, it) in items.iter().enumerate() {
        if let Some(c) = it.class {
            by_class.entry(c).or_default().push(i);
        }
    }
    let mut pairs = Vec::new();
    for ids in by_class.values() {
        for a in 0..ids.len() {
            for b in a + 1..ids.len() {
                pairs.push((ids[a], ids[b]));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

fn language_of(languages: &[String], name: &str) -> Result<usize> {
    languages
        .iter()
        .position(|l| l == name)
        .ok_or_else(|| Error::InvalidInput(format!("language {name} not among training languages")))
}

impl TrainingSet {
    fn build(data: TrainData<'_>, seed: u64) -> Result<Self> {
        match data {
            TrainData::Labelled { corpus, vocab } => {
                let languages = vocab.languages().to_vec();
                let mut items = Vec::new();
                for seg in corpus.segments() {
                    if let Some(c) = vocab.class_of(&seg.meta().word_key()) {
                        items.push(Item {
                            frames: seg.frames().clone(),
                            class: Some(c),
                            language: language_of(&languages, &seg.meta().language)?,
                        });
                    }
                }
                let pairs = within_class_pairs(&items);
                Ok(TrainingSet {
                    languages,
                    vocab: Some(vocab.clone()),
                    items,
                    pairs,
                })
            }
            TrainData::Pairs { corpus, pairs } => {
                pairs.validate(corpus)?;
                let languages = corpus.languages().to_vec();
                let items = corpus
                    .segments()
                    .iter()
                    .map(|s| {
                        Ok(Item {
                            frames: s.frames().clone(),
                            class: None,
                            language: language_of(&languages, &s.meta().language)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(TrainingSet {
                    languages,
                    vocab: None,
                    items,
                    pairs: pairs.pairs.clone(),
                })
            }
            TrainData::Discovered {
                corpus,
                clusters,
                n_pairs,
            } => {
                clusters.validate(corpus)?;
                if corpus.languages().len() != 1 {
                    return Err(Error::InvalidInput("discovered clusters come from one language".into()));
                }
                let languages = corpus.languages().to_vec();
                let vocab = Vocabulary::from_labels(vec![(
                    languages[0].clone(),
                    clusters.clusters.iter().map(|c| c.label.clone()).collect(),
                )])?;
                let items: Vec<Item> = clusters
                    .assignments()
                    .into_iter()
                    .map(|(seg, (cluster, span))| Item {
                        frames: corpus.segment(seg).frames().slice_rows(span.start, span.end),
                        class: Some(cluster),
                        language: 0,
                    })
                    .collect();
                let mut pairs = within_class_pairs(&items);
                if n_pairs > 0 && n_pairs < pairs.len() {
                    let mut rng = rng_for(seed, "discovered-pairs");
                    pairs.shuffle(&mut rng);
                    pairs.truncate(n_pairs);
                    pairs.sort_unstable();
                }
                Ok(TrainingSet {
                    languages,
                    vocab: Some(vocab),
                    items,
                    pairs,
                })
            }
            TrainData::Segments { corpus } => {
                let languages = corpus.languages().to_vec();
                let items = corpus
                    .segments()
                    .iter()
                    .map(|s| {
                        Ok(Item {
                            frames: s.frames().clone(),
                            class: None,
                            language: language_of(&languages, &s.meta().language)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(TrainingSet {
                    languages,
                    vocab: None,
                    items,
                    pairs: Vec::new(),
                })
            }
        }
    }

    fn dim(&self) -> Result<usize> {
        self.items
            .first()
            .map(|i| i.frames.cols())
            .ok_or_else(|| Error::InsufficientData("no training segments".into()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// "pretrain" for autoencoder pretraining, "train" otherwise.
    pub phase: &'static str,
    pub loss: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    /// `epoch  loss  wall_ms`, pretraining epochs first.
    pub fn write_tsv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "epoch\tloss\twall_ms")?;
        for r in &self.records {
            writeln!(w, "{}\t{}\t{}", r.epoch, r.loss, r.wall_ms)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Model,
    pub log: TrainingLog,
}

#[derive(Clone, Copy)]
enum Example {
    Classify(usize),
    Reconstruct { input: usize, target: usize },
}

/// Examples per gradient chunk. Chunks are summed in order, so results do
/// not depend on how many threads process them.
const CHUNK: usize = 8;

struct Trainer<'a> {
    set: &'a TrainingSet,
    model: Model,
    adam: AdamState,
    adam_cfg: AdamConfig,
    rng: SplitMix64,
}

impl Trainer<'_> {
    fn example_loss(&self, ex: Example, grads: &mut Model, scale: f64) -> Result<f64> {
        let lang = |i: usize| (self.model.kind() == ModelKind::CaeLc).then_some(self.set.items[i].language);
        match ex {
            Example::Classify(i) => {
                let item = &self.set.items[i];
                let vocab = self.set.vocab.as_ref().expect("classes present");
                classifier_example(&self.model, &item.frames, item.class.expect("labelled"), vocab, Some((grads, scale)))
            }
            Example::Reconstruct { input, target } => reconstruction_example(
                &self.model,
                &self.set.items[input].frames,
                &self.set.items[target].frames,
                lang(input),
                Some((grads, scale)),
            ),
        }
    }

    fn step(&mut self, batch: &[Example]) -> Result<f64> {
        let scale = 1.0 / batch.len() as f64;
        let parts: Vec<(f64, Model)> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = self.model.zeros_like();
                let mut loss = 0.0;
                for &ex in chunk {
                    loss += self.example_loss(ex, &mut g, scale)?;
                }
                Ok((loss, g))
            })
            .collect::<Result<_>>()?;
        let loss: f64 = parts.iter().map(|p| p.0).sum::<f64>() * scale;
        let grads: Vec<Model> = parts.into_iter().map(|p| p.1).collect();
        let total = sum_in_order(&self.model, &grads);
        self.apply(&total, loss)
    }

    fn apply(&mut self, grads: &Model, loss: f64) -> Result<f64> {
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {loss}")));
        }
        adam_step(&mut self.model, grads, &mut self.adam, &self.adam_cfg)?;
        Ok(loss)
    }

    fn epoch(&mut self, examples: &mut [Example], batch_size: usize) -> Result<f64> {
        examples.shuffle(&mut self.rng);
        let mut total = 0.0;
        for batch in examples.chunks(batch_size) {
            total += self.step(batch)? * batch.len() as f64;
        }
        Ok(total / examples.len() as f64)
    }

    fn siamese_epoch(&mut self, by_class: &[Vec<usize>], p: usize, k: usize) -> Result<f64> {
        let mut classes: Vec<usize> = (0..by_class.len()).collect();
        classes.shuffle(&mut self.rng);
        let n_batches = (classes.len() / p).max(1);
        let mut total = 0.0;
        for b in 0..n_batches {
            let end = if b + 1 == n_batches { classes.len() } else { (b + 1) * p };
            let mut frames = Vec::new();
            let mut labels = Vec::new();
            for &c in &classes[b * p..end] {
                let mut members = by_class[c].clone();
                members.shuffle(&mut self.rng);
                for &i in members.iter().take(k) {
                    frames.push(&self.set.items[i].frames);
                    labels.push(c);
                }
            }
            let (loss, grads) = siamese_loss_grad(&self.model, &frames, &labels)?;
            total += self.apply(&grads, loss)?;
        }
        Ok(total / n_batches as f64)
    }
}

/// Trains a freshly initialised model. Everything random (initialisation,
/// shuffling, Siamese batch composition) derives from `train.seed`.
pub fn train(config: &ModelConfig, train: &TrainConfig, data: TrainData<'_>) -> Result<TrainedModel> {
    config.validate()?;
    train.validate()?;
    let set = TrainingSet::build(data, train.seed)?;
    let kind = config.kind;
    if kind.needs_classes() && set.vocab.is_none() {
        return Err(Error::InvalidInput(format!("{kind} training needs class or cluster labels")));
    }
    if matches!(kind, ModelKind::Cae | ModelKind::CaeLc) && set.pairs.is_empty() {
        return Err(Error::InsufficientData(format!("{kind} training needs at least one pair")));
    }
    let classes = set.vocab.as_ref().map(|v| v.classes_per_language()).unwrap_or_default();
    let model = Model::init(config, set.dim()?, &set.languages, &classes, train.seed)?;
    let by_class: Vec<Vec<usize>> = if kind == ModelKind::Siamese {
        let mut groups = vec![Vec::new(); model.n_classes()];
        for (i, it) in set.items.iter().enumerate() {
            groups[it.class.expect("labelled")].push(i);
        }
        let eligible: Vec<Vec<usize>> = groups.into_iter().filter(|g| g.len() >= 2).collect();
        if eligible.len() < 2 {
            return Err(Error::InsufficientData(
                "Siamese training needs two word types with two or more instances".into(),
            ));
        }
        eligible
    } else {
        Vec::new()
    };

    let mut trainer = Trainer {
        adam: AdamState::new(&model),
        adam_cfg: AdamConfig {
            lr: train.lr,
            ..AdamConfig::default()
        },
        model,
        set: &set,
        rng: rng_for(train.seed, "batches"),
    };
    let mut log = TrainingLog::default();
    let mut record = |phase: &'static str, loss: f64, started: Instant| {
        let wall_ms = if train.record_wall_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        log.records.push(EpochRecord {
            epoch: log.records.len() + 1,
            phase,
            loss,
            wall_ms,
        });
    };

    let n = set.items.len();
    if matches!(kind, ModelKind::Cae | ModelKind::CaeLc) {
        let mut ae: Vec<Example> = (0..n).map(|i| Example::Reconstruct { input: i, target: i }).collect();
        for _ in 0..train.ae_pretrain_epochs {
            let t = Instant::now();
            let loss = trainer.epoch(&mut ae, train.batch_size)?;
            record("pretrain", loss, t);
        }
    }
    let mut examples: Vec<Example> = match kind {
        ModelKind::Ae => (0..n).map(|i| Example::Reconstruct { input: i, target: i }).collect(),
        ModelKind::Cae | ModelKind::CaeLc => set
            .pairs
            .iter()
            .flat_map(|&(a, b)| {
                [
                    Example::Reconstruct { input: a, target: b },
                    Example::Reconstruct { input: b, target: a },
                ]
            })
            .collect(),
        ModelKind::Classifier | ModelKind::ClassifierBranched => (0..n).map(Example::Classify).collect(),
        ModelKind::Siamese => Vec::new(),
    };
    let batch_size = if matches!(kind, ModelKind::Cae | ModelKind::CaeLc) {
        train.pair_batch_size
    } else {
        train.batch_size
    };
    if examples.is_empty() && kind != ModelKind::Siamese && train.epochs > 0 {
        return Err(Error::InsufficientData("no training examples".into()));
    }
    for _ in 0..train.epochs {
        let t = Instant::now();
        let loss = if kind == ModelKind::Siamese {
            trainer.siamese_epoch(&by_class, train.siamese_classes, train.siamese_instances)?
        } else {
            trainer.epoch(&mut examples, batch_size)?
        };
        record("train", loss, t);
    }
    Ok(TrainedModel {
        model: trainer.model,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{all_word_pairs, simulate_utd, CorruptionConfig, SyntheticSpec, SyntheticWorld};
    use crate::models::testutil::tiny_config;

    fn small_corpus(seed: u64) -> Corpus {
        let spec = SyntheticSpec {
            n_languages: 1,
            vocab_size_per_language: 4,
            speakers_per_language: 2,
            instances_per_word: 4,
            word_length_range: (2, 3),
            frames_per_phone_range: (2, 3),
            dim: 3,
            seed,
            ..SyntheticSpec::default()
        };
        SyntheticWorld::new(&spec).unwrap().corpus().unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            lr: 0.01,
            batch_size: 4,
            pair_batch_size: 4,
            epochs,
            siamese_classes: 2,
            siamese_instances: 2,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_return_the_initialisation() {
        let c = small_corpus(1);
        let vocab = Vocabulary::from_corpus(&c, 100).unwrap();
        let cfg = tiny_config(ModelKind::Classifier);
        let t = train(&cfg, &quick(0), TrainData::Labelled { corpus: &c, vocab: &vocab }).unwrap();
        let init = Model::init(&cfg, 3, c.languages(), &vocab.classes_per_language(), 5).unwrap();
        assert_eq!(t.model, init);
        assert!(t.log.records.is_empty());
    }

    #[test]
    fn data_must_fit_the_model_kind() {
        let c = small_corpus(1);
        let pairs = all_word_pairs(&c);
        assert!(train(&tiny_config(ModelKind::Classifier), &quick(1), TrainData::Pairs { corpus: &c, pairs: &pairs }).is_err());
        assert!(train(&tiny_config(ModelKind::Cae), &quick(1), TrainData::Segments { corpus: &c }).is_err());
        assert!(train(&tiny_config(ModelKind::Siamese), &quick(1), TrainData::Segments { corpus: &c }).is_err());
        assert!(train(&tiny_config(ModelKind::Ae), &quick(1), TrainData::Segments { corpus: &c }).is_ok());
    }

    #[test]
    fn training_is_deterministic_and_logs_every_epoch() {
        let c = small_corpus(2);
        let pairs = all_word_pairs(&c);
        let cfg = tiny_config(ModelKind::Cae);
        let tc = TrainConfig {
            ae_pretrain_epochs: 2,
            ..quick(3)
        };
        let a = train(&cfg, &tc, TrainData::Pairs { corpus: &c, pairs: &pairs }).unwrap();
        let b = train(&cfg, &tc, TrainData::Pairs { corpus: &c, pairs: &pairs }).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.records.len(), 5);
        assert_eq!(a.log.records[0].phase, "pretrain");
        assert!(a.log.records.iter().all(|r| r.loss.is_finite() && r.wall_ms == 0));
        let mut out = Vec::new();
        a.log.write_tsv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("epoch\tloss\twall_ms\n1\t"));
    }

    #[test]
    fn clean_discovery_trains_exactly_like_supervision() {
        let c = small_corpus(3);
        let clean = CorruptionConfig {
            label_error_rate: 0.0,
            boundary_jitter_frames: 0,
            ..CorruptionConfig::default()
        };
        let clusters = simulate_utd(&c, &clean).unwrap();
        let vocab = Vocabulary::from_corpus(&c, 10_000).unwrap();
        let pairs = all_word_pairs(&c);
        for kind in [ModelKind::Classifier, ModelKind::Siamese, ModelKind::Cae] {
            let cfg = tiny_config(kind);
            let utd = train(&cfg, &quick(2), TrainData::Discovered { corpus: &c, clusters: &clusters, n_pairs: 0 }).unwrap();
            let sup = if kind == ModelKind::Cae {
                train(&cfg, &quick(2), TrainData::Pairs { corpus: &c, pairs: &pairs }).unwrap()
            } else {
                train(&cfg, &quick(2), TrainData::Labelled { corpus: &c, vocab: &vocab }).unwrap()
            };
            assert_eq!(utd.log, sup.log, "{kind}");
            assert_eq!(utd.model.encoder, sup.model.encoder, "{kind}");
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let c = small_corpus(4);
        let vocab = Vocabulary::from_corpus(&c, 100).unwrap();
        let cfg = tiny_config(ModelKind::ClassifierBranched);
        let tc = TrainConfig {
            batch_size: 16,
            ..quick(2)
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| train(&cfg, &tc, TrainData::Labelled { corpus: &c, vocab: &vocab }).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.model, b.model);
    }
}
