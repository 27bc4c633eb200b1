//! Embedding models built on the `nn` toolkit.
//!
//! Every model shares one encoder (GRU stack plus projection to the
//! embedding). Heads differ: a reconstruction decoder (AE, CAE, CAE with a
//! language embedding), a shared softmax, per-language softmax branches, or
//! nothing at all for the Siamese model. Only the encoder is used to embed.

mod losses;
mod mining;
mod train;
mod vocab;

pub use losses::{
    ae_loss, ae_loss_grad, cae_loss, cae_loss_grad, classifier_loss, classifier_loss_grad, contrastive_loss,
    contrastive_loss_grad, siamese_loss, siamese_loss_grad, softmax_cross_entropy,
};
pub use mining::{mine_semi_hard, Triplet};
pub use train::{train, EpochRecord, TrainConfig, TrainData, TrainedModel, TrainingLog};
pub use vocab::Vocabulary;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::Embedding;
use crate::matrix::Matrix;
use crate::nn::{zero_fill, Checkpoint, Decoder, Encoder, LanguageEmbeddingTable, Linear, Params};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Ae,
    Cae,
    CaeLc,
    Classifier,
    ClassifierBranched,
    Siamese,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Ae,
        ModelKind::Cae,
        ModelKind::CaeLc,
        ModelKind::Classifier,
        ModelKind::ClassifierBranched,
        ModelKind::Siamese,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ae => "ae",
            ModelKind::Cae => "cae",
            ModelKind::CaeLc => "cae_lc",
            ModelKind::Classifier => "classifier",
            ModelKind::ClassifierBranched => "classifier_branched",
            ModelKind::Siamese => "siamese",
        }
    }

    pub fn has_decoder(self) -> bool {
        matches!(self, ModelKind::Ae | ModelKind::Cae | ModelKind::CaeLc)
    }

    pub fn needs_classes(self) -> bool {
        matches!(self, ModelKind::Classifier | ModelKind::ClassifierBranched | ModelKind::Siamese)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model kind {s:?}")))
    }
}

/// Output non-linearity of the embedding projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EmbeddingActivation {
    #[default]
    Linear,
    Tanh,
}

impl FromStr for EmbeddingActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(EmbeddingActivation::Linear),
            "tanh" => Ok(EmbeddingActivation::Tanh),
            _ => Err(Error::InvalidConfig(format!("unknown embedding activation {s:?}"))),
        }
    }
}

impl fmt::Display for EmbeddingActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingActivation::Linear => "linear",
            EmbeddingActivation::Tanh => "tanh",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub encoder_layers: usize,
    pub encoder_units: usize,
    pub decoder_layers: usize,
    pub decoder_units: usize,
    pub embedding_dim: usize,
    pub margin: f64,
    pub language_dim: usize,
    pub vocab_cap: usize,
    /// Width of the hidden layer in each per-language classifier branch.
    pub branch_units: usize,
    pub activation: EmbeddingActivation,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            encoder_layers: 3,
            encoder_units: 400,
            decoder_layers: 3,
            decoder_units: 400,
            embedding_dim: 130,
            margin: 0.25,
            language_dim: 200,
            vocab_cap: 10_000,
            branch_units: 130,
            activation: EmbeddingActivation::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("encoder_layers", self.encoder_layers),
            ("encoder_units", self.encoder_units),
            ("decoder_layers", self.decoder_layers),
            ("decoder_units", self.decoder_units),
            ("embedding_dim", self.embedding_dim),
            ("language_dim", self.language_dim),
            ("vocab_cap", self.vocab_cap),
            ("branch_units", self.branch_units),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidConfig(format!("margin {} must be positive", self.margin)));
        }
        Ok(())
    }

    /// Sets one field from its textual form. `kind` is included.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "kind" => self.kind = value.parse()?,
            "encoder_layers" => self.encoder_layers = num(key, value)?,
            "encoder_units" => self.encoder_units = num(key, value)?,
            "decoder_layers" => self.decoder_layers = num(key, value)?,
            "decoder_units" => self.decoder_units = num(key, value)?,
            "embedding_dim" => self.embedding_dim = num(key, value)?,
            "margin" => self.margin = num(key, value)?,
            "language_dim" => self.language_dim = num(key, value)?,
            "vocab_cap" => self.vocab_cap = num(key, value)?,
            "branch_units" => self.branch_units = num(key, value)?,
            "activation" => self.activation = value.parse()?,
            _ => return Err(Error::InvalidConfig(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)`, inverse of [`ModelConfig::set`].
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("kind", self.kind.to_string()),
            ("encoder_layers", self.encoder_layers.to_string()),
            ("encoder_units", self.encoder_units.to_string()),
            ("decoder_layers", self.decoder_layers.to_string()),
            ("decoder_units", self.decoder_units.to_string()),
            ("embedding_dim", self.embedding_dim.to_string()),
            ("margin", self.margin.to_string()),
            ("language_dim", self.language_dim.to_string()),
            ("vocab_cap", self.vocab_cap.to_string()),
            ("branch_units", self.branch_units.to_string()),
            ("activation", self.activation.to_string()),
        ]
    }
}

/// Fully connected tanh layer followed by that language's softmax layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    None,
    Decoder {
        decoder: Decoder,
        languages: Option<LanguageEmbeddingTable>,
    },
    Softmax(Linear),
    Branched(Vec<Branch>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// Training languages, indexing language embeddings and branches.
    pub languages: Vec<String>,
    pub classes_per_language: Vec<usize>,
    pub encoder: Encoder,
    pub head: Head,
}

impl Model {
    /// Freshly initialised model. `classes_per_language` is ignored by
    /// models without a classification head.
    pub fn init(
        config: &ModelConfig,
        input_dim: usize,
        languages: &[String],
        classes_per_language: &[usize],
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::InvalidConfig("input dimension must be at least 1".into()));
        }
        let mut rng = rng_for(seed, "init");
        let m = config.embedding_dim;
        let encoder = Encoder::init(input_dim, config.encoder_units, config.encoder_layers, m, &mut rng);
        let head = match config.kind {
            ModelKind::Ae | ModelKind::Cae | ModelKind::CaeLc => {
                let lc = config.kind == ModelKind::CaeLc;
                if lc && languages.is_empty() {
                    return Err(Error::InvalidConfig("language conditioning needs training languages".into()));
                }
                let cond = if lc { m + config.language_dim } else { m };
                let decoder = Decoder::init(cond, config.decoder_units, config.decoder_layers, input_dim, &mut rng);
                let languages =
                    lc.then(|| LanguageEmbeddingTable::init(languages.len(), config.language_dim, &mut rng));
                Head::Decoder { decoder, languages }
            }
            ModelKind::Classifier => {
                let k: usize = classes_per_language.iter().sum();
                if k == 0 {
                    return Err(Error::InsufficientData("classifier needs at least one class".into()));
                }
                Head::Softmax(Linear::init(m, k, &mut rng))
            }
            ModelKind::ClassifierBranched => {
                if classes_per_language.len() != languages.len() || classes_per_language.contains(&0) {
                    return Err(Error::InsufficientData(
                        "every training language needs at least one class".into(),
                    ));
                }
                Head::Branched(
                    classes_per_language
                        .iter()
                        .map(|&k| Branch {
                            hidden: Linear::init(m, config.branch_units, &mut rng),
                            out: Linear::init(config.branch_units, k, &mut rng),
                        })
                        .collect(),
                )
            }
            ModelKind::Siamese => Head::None,
        };
        Ok(Model {
            config: config.clone(),
            languages: languages.to_vec(),
            classes_per_language: classes_per_language.to_vec(),
            encoder,
            head,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_size()
    }

    pub fn n_classes(&self) -> usize {
        self.classes_per_language.iter().sum()
    }

    /// Same structure with every value zero; the container for gradients.
    pub fn zeros_like(&self) -> Model {
        let mut g = self.clone();
        zero_fill(&mut g);
        g
    }

    pub fn language_index(&self, language: &str) -> Option<usize> {
        self.languages.iter().position(|l| l == language)
    }

    fn check_input(&self, frames: &Matrix) -> Result<()> {
        if frames.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "model expects {}-dim frames, got {}",
                self.input_dim(),
                frames.cols()
            )));
        }
        if frames.rows() == 0 {
            return Err(Error::Shape("empty segment".into()));
        }
        Ok(())
    }

    /// Embedding of a frame sequence. Heads play no part.
    pub fn embed(&self, frames: &Matrix) -> Result<Embedding> {
        self.check_input(frames)?;
        let mut z = self.encoder.embed(frames)?;
        if self.config.activation == EmbeddingActivation::Tanh {
            z.iter_mut().for_each(|v| *v = v.tanh());
        }
        Ok(Embedding(z))
    }

    /// Embeddings of many sequences, in input order.
    pub fn embed_batch(&self, frames: &[&Matrix]) -> Result<Vec<Embedding>> {
        frames.par_iter().map(|f| self.embed(f)).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut header: BTreeMap<String, String> =
            self.config.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        header.insert("input_dim".into(), self.input_dim().to_string());
        header.insert("languages".into(), self.languages.join(","));
        header.insert(
            "classes".into(),
            self.classes_per_language.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
        );
        Checkpoint::from_params(header, self)
    }

    /// Rebuilds the model a checkpoint was written from.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
        let get = |k: &str| {
            ckpt.header
                .get(k)
                .ok_or_else(|| Error::Format(format!("checkpoint header lacks {k}")))
        };
        let mut config = ModelConfig::new(ModelKind::Ae);
        for (k, _) in ModelConfig::new(ModelKind::Ae).entries() {
            config.set(k, get(k)?).map_err(|e| Error::Format(e.to_string()))?;
        }
        let input_dim: usize = get("input_dim")?
            .parse()
            .map_err(|_| Error::Format("bad input_dim".into()))?;
        let split = |s: &str| -> Vec<String> {
            s.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect()
        };
        let languages = split(get("languages")?);
        let classes = split(get("classes")?)
            .iter()
            .map(|c| c.parse().map_err(|_| Error::Format(format!("bad class count {c:?}"))))
            .collect::<Result<Vec<usize>>>()?;
        let mut model = Model::init(&config, input_dim, &languages, &classes, 0)?;
        ckpt.load_into(&mut model)?;
        Ok(model)
    }
}

impl Params for Branch {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        self.hidden.visit(&crate::nn::join(prefix, "hidden"), f);
        self.out.visit(&crate::nn::join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.hidden.visit_mut(&crate::nn::join(prefix, "hidden"), f);
        self.out.visit_mut(&crate::nn::join(prefix, "out"), f);
    }
}

impl Params for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[f64])) {
        use crate::nn::join;
        self.encoder.visit(&join(prefix, "encoder"), f);
        match &self.head {
            Head::None => {}
            Head::Decoder { decoder, languages } => {
                decoder.visit(&join(prefix, "decoder"), f);
                if let Some(t) = languages {
                    t.visit(&join(prefix, "language_embedding"), f);
                }
            }
            Head::Softmax(l) => l.visit(&join(prefix, "softmax"), f),
            Head::Branched(bs) => {
                for (i, b) in bs.iter().enumerate() {
                    b.visit(&join(prefix, &format!("branch{i}")), f);
                }
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        use crate::nn::join;
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        match &mut self.head {
            Head::None => {}
            Head::Decoder { decoder, languages } => {
                decoder.visit_mut(&join(prefix, "decoder"), f);
                if let Some(t) = languages {
                    t.visit_mut(&join(prefix, "language_embedding"), f);
                }
            }
            Head::Softmax(l) => l.visit_mut(&join(prefix, "softmax"), f),
            Head::Branched(bs) => {
                for (i, b) in bs.iter_mut().enumerate() {
                    b.visit_mut(&join(prefix, &format!("branch{i}")), f);
                }
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::rng::SplitMix64;
    use rand::Rng;

    pub fn tiny_config(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            encoder_layers: 2,
            encoder_units: 5,
            decoder_layers: 2,
            decoder_units: 4,
            embedding_dim: 3,
            language_dim: 2,
            branch_units: 4,
            ..ModelConfig::new(kind)
        }
    }

    /// Every parameter uniform in ±1, so no block starts degenerate.
    pub fn randomize<P: Params>(p: &mut P, rng: &mut SplitMix64) {
        p.visit_mut("", &mut |_, v| v.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0)));
    }

    /// 2 to 7 frames.
    pub fn short_frames(rng: &mut SplitMix64, d: usize) -> Matrix {
        let t = rng.random_range(2..=7);
        frames(rng, t, d)
    }

    pub fn frames(rng: &mut SplitMix64, t: usize, d: usize) -> Matrix {
        Matrix::from_vec(t, d, (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::nn::param_count;

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = crate::rng::SplitMix64::new(9);
        for kind in ModelKind::ALL {
            let cfg = ModelConfig {
                activation: EmbeddingActivation::Tanh,
                ..tiny_config(kind)
            };
            let langs = vec!["L0".to_string(), "L1".to_string()];
            let mut m = Model::init(&cfg, 3, &langs, &[2, 3], 1).unwrap();
            randomize(&mut m, &mut rng);
            let mut bytes = Vec::new();
            crate::nn::write_checkpoint(&mut bytes, &m.to_checkpoint()).unwrap();
            let back = crate::nn::read_checkpoint(&mut bytes.as_slice()).unwrap();
            assert_eq!(Model::from_checkpoint(&back).unwrap(), m);
        }
    }

    #[test]
    fn config_entries_round_trip() {
        let cfg = ModelConfig {
            margin: 0.4,
            ..tiny_config(ModelKind::CaeLc)
        };
        let mut back = ModelConfig::new(ModelKind::Ae);
        for (k, v) in cfg.entries() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        assert!(back.set("units", "3").is_err());
        assert!(back.set("margin", "wide").is_err());
    }

    #[test]
    fn kinds_round_trip_through_names() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("cnn".parse::<ModelKind>().is_err());
    }

    #[test]
    fn heads_match_kind() {
        let langs = vec!["A".to_string(), "B".to_string()];
        for k in ModelKind::ALL {
            let m = Model::init(&tiny_config(k), 4, &langs, &[3, 2], 7).unwrap();
            let n_head = param_count(&m) - param_count(&m.encoder);
            match k {
                ModelKind::Siamese => assert_eq!(n_head, 0),
                ModelKind::Classifier => assert_eq!(n_head, 3 * 5 + 5),
                ModelKind::ClassifierBranched => assert_eq!(n_head, (3 * 4 + 4) * 2 + (4 * 3 + 3) + (4 * 2 + 2)),
                _ => assert!(n_head > 0),
            }
            assert!(matches!(m.head, Head::Decoder { languages: Some(_), .. }) == (k == ModelKind::CaeLc));
        }
    }

    #[test]
    fn init_is_deterministic_and_validated() {
        let cfg = tiny_config(ModelKind::Cae);
        let a = Model::init(&cfg, 4, &[], &[], 3).unwrap();
        assert_eq!(a, Model::init(&cfg, 4, &[], &[], 3).unwrap());
        assert_ne!(a, Model::init(&cfg, 4, &[], &[], 4).unwrap());
        let bad = ModelConfig {
            margin: 0.0,
            ..cfg.clone()
        };
        assert!(Model::init(&bad, 4, &[], &[], 3).is_err());
        assert!(Model::init(&tiny_config(ModelKind::CaeLc), 4, &[], &[], 3).is_err());
    }

    #[test]
    fn embedding_is_head_free_and_batchable() {
        let mut rng = crate::rng::SplitMix64::new(9);
        let langs = vec!["A".to_string()];
        let m = Model::init(&tiny_config(ModelKind::Classifier), 4, &langs, &[5], 1).unwrap();
        let xs: Vec<Matrix> = (2..8).map(|t| frames(&mut rng, t, 4)).collect();
        let refs: Vec<&Matrix> = xs.iter().collect();
        let batch = m.embed_batch(&refs).unwrap();
        for (x, z) in xs.iter().zip(&batch) {
            assert_eq!(&m.embed(x).unwrap(), z);
            assert_eq!(z.dim(), 3);
        }
        let mut other = m.clone();
        other.head = Head::None;
        assert_eq!(other.embed(&xs[0]).unwrap(), batch[0]);
        assert!(m.embed(&frames(&mut rng, 3, 5)).is_err());
    }
}
