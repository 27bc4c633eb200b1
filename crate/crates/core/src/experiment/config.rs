//! Experiment configuration: flat `key = value` lines grouped under
//! `[section]` headers, `#` comments, comma-separated lists.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::{CorruptionConfig, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::SameDiffMode;
use crate::models::{ModelConfig, ModelKind, TrainConfig};
use crate::probe::ProbeKind;

/// Parsed text: sections in file order, each with its entries in order.
/// Top-level keys live in the section named "".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ini {
    pub sections: Vec<(String, Vec<(String, String)>)>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Ini> {
        let mut ini = Ini {
            sections: vec![(String::new(), Vec::new())],
        };
        for (n, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| Error::InvalidConfig(format!("line {}: {msg}", n + 1));
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err("unterminated section header"))?.trim();
                if name.is_empty() {
                    return Err(err("empty section name"));
                }
                if ini.sections.iter().any(|(s, _)| s == name) {
                    return Err(err(&format!("section [{name}] repeated")));
                }
                ini.sections.push((name.to_string(), Vec::new()));
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(err("empty key"));
            }
            let section = ini.sections.last_mut().expect("top-level section");
            if section.1.iter().any(|(x, _)| x == k) {
                return Err(err(&format!("key {k} repeated")));
            }
            section.1.push((k.to_string(), v.to_string()));
        }
        Ok(ini)
    }

    /// Sets `section.key` (or a top-level `key`), replacing any value.
    pub fn set(&mut self, dotted: &str, value: &str) -> Result<()> {
        let (section, key) = match dotted.rsplit_once('.') {
            Some((s, k)) if !k.is_empty() => (s, k),
            _ => ("", dotted),
        };
        if key.is_empty() {
            return Err(Error::InvalidConfig(format!("bad override key {dotted:?}")));
        }
        let idx = match self.sections.iter().position(|(s, _)| s == section) {
            Some(i) => i,
            None => {
                self.sections.push((section.to_string(), Vec::new()));
                self.sections.len() - 1
            }
        };
        let entries = &mut self.sections[idx].1;
        match entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value.to_string(),
            None => entries.push((key.to_string(), value.to_string())),
        }
        Ok(())
    }

    pub fn section(&self, name: &str) -> Option<&[(String, String)]> {
        self.sections.iter().find(|(s, _)| s == name).map(|(_, e)| e.as_slice())
    }
}

pub fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_range(key: &str, value: &str) -> Result<(usize, usize)> {
    let parts = parse_list(value);
    match parts.as_slice() {
        [a, b] => Ok((parse_value(key, a)?, parse_value(key, b)?)),
        _ => Err(Error::InvalidConfig(format!("{key}: expected min, max"))),
    }
}

pub fn set_synthetic(spec: &mut SyntheticSpec, key: &str, value: &str) -> Result<()> {
    match key {
        "n_languages" => spec.n_languages = parse_value(key, value)?,
        "shared_phone_pool" => spec.shared_phone_pool = parse_value(key, value)?,
        "phones_per_language" => spec.phones_per_language = parse_value(key, value)?,
        "vocab_size_per_language" => spec.vocab_size_per_language = parse_value(key, value)?,
        "word_length_range" => spec.word_length_range = parse_range(key, value)?,
        "speakers_per_language" => spec.speakers_per_language = parse_value(key, value)?,
        "instances_per_word" => spec.instances_per_word = parse_value(key, value)?,
        "frames_per_phone_range" => spec.frames_per_phone_range = parse_range(key, value)?,
        "speaker_shift_scale" => spec.speaker_shift_scale = parse_value(key, value)?,
        "noise_scale" => spec.noise_scale = parse_value(key, value)?,
        "channel_scale" => spec.channel_scale = parse_value(key, value)?,
        "gain_scale" => spec.gain_scale = parse_value(key, value)?,
        "dim" => spec.dim = parse_value(key, value)?,
        "seed" => spec.seed = parse_value(key, value)?,
        _ => return Err(Error::InvalidConfig(format!("unknown corpus key {key:?}"))),
    }
    Ok(())
}

pub fn set_corruption(cfg: &mut CorruptionConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "label_error_rate" => cfg.label_error_rate = parse_value(key, value)?,
        "boundary_jitter_frames" => cfg.boundary_jitter_frames = parse_value(key, value)?,
        "n_pairs" => cfg.n_pairs = parse_value(key, value)?,
        "fix_boundaries" => cfg.fix_boundaries = parse_bool(key, value)?,
        "fix_labels" => cfg.fix_labels = parse_bool(key, value)?,
        "seed" => cfg.seed = parse_value(key, value)?,
        _ => return Err(Error::InvalidConfig(format!("unknown utd key {key:?}"))),
    }
    Ok(())
}

pub fn set_train(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "lr" => cfg.lr = parse_value(key, value)?,
        "batch_size" => cfg.batch_size = parse_value(key, value)?,
        "pair_batch_size" => cfg.pair_batch_size = parse_value(key, value)?,
        "epochs" => cfg.epochs = parse_value(key, value)?,
        "ae_pretrain_epochs" => cfg.ae_pretrain_epochs = parse_value(key, value)?,
        "siamese_classes" => cfg.siamese_classes = parse_value(key, value)?,
        "siamese_instances" => cfg.siamese_instances = parse_value(key, value)?,
        "seed" => cfg.seed = parse_value(key, value)?,
        "record_wall_time" => cfg.record_wall_time = parse_bool(key, value)?,
        _ => return Err(Error::InvalidConfig(format!("unknown train key {key:?}"))),
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Train once on the pooled training languages, test on each
    /// zero-resource language.
    Transfer,
    /// Repeat supervised training on the first k training languages for
    /// every ladder size k.
    LanguageLadder,
    /// Repeat unsupervised training under each noise condition.
    NoiseLadder,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Transfer => "transfer",
            Mode::LanguageLadder => "language_ladder",
            Mode::NoiseLadder => "noise_ladder",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transfer" => Ok(Mode::Transfer),
            "language_ladder" => Ok(Mode::LanguageLadder),
            "noise_ladder" => Ok(Mode::NoiseLadder),
            _ => Err(Error::InvalidConfig(format!("unknown mode {s:?}"))),
        }
    }
}

/// Which parts of the discovery noise are undone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseCondition {
    Raw,
    FixedBoundaries,
    FixedLabels,
    BothFixed,
}

impl NoiseCondition {
    pub const ALL: [NoiseCondition; 4] = [
        NoiseCondition::Raw,
        NoiseCondition::FixedBoundaries,
        NoiseCondition::FixedLabels,
        NoiseCondition::BothFixed,
    ];

    pub fn apply(self, cfg: &CorruptionConfig) -> CorruptionConfig {
        let (fix_boundaries, fix_labels) = match self {
            NoiseCondition::Raw => (false, false),
            NoiseCondition::FixedBoundaries => (true, false),
            NoiseCondition::FixedLabels => (false, true),
            NoiseCondition::BothFixed => (true, true),
        };
        CorruptionConfig {
            fix_boundaries: cfg.fix_boundaries || fix_boundaries,
            fix_labels: cfg.fix_labels || fix_labels,
            ..cfg.clone()
        }
    }
}

impl fmt::Display for NoiseCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseCondition::Raw => "raw",
            NoiseCondition::FixedBoundaries => "fixed_boundaries",
            NoiseCondition::FixedLabels => "fixed_labels",
            NoiseCondition::BothFixed => "both_fixed",
        })
    }
}

impl FromStr for NoiseCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseCondition::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown noise condition {s:?}")))
    }
}

/// An embedder or distance under evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum System {
    Downsample,
    Dtw,
    /// Trained on labelled data from the training languages.
    Supervised(ModelKind),
    /// Trained on simulated discovery output of the zero-resource language.
    Utd(ModelKind),
}

impl System {
    pub fn model_kind(self) -> Option<ModelKind> {
        match self {
            System::Supervised(k) | System::Utd(k) => Some(k),
            _ => None,
        }
    }

    pub fn is_trained(self) -> bool {
        self.model_kind().is_some()
    }

    pub fn has_embeddings(self) -> bool {
        self != System::Dtw
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            System::Downsample => f.write_str("downsample"),
            System::Dtw => f.write_str("dtw"),
            System::Supervised(k) => write!(f, "{k}"),
            System::Utd(k) => write!(f, "{k}_utd"),
        }
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "downsample" => return Ok(System::Downsample),
            "dtw" => return Ok(System::Dtw),
            _ => {}
        }
        if let Some(base) = s.strip_suffix("_utd") {
            let kind: ModelKind = base.parse()?;
            return match kind {
                ModelKind::Ae | ModelKind::Cae | ModelKind::Classifier | ModelKind::Siamese => {
                    Ok(System::Utd(kind))
                }
                _ => Err(Error::InvalidConfig(format!("{s}: no discovery-trained variant of {kind}"))),
            };
        }
        let kind: ModelKind = s.parse()?;
        if kind == ModelKind::Ae {
            return Err(Error::InvalidConfig("ae is only available as ae_utd".into()));
        }
        Ok(System::Supervised(kind))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CorpusSource {
    Synthetic(SyntheticSpec),
    Path(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    pub system: System,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub mode: SameDiffMode,
    pub downsample_frames: usize,
    pub dtw_normalize: bool,
    pub dtw_deltas: bool,
    pub pr_curves: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: SameDiffMode::CrossSpeaker,
            downsample_frames: 10,
            dtw_normalize: true,
            dtw_deltas: true,
            pr_curves: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub kinds: Vec<ProbeKind>,
    /// Systems whose embeddings are probed; empty means every embedder.
    pub systems: Vec<System>,
    pub max_edit_bin: usize,
    pub pca: bool,
    pub trigrams: usize,
    pub trigram_repeats: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            kinds: Vec::new(),
            systems: Vec::new(),
            max_edit_bin: 6,
            pca: false,
            trigrams: 25,
            trigram_repeats: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub mode: Mode,
    pub output_dir: PathBuf,
    pub save_models: bool,
    pub corpus: CorpusSource,
    pub training_languages: Vec<String>,
    pub zero_resource_languages: Vec<String>,
    /// Share of each zero-resource language's speakers whose speech feeds
    /// term discovery; the rest is the test set.
    pub utd_fraction: f64,
    pub systems: Vec<SystemConfig>,
    /// Supervised correspondence pairs to sample (0 = every same-word pair).
    pub n_pairs: usize,
    pub utd: CorruptionConfig,
    pub eval: EvalConfig,
    pub ladder: Vec<usize>,
    pub noise: Vec<NoiseCondition>,
    pub probe: ProbeConfig,
}

const TOP_KEYS: &[&str] = &["name", "seed", "mode", "output_dir", "save_models"];

impl ExperimentConfig {
    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut ini = Ini::parse(text)?;
        for (k, v) in overrides {
            ini.set(k, v)?;
        }
        Self::from_ini(&ini)
    }

    pub fn from_ini(ini: &Ini) -> Result<Self> {
        let known_sections = ["", "corpus", "languages", "systems", "model", "train", "utd", "eval", "ladder", "noise", "probe"];
        for (name, _) in &ini.sections {
            let base = name.split_once('.').map_or(name.as_str(), |(b, _)| b);
            let ok = if name.contains('.') {
                matches!(base, "model" | "train")
            } else {
                known_sections.contains(&name.as_str())
            };
            if !ok {
                return Err(Error::InvalidConfig(format!("unknown section [{name}]")));
            }
        }
        let entries = |s: &str| ini.section(s).unwrap_or(&[]);

        let mut name = "experiment".to_string();
        let mut seed = 0u64;
        let mut mode = Mode::Transfer;
        let mut output_dir = None;
        let mut save_models = false;
        for (k, v) in entries("") {
            match k.as_str() {
                "name" => name = v.clone(),
                "seed" => seed = parse_value(k, v)?,
                "mode" => mode = v.parse()?,
                "output_dir" => output_dir = Some(PathBuf::from(v)),
                "save_models" => save_models = parse_bool(k, v)?,
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown top-level key {k:?} (expected one of {})",
                        TOP_KEYS.join(", ")
                    )))
                }
            }
        }
        let output_dir = output_dir.ok_or_else(|| Error::InvalidConfig("output_dir is required".into()))?;

        let corpus_entries = entries("corpus");
        let corpus = match corpus_entries.iter().find(|(k, _)| k == "path") {
            Some((_, p)) => {
                if corpus_entries.len() > 1 {
                    return Err(Error::InvalidConfig(
                        "a corpus path cannot be combined with synthetic settings".into(),
                    ));
                }
                CorpusSource::Path(PathBuf::from(p))
            }
            None => {
                let mut spec = SyntheticSpec::default();
                for (k, v) in corpus_entries {
                    if k == "seed" {
                        return Err(Error::InvalidConfig(
                            "the corpus seed derives from the global seed".into(),
                        ));
                    }
                    set_synthetic(&mut spec, k, v)?;
                }
                CorpusSource::Synthetic(spec)
            }
        };

        let mut training_languages = Vec::new();
        let mut zero_resource_languages = Vec::new();
        let mut utd_fraction = 0.5;
        for (k, v) in entries("languages") {
            match k.as_str() {
                "train" => training_languages = parse_list(v),
                "zero_resource" => zero_resource_languages = parse_list(v),
                "utd_fraction" => utd_fraction = parse_value(k, v)?,
                _ => return Err(Error::InvalidConfig(format!("unknown languages key {k:?}"))),
            }
        }

        let mut system_names = Vec::new();
        for (k, v) in entries("systems") {
            match k.as_str() {
                "run" => system_names = parse_list(v),
                _ => return Err(Error::InvalidConfig(format!("unknown systems key {k:?}"))),
            }
        }
        let mut base_model = ModelConfig::new(ModelKind::Ae);
        for (k, v) in entries("model") {
            if k == "kind" {
                return Err(Error::InvalidConfig("model kind comes from the system name".into()));
            }
            base_model.set(k, v)?;
        }
        let mut base_train = TrainConfig::default();
        let mut n_pairs = 0;
        for (k, v) in entries("train") {
            match k.as_str() {
                "n_pairs" => n_pairs = parse_value(k, v)?,
                "seed" => {
                    return Err(Error::InvalidConfig(
                        "training seeds derive from the global seed".into(),
                    ))
                }
                _ => set_train(&mut base_train, k, v)?,
            }
        }
        let mut systems: Vec<SystemConfig> = Vec::new();
        for s in &system_names {
            let system: System = s.parse()?;
            if systems.iter().any(|x| x.system == system) {
                return Err(Error::InvalidConfig(format!("system {system} listed twice")));
            }
            let mut model = base_model.clone();
            let mut train = base_train.clone();
            if let Some(kind) = system.model_kind() {
                model.kind = kind;
                for (k, v) in entries(&format!("model.{system}")) {
                    if k == "kind" {
                        return Err(Error::InvalidConfig("model kind comes from the system name".into()));
                    }
                    model.set(k, v)?;
                }
                for (k, v) in entries(&format!("train.{system}")) {
                    if k == "seed" || k == "n_pairs" {
                        return Err(Error::InvalidConfig(format!("{k} cannot be set per system")));
                    }
                    set_train(&mut train, k, v)?;
                }
            }
            systems.push(SystemConfig { system, model, train });
        }
        for (name, _) in &ini.sections {
            // sections for systems left out of this run are allowed
            if let Some((_, sys)) = name.split_once('.') {
                let system: System = sys.parse().map_err(|e| Error::InvalidConfig(format!("[{name}]: {e}")))?;
                if !system.is_trained() {
                    return Err(Error::InvalidConfig(format!("[{name}]: {system} has no model")));
                }
            }
        }

        let mut utd = CorruptionConfig::default();
        for (k, v) in entries("utd") {
            if k == "seed" {
                return Err(Error::InvalidConfig("the discovery seed derives from the global seed".into()));
            }
            set_corruption(&mut utd, k, v)?;
        }

        let mut eval = EvalConfig::default();
        for (k, v) in entries("eval") {
            match k.as_str() {
                "mode" => eval.mode = v.parse()?,
                "downsample_frames" => eval.downsample_frames = parse_value(k, v)?,
                "dtw_normalize" => eval.dtw_normalize = parse_bool(k, v)?,
                "dtw_deltas" => eval.dtw_deltas = parse_bool(k, v)?,
                "pr_curves" => eval.pr_curves = parse_bool(k, v)?,
                _ => return Err(Error::InvalidConfig(format!("unknown eval key {k:?}"))),
            }
        }

        let mut ladder = Vec::new();
        for (k, v) in entries("ladder") {
            match k.as_str() {
                "sizes" => {
                    ladder = parse_list(v)
                        .iter()
                        .map(|x| parse_value(k, x))
                        .collect::<Result<Vec<usize>>>()?
                }
                _ => return Err(Error::InvalidConfig(format!("unknown ladder key {k:?}"))),
            }
        }
        let mut noise = NoiseCondition::ALL.to_vec();
        for (k, v) in entries("noise") {
            match k.as_str() {
                "conditions" => {
                    noise = parse_list(v).iter().map(|x| x.parse()).collect::<Result<Vec<_>>>()?
                }
                _ => return Err(Error::InvalidConfig(format!("unknown noise key {k:?}"))),
            }
        }

        let mut probe = ProbeConfig::default();
        for (k, v) in entries("probe") {
            match k.as_str() {
                "run" => probe.kinds = parse_list(v).iter().map(|x| x.parse()).collect::<Result<Vec<_>>>()?,
                "systems" => {
                    probe.systems = parse_list(v).iter().map(|x| x.parse()).collect::<Result<Vec<_>>>()?
                }
                "max_edit_bin" => probe.max_edit_bin = parse_value(k, v)?,
                "pca" => probe.pca = parse_bool(k, v)?,
                "trigrams" => probe.trigrams = parse_value(k, v)?,
                "trigram_repeats" => probe.trigram_repeats = parse_value(k, v)?,
                _ => return Err(Error::InvalidConfig(format!("unknown probe key {k:?}"))),
            }
        }

        let cfg = ExperimentConfig {
            name,
            seed,
            mode,
            output_dir,
            save_models,
            corpus,
            training_languages,
            zero_resource_languages,
            utd_fraction,
            systems,
            n_pairs,
            utd,
            eval,
            ladder,
            noise,
            probe,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that need no corpus; language names are checked once the
    /// corpus is loaded.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.systems.is_empty() {
            return bad("no systems to run".into());
        }
        if self.zero_resource_languages.is_empty() {
            return bad("at least one zero-resource language is required".into());
        }
        let train: BTreeSet<&String> = self.training_languages.iter().collect();
        if train.len() != self.training_languages.len() {
            return bad("training languages repeat".into());
        }
        let zr: BTreeSet<&String> = self.zero_resource_languages.iter().collect();
        if zr.len() != self.zero_resource_languages.len() {
            return bad("zero-resource languages repeat".into());
        }
        if let Some(l) = train.intersection(&zr).next() {
            return bad(format!("{l} is both a training and a zero-resource language"));
        }
        let supervised = self.systems.iter().any(|s| matches!(s.system, System::Supervised(_)));
        if supervised && self.training_languages.is_empty() {
            return bad("supervised systems need training languages".into());
        }
        if !(self.utd_fraction > 0.0 && self.utd_fraction < 1.0) {
            return bad(format!("utd_fraction {} must lie strictly between 0 and 1", self.utd_fraction));
        }
        if self.eval.downsample_frames == 0 {
            return bad("downsample_frames must be at least 1".into());
        }
        if let CorpusSource::Path(p) = &self.corpus {
            if !p.is_dir() {
                return bad(format!("corpus directory {} does not exist", p.display()));
            }
        }
        if let CorpusSource::Synthetic(spec) = &self.corpus {
            spec.validate()?;
        }
        self.utd.validate()?;
        for s in &self.systems {
            s.model.validate()?;
            s.train.validate()?;
        }
        match self.mode {
            Mode::LanguageLadder => {
                if self.ladder.is_empty() {
                    return bad("language_ladder mode needs [ladder] sizes".into());
                }
                if let Some(k) = self.ladder.iter().find(|&&k| k == 0 || k > self.training_languages.len()) {
                    return bad(format!(
                        "ladder size {k} outside 1..={}",
                        self.training_languages.len()
                    ));
                }
            }
            Mode::NoiseLadder => {
                if self.noise.is_empty() {
                    return bad("noise_ladder mode needs at least one condition".into());
                }
            }
            Mode::Transfer => {}
        }
        if !self.probe.kinds.is_empty() && self.mode != Mode::Transfer {
            return bad("probes run in transfer mode only".into());
        }
        for s in &self.probe.systems {
            if !s.has_embeddings() {
                return bad(format!("{s} has no embeddings to probe"));
            }
            if !self.systems.iter().any(|x| x.system == *s) {
                return bad(format!("probed system {s} is not run"));
            }
        }
        if self.probe.kinds.contains(&ProbeKind::LanguageAcc) && matches!(self.corpus, CorpusSource::Path(_)) {
            return bad("the language probe needs a synthetic corpus".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "
# comment
name = t
seed = 3
mode = transfer
output_dir = out

[corpus]
n_languages = 3
vocab_size_per_language = 10  # trailing comment
word_length_range = 2, 4

[languages]
train = L0, L1
zero_resource = L2

[systems]
run = downsample, cae, siamese_utd

[model]
encoder_units = 8

[model.cae]
encoder_units = 16

[train]
epochs = 2
n_pairs = 100

[train.siamese_utd]
epochs = 5
";

    #[test]
    fn parses_sections_and_overrides() {
        let cfg = ExperimentConfig::parse(BASIC, &[]).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.training_languages, ["L0", "L1"]);
        let CorpusSource::Synthetic(spec) = &cfg.corpus else { panic!() };
        assert_eq!(spec.word_length_range, (2, 4));
        assert_eq!(spec.vocab_size_per_language, 10);
        assert_eq!(cfg.systems.len(), 3);
        assert_eq!(cfg.systems[1].model.encoder_units, 16);
        assert_eq!(cfg.systems[1].model.kind, ModelKind::Cae);
        assert_eq!(cfg.systems[2].model.encoder_units, 8);
        assert_eq!(cfg.systems[2].train.epochs, 5);
        assert_eq!(cfg.systems[1].train.epochs, 2);
        assert_eq!(cfg.n_pairs, 100);
        assert_eq!(cfg.noise, NoiseCondition::ALL);

        let o = vec![("train.epochs".to_string(), "7".to_string()), ("seed".into(), "9".into())];
        let cfg = ExperimentConfig::parse(BASIC, &o).unwrap();
        assert_eq!(cfg.systems[1].train.epochs, 7);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn rejects_bad_configs() {
        let with = |k: &str, v: &str| ExperimentConfig::parse(BASIC, &[(k.to_string(), v.to_string())]);
        assert!(with("languages.zero_resource", "L1").is_err());
        assert!(with("train.epoch", "3").is_err());
        assert!(with("train.seed", "3").is_err());
        assert!(with("systems.run", "cae, cae").is_err());
        assert!(with("systems.run", "ae").is_err());
        assert!(with("systems.run", "cae_lc_utd").is_err());
        assert!(with("mode", "language_ladder").is_err());
        assert!(with("probe.run", "duration_r2").is_ok());
        assert!(with("corpus.path", "/definitely/not/here").is_err());
        assert!(with("bogus.key", "1").is_err());
        assert!(ExperimentConfig::parse("[a\n", &[]).is_err());
        assert!(ExperimentConfig::parse("x = 1\nx = 2\n", &[]).is_err());
    }

    #[test]
    fn system_names_round_trip() {
        for s in ["downsample", "dtw", "cae", "cae_lc", "classifier", "classifier_branched", "siamese", "ae_utd", "cae_utd", "classifier_utd", "siamese_utd"] {
            assert_eq!(s.parse::<System>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn noise_conditions_set_flags() {
        let base = CorruptionConfig::default();
        let c = NoiseCondition::FixedLabels.apply(&base);
        assert!(c.fix_labels && !c.fix_boundaries);
        let c = NoiseCondition::BothFixed.apply(&base);
        assert!(c.fix_labels && c.fix_boundaries);
    }
}
