//! Deterministic synthetic multilingual corpus.
//!
//! Phones are random target vectors drawn from one shared pool; every
//! language takes a subset of the pool as its inventory and builds a lexicon
//! of phone strings. A spoken instance cross-fades linearly between the
//! targets of consecutive phones (each phone held for a random number of
//! frames), then gets the speaker's diagonal scale and offset, a constant
//! per-instance channel offset, and white frame noise.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Corpus, Segment, SegmentMeta};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_for, SplitMix64};

/// Frame hop used to convert frame counts to durations.
pub const FRAME_MS: f64 = 10.0;

const CONSONANTS: &[char] = &[
    'b', 'd', 'f', 'g', 'h', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'w', 'z', 'j', 'c', 'x',
    'q',
];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_languages: usize,
    pub shared_phone_pool: usize,
    pub phones_per_language: usize,
    pub vocab_size_per_language: usize,
    pub word_length_range: (usize, usize),
    pub speakers_per_language: usize,
    pub instances_per_word: usize,
    pub frames_per_phone_range: (usize, usize),
    pub speaker_shift_scale: f64,
    pub noise_scale: f64,
    pub channel_scale: f64,
    /// Per-instance loudness offset on the first coefficient only.
    pub gain_scale: f64,
    /// Feature dimensionality D.
    pub dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_languages: 5,
            shared_phone_pool: 24,
            phones_per_language: 16,
            vocab_size_per_language: 50,
            word_length_range: (3, 6),
            speakers_per_language: 6,
            instances_per_word: 8,
            frames_per_phone_range: (2, 5),
            speaker_shift_scale: 0.3,
            noise_scale: 0.2,
            channel_scale: 0.3,
            gain_scale: 0.0,
            dim: 13,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_languages", self.n_languages),
            ("shared_phone_pool", self.shared_phone_pool),
            ("phones_per_language", self.phones_per_language),
            ("vocab_size_per_language", self.vocab_size_per_language),
            ("speakers_per_language", self.speakers_per_language),
            ("instances_per_word", self.instances_per_word),
            ("dim", self.dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.phones_per_language > self.shared_phone_pool {
            return Err(Error::InvalidConfig(format!(
                "phones_per_language ({}) exceeds shared_phone_pool ({})",
                self.phones_per_language, self.shared_phone_pool
            )));
        }
        let (wmin, wmax) = self.word_length_range;
        let (fmin, fmax) = self.frames_per_phone_range;
        if wmin == 0 || wmin > wmax {
            return Err(Error::InvalidConfig(format!(
                "word_length_range ({wmin}, {wmax}) must satisfy 1 <= min <= max"
            )));
        }
        if fmin == 0 || fmin > fmax {
            return Err(Error::InvalidConfig(format!(
                "frames_per_phone_range ({fmin}, {fmax}) must satisfy 1 <= min <= max"
            )));
        }
        if wmin * fmin < 2 {
            return Err(Error::InvalidConfig(
                "shortest possible word would have fewer than 2 frames".into(),
            ));
        }
        for (name, v) in [
            ("speaker_shift_scale", self.speaker_shift_scale),
            ("noise_scale", self.noise_scale),
            ("channel_scale", self.channel_scale),
            ("gain_scale", self.gain_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        // Lexicon must be able to hold vocab_size distinct strings.
        let mut capacity: f64 = 0.0;
        for len in wmin..=wmax {
            capacity += (self.phones_per_language as f64).powi(len as i32);
        }
        if capacity < self.vocab_size_per_language as f64 {
            return Err(Error::InvalidConfig(
                "phone inventory too small for the requested vocabulary".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct SpeakerTransform {
    name: String,
    scale: Vec<f64>,
    offset: Vec<f64>,
}

/// The latent generative model behind a synthetic corpus: phone targets,
/// inventories, lexicons and speakers. Kept around so that extra material
/// (e.g. phone-trigram probe sets) can be rendered consistently.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    spec: SyntheticSpec,
    phone_symbols: Vec<String>,
    targets: Matrix,
    inventories: Vec<Vec<usize>>,
    lexicons: Vec<Vec<Vec<usize>>>,
    speakers: Vec<Vec<SpeakerTransform>>,
}

fn phone_symbol(i: usize) -> String {
    let n = CONSONANTS.len() * VOWELS.len();
    let base = format!(
        "{}{}",
        CONSONANTS[(i % n) / VOWELS.len()],
        VOWELS[i % VOWELS.len()]
    );
    if i < n {
        base
    } else {
        format!("{base}{}", i / n)
    }
}

fn gaussian_vec(rng: &mut SplitMix64, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

pub fn language_name(l: usize) -> String {
    format!("L{l}")
}

impl SyntheticWorld {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let mut rng = rng_for(spec.seed, "phone-targets");
        let mut targets = Matrix::zeros(spec.shared_phone_pool, d);
        for p in 0..spec.shared_phone_pool {
            let v = gaussian_vec(&mut rng, d, 1.0);
            targets.row_mut(p).copy_from_slice(&v);
        }
        let phone_symbols = (0..spec.shared_phone_pool).map(phone_symbol).collect();

        let mut inventories = Vec::with_capacity(spec.n_languages);
        let mut lexicons = Vec::with_capacity(spec.n_languages);
        let mut speakers = Vec::with_capacity(spec.n_languages);
        for l in 0..spec.n_languages {
            let mut rng = rng_for(spec.seed, &format!("inventory/{l}"));
            let mut pool: Vec<usize> = (0..spec.shared_phone_pool).collect();
            pool.shuffle(&mut rng);
            let mut inv: Vec<usize> = pool[..spec.phones_per_language].to_vec();
            inv.sort_unstable();

            let mut rng = rng_for(spec.seed, &format!("lexicon/{l}"));
            let mut lexicon: Vec<Vec<usize>> = Vec::with_capacity(spec.vocab_size_per_language);
            let mut seen = std::collections::HashSet::new();
            while lexicon.len() < spec.vocab_size_per_language {
                let len = rng.random_range(spec.word_length_range.0..=spec.word_length_range.1);
                let word: Vec<usize> = (0..len).map(|_| inv[rng.random_range(0..inv.len())]).collect();
                if seen.insert(word.clone()) {
                    lexicon.push(word);
                }
            }

            let mut rng = rng_for(spec.seed, &format!("speakers/{l}"));
            let spk = (0..spec.speakers_per_language)
                .map(|s| SpeakerTransform {
                    name: format!("{}s{s}", language_name(l)),
                    scale: gaussian_vec(&mut rng, d, spec.speaker_shift_scale)
                        .into_iter()
                        .map(f64::exp)
                        .collect(),
                    offset: gaussian_vec(&mut rng, d, spec.speaker_shift_scale),
                })
                .collect();
            inventories.push(inv);
            lexicons.push(lexicon);
            speakers.push(spk);
        }
        Ok(SyntheticWorld {
            spec: spec.clone(),
            phone_symbols,
            targets,
            inventories,
            lexicons,
            speakers,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn inventory(&self, language: usize) -> &[usize] {
        &self.inventories[language]
    }

    pub fn phone_symbol(&self, phone: usize) -> &str {
        &self.phone_symbols[phone]
    }

    /// Phones present in every one of `languages`' inventories.
    pub fn common_phones(&self, languages: &[usize]) -> Vec<usize> {
        (0..self.spec.shared_phone_pool)
            .filter(|p| languages.iter().all(|&l| self.inventories[l].contains(p)))
            .collect()
    }

    /// Fraction of `a`'s inventory that also belongs to `b`.
    pub fn inventory_overlap(&self, a: usize, b: usize) -> f64 {
        let shared = self.inventories[a]
            .iter()
            .filter(|p| self.inventories[b].contains(p))
            .count();
        shared as f64 / self.inventories[a].len() as f64
    }

    fn word_string(&self, phones: &[usize]) -> String {
        phones.iter().map(|&p| self.phone_symbols[p].as_str()).collect()
    }

    /// Renders one spoken instance of `phones` by speaker `speaker` of
    /// `language`, using randomness from `rng`.
    pub fn render(
        &self,
        language: usize,
        speaker: usize,
        phones: &[usize],
        word: String,
        rng: &mut SplitMix64,
    ) -> Result<Segment> {
        let spec = &self.spec;
        let d = spec.dim;
        let durations: Vec<usize> = phones
            .iter()
            .map(|_| rng.random_range(spec.frames_per_phone_range.0..=spec.frames_per_phone_range.1))
            .collect();
        let total: usize = durations.iter().sum();
        let mut centers = Vec::with_capacity(phones.len());
        let mut start = 0usize;
        for &dur in &durations {
            centers.push(start as f64 + (dur as f64 - 1.0) / 2.0);
            start += dur;
        }

        let spk = &self.speakers[language][speaker];
        let mut channel = gaussian_vec(rng, d, spec.channel_scale);
        channel[0] += gaussian_vec(rng, 1, spec.gain_scale)[0];
        let mut frames = Matrix::zeros(total, d);
        let mut k = 0usize;
        for t in 0..total {
            let tf = t as f64;
            while k + 1 < centers.len() && tf >= centers[k + 1] {
                k += 1;
            }
            let row = frames.row_mut(t);
            let a = self.targets.row(phones[k]);
            if tf <= centers[k] || k + 1 == centers.len() {
                row.copy_from_slice(a);
            } else {
                let b = self.targets.row(phones[k + 1]);
                let alpha = (tf - centers[k]) / (centers[k + 1] - centers[k]);
                for j in 0..d {
                    row[j] = (1.0 - alpha) * a[j] + alpha * b[j];
                }
            }
            for j in 0..d {
                let noise: f64 = if spec.noise_scale > 0.0 {
                    spec.noise_scale * Distribution::<f64>::sample(&StandardNormal, &mut *rng)
                } else {
                    0.0
                };
                row[j] = row[j] * spk.scale[j] + spk.offset[j] + channel[j] + noise;
            }
        }
        let meta = SegmentMeta {
            word,
            speaker: spk.name.clone(),
            language: language_name(language),
            phones: phones.iter().map(|&p| self.phone_symbols[p].clone()).collect(),
            duration_ms: total as f64 * FRAME_MS,
        };
        Segment::new(frames, meta)
    }

    /// The full corpus: language-major, then word, then instance.
    pub fn corpus(&self) -> Result<Corpus> {
        let spec = &self.spec;
        let mut segments = Vec::with_capacity(
            spec.n_languages * spec.vocab_size_per_language * spec.instances_per_word,
        );
        for l in 0..spec.n_languages {
            let mut assign = rng_for(spec.seed, &format!("speaker-assignment/{l}"));
            for (w, phones) in self.lexicons[l].iter().enumerate() {
                let offset = assign.random_range(0..spec.speakers_per_language);
                let word = self.word_string(phones);
                for i in 0..spec.instances_per_word {
                    let speaker = (offset + i) % spec.speakers_per_language;
                    let mut rng =
                        SplitMix64::new(derive_seed(spec.seed, &format!("render/{l}/{w}/{i}")));
                    segments.push(self.render(l, speaker, phones, word.clone(), &mut rng)?);
                }
            }
        }
        Corpus::new(segments)
    }

    /// Segments whose phone strings are trigrams built only from phones
    /// shared by all `languages`; every trigram is spoken in every language
    /// by every speaker `per_speaker` times.
    pub fn trigram_corpus(
        &self,
        languages: &[usize],
        n_trigrams: usize,
        per_speaker: usize,
        seed: u64,
    ) -> Result<Corpus> {
        for &l in languages {
            if l >= self.spec.n_languages {
                return Err(Error::InvalidInput(format!("language index {l} out of range")));
            }
        }
        let common = self.common_phones(languages);
        if common.is_empty() {
            return Err(Error::InsufficientData(
                "probed languages share no phones".into(),
            ));
        }
        let mut rng = rng_for(seed, "trigrams");
        let mut trigrams: Vec<Vec<usize>> = Vec::new();
        let max_distinct = common.len().pow(3);
        while trigrams.len() < n_trigrams.min(max_distinct) {
            let t: Vec<usize> = (0..3).map(|_| common[rng.random_range(0..common.len())]).collect();
            if !trigrams.contains(&t) {
                trigrams.push(t);
            }
        }
        let mut segments = Vec::new();
        for &l in languages {
            for (ti, tri) in trigrams.iter().enumerate() {
                for s in 0..self.spec.speakers_per_language {
                    for i in 0..per_speaker {
                        let mut r = SplitMix64::new(derive_seed(
                            seed,
                            &format!("trigram/{l}/{ti}/{s}/{i}"),
                        ));
                        segments.push(self.render(l, s, tri, self.word_string(tri), &mut r)?);
                    }
                }
            }
        }
        Corpus::new(segments)
    }
}

/// Generates the synthetic corpus described by `spec`. Pure in `spec`.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<Corpus> {
    SyntheticWorld::new(spec)?.corpus()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_languages: 2,
            vocab_size_per_language: 6,
            speakers_per_language: 3,
            instances_per_word: 4,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn shape_and_metadata() {
        let spec = small();
        let c = generate_corpus(&spec).unwrap();
        assert_eq!(c.len(), 2 * 6 * 4);
        for s in c.segments() {
            let m = s.meta();
            assert_eq!(s.dim(), 13);
            assert_eq!(m.duration_ms, s.n_frames() as f64 * FRAME_MS);
            assert!(!m.phones.is_empty());
            assert_eq!(m.word, m.phones.concat());
            let n = m.phones.len();
            assert!((3..=6).contains(&n));
            assert!(s.n_frames() >= 2 * n && s.n_frames() <= 5 * n);
        }
        assert_eq!(c.languages(), &["L0".to_string(), "L1".to_string()]);
        assert_eq!(c.speaker_index().len(), 6);
    }

    #[test]
    fn zero_variability_gives_identical_instances() {
        let spec = SyntheticSpec {
            n_languages: 1,
            speakers_per_language: 1,
            noise_scale: 0.0,
            channel_scale: 0.0,
            gain_scale: 0.0,
            frames_per_phone_range: (3, 3),
            vocab_size_per_language: 5,
            ..SyntheticSpec::default()
        };
        let c = generate_corpus(&spec).unwrap();
        for key in c.word_types() {
            let ids = c.word_ids(key);
            assert_eq!(ids.len(), spec.instances_per_word);
            for &i in ids {
                assert_eq!(c.segment(i).frames(), c.segment(ids[0]).frames());
            }
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let a = generate_corpus(&small()).unwrap();
        let b = generate_corpus(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 1;
        assert_ne!(a, generate_corpus(&other).unwrap());
    }

    #[test]
    fn validation() {
        let mut s = small();
        s.phones_per_language = 30;
        assert!(generate_corpus(&s).is_err());
        let mut s = small();
        s.word_length_range = (4, 3);
        assert!(s.validate().is_err());
        let mut s = small();
        s.instances_per_word = 0;
        assert!(s.validate().is_err());
        let mut s = small();
        s.noise_scale = -1.0;
        assert!(s.validate().is_err());
        let mut s = small();
        s.word_length_range = (1, 1);
        s.frames_per_phone_range = (1, 1);
        assert!(s.validate().is_err());
    }

    #[test]
    fn interpolation_passes_through_targets() {
        let spec = SyntheticSpec {
            n_languages: 1,
            speakers_per_language: 1,
            speaker_shift_scale: 0.0,
            noise_scale: 0.0,
            channel_scale: 0.0,
            gain_scale: 0.0,
            frames_per_phone_range: (3, 3),
            ..SyntheticSpec::default()
        };
        let world = SyntheticWorld::new(&spec).unwrap();
        let mut rng = SplitMix64::new(0);
        let seg = world.render(0, 0, &[0, 1], "x".into(), &mut rng).unwrap();
        // centers at frames 1 and 4; frame 0 holds the first target.
        assert_eq!(seg.frames().row(0), world.targets.row(0));
        assert_eq!(seg.frames().row(1), world.targets.row(0));
        assert_eq!(seg.frames().row(4), world.targets.row(1));
        assert_eq!(seg.frames().row(5), world.targets.row(1));
        let mid: Vec<f64> = (0..13)
            .map(|j| (2.0 * world.targets.get(0, j) + world.targets.get(1, j)) / 3.0)
            .collect();
        for (a, b) in seg.frames().row(2).iter().zip(&mid) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn trigrams_use_shared_phones() {
        let spec = small();
        let world = SyntheticWorld::new(&spec).unwrap();
        let c = world.trigram_corpus(&[0, 1], 4, 1, 3).unwrap();
        assert_eq!(c.len(), 2 * 4 * 3);
        let common: Vec<String> = world
            .common_phones(&[0, 1])
            .iter()
            .map(|&p| world.phone_symbol(p).to_string())
            .collect();
        for s in c.segments() {
            assert_eq!(s.meta().phones.len(), 3);
            assert!(s.meta().phones.iter().all(|p| common.contains(p)));
        }
    }
}
