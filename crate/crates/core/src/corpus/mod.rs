//! Word segments, corpora, synthetic generation, simulated term discovery,
//! pair sampling, splits and on-disk storage.

mod io;
mod pairs;
mod synth;
mod utd;

use std::collections::{BTreeMap, HashMap};

pub use io::{read_corpus, read_features, read_metadata, write_corpus, write_features, write_metadata};
pub use pairs::{all_word_pairs, sample_word_pairs, split_corpus, split_corpus_ids, PairList, SplitBy};
pub use synth::{generate_corpus, language_name, SyntheticSpec, SyntheticWorld, FRAME_MS};
pub use utd::{
    pairs_from_clusters, read_clusters, simulate_utd, write_clusters, Cluster, CorruptionConfig, DiscoveredClusters, Span,
};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMeta {
    pub word: String,
    pub speaker: String,
    pub language: String,
    pub phones: Vec<String>,
    pub duration_ms: f64,
}

impl SegmentMeta {
    pub fn word_key(&self) -> WordKey {
        WordKey {
            language: self.language.clone(),
            word: self.word.clone(),
        }
    }
}

/// Word types are distinct per language, even when spelled the same.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WordKey {
    pub language: String,
    pub word: String,
}

/// A variable-length run of feature frames (T×D) with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    frames: Matrix,
    meta: SegmentMeta,
}

impl Segment {
    pub fn new(frames: Matrix, meta: SegmentMeta) -> Result<Self> {
        if frames.rows() < 2 {
            return Err(Error::InvalidInput(format!(
                "segment needs at least 2 frames, got {}",
                frames.rows()
            )));
        }
        if frames.cols() == 0 {
            return Err(Error::InvalidInput("segment frames have zero dimensions".into()));
        }
        if !frames.all_finite() {
            return Err(Error::NonFinite("segment frames".into()));
        }
        if !(meta.duration_ms > 0.0) {
            return Err(Error::InvalidInput(format!(
                "duration_ms must be positive, got {}",
                meta.duration_ms
            )));
        }
        Ok(Segment { frames, meta })
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn meta(&self) -> &SegmentMeta {
        &self.meta
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    /// Frames `start..end` as a new segment with duration rescaled.
    pub fn slice(&self, start: usize, end: usize) -> Result<Segment> {
        if end > self.n_frames() || end < start + 2 {
            return Err(Error::InvalidInput(format!(
                "span {start}..{end} invalid for a {}-frame segment",
                self.n_frames()
            )));
        }
        let mut meta = self.meta.clone();
        meta.duration_ms = (end - start) as f64 * FRAME_MS;
        Segment::new(self.frames.slice_rows(start, end), meta)
    }
}

/// Ordered segments with word, speaker and language indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    segments: Vec<Segment>,
    words: BTreeMap<WordKey, Vec<usize>>,
    speakers: BTreeMap<String, Vec<usize>>,
    languages: BTreeMap<String, Vec<usize>>,
    language_order: Vec<String>,
    word_order: Vec<WordKey>,
}

impl Corpus {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if let Some(first) = segments.first() {
            let d = first.dim();
            if let Some((i, _)) = segments.iter().enumerate().find(|(_, s)| s.dim() != d) {
                return Err(Error::Shape(format!(
                    "segment {i} has {} dims, corpus uses {d}",
                    segments[i].dim()
                )));
            }
        }
        let mut words: BTreeMap<WordKey, Vec<usize>> = BTreeMap::new();
        let mut speakers: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut languages: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut language_order = Vec::new();
        let mut word_order = Vec::new();
        for (id, seg) in segments.iter().enumerate() {
            let m = seg.meta();
            let key = m.word_key();
            let entry = words.entry(key.clone()).or_default();
            if entry.is_empty() {
                word_order.push(key);
            }
            entry.push(id);
            speakers.entry(m.speaker.clone()).or_default().push(id);
            let entry = languages.entry(m.language.clone()).or_default();
            if entry.is_empty() {
                language_order.push(m.language.clone());
            }
            entry.push(id);
        }
        Ok(Corpus {
            segments,
            words,
            speakers,
            languages,
            language_order,
            word_order,
        })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, id: usize) -> &Segment {
        &self.segments[id]
    }

    pub fn dim(&self) -> Option<usize> {
        self.segments.first().map(Segment::dim)
    }

    pub fn word_ids(&self, key: &WordKey) -> &[usize] {
        self.words.get(key).map_or(&[], Vec::as_slice)
    }

    /// Word types in order of first appearance.
    pub fn word_types(&self) -> &[WordKey] {
        &self.word_order
    }

    pub fn word_index(&self) -> &BTreeMap<WordKey, Vec<usize>> {
        &self.words
    }

    pub fn speaker_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.speakers
    }

    pub fn language_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.languages
    }

    /// Languages in order of first appearance.
    pub fn languages(&self) -> &[String] {
        &self.language_order
    }

    /// Segments with the given ids (in the given order), re-numbered densely.
    pub fn subset(&self, ids: &[usize]) -> Result<Corpus> {
        let mut segs = Vec::with_capacity(ids.len());
        for &id in ids {
            let seg = self
                .segments
                .get(id)
                .ok_or_else(|| Error::InvalidInput(format!("segment id {id} out of range")))?;
            segs.push(seg.clone());
        }
        Corpus::new(segs)
    }

    /// Sub-corpus holding only the listed languages, in corpus order.
    pub fn select_languages(&self, languages: &[String]) -> Result<Corpus> {
        for l in languages {
            if !self.languages.contains_key(l) {
                return Err(Error::InvalidInput(format!("language {l} not in corpus")));
            }
        }
        let ids: Vec<usize> = (0..self.len())
            .filter(|&i| languages.contains(&self.segments[i].meta().language))
            .collect();
        self.subset(&ids)
    }

    /// Per-segment dense labels for word types (first-appearance order).
    pub fn word_labels(&self) -> Vec<usize> {
        let lookup: HashMap<&WordKey, usize> =
            self.word_order.iter().enumerate().map(|(i, k)| (k, i)).collect();
        self.segments
            .iter()
            .map(|s| lookup[&s.meta().word_key()])
            .collect()
    }
}

#[cfg(test)]
pub(crate) fn toy_segment(word: &str, speaker: &str, language: &str, rows: &[&[f64]]) -> Segment {
    let frames = Matrix::from_rows(rows).unwrap();
    let n = frames.rows();
    Segment::new(
        frames,
        SegmentMeta {
            word: word.into(),
            speaker: speaker.into(),
            language: language.into(),
            phones: word.chars().map(|c| c.to_string()).collect(),
            duration_ms: n as f64 * FRAME_MS,
        },
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_match_metadata() {
        let c = Corpus::new(vec![
            toy_segment("ab", "s1", "L0", &[&[1.0], &[2.0]]),
            toy_segment("cd", "s2", "L0", &[&[1.0], &[2.0]]),
            toy_segment("ab", "s2", "L1", &[&[1.0], &[2.0]]),
            toy_segment("ab", "s2", "L0", &[&[1.0], &[2.0]]),
        ])
        .unwrap();
        let key = WordKey {
            language: "L0".into(),
            word: "ab".into(),
        };
        assert_eq!(c.word_ids(&key), &[0, 3]);
        assert_eq!(c.speaker_index()["s2"], vec![1, 2, 3]);
        assert_eq!(c.languages(), &["L0".to_string(), "L1".to_string()]);
        assert_eq!(c.word_types().len(), 3);
        assert_eq!(c.word_labels(), vec![0, 1, 2, 0]);
    }

    #[test]
    fn segment_invariants_enforced() {
        let meta = SegmentMeta {
            word: "a".into(),
            speaker: "s".into(),
            language: "L".into(),
            phones: vec!["a".into()],
            duration_ms: 10.0,
        };
        let one = Matrix::from_rows(&[[1.0]]).unwrap();
        assert!(Segment::new(one, meta.clone()).is_err());
        let nan = Matrix::from_rows(&[[1.0], [f64::NAN]]).unwrap();
        assert!(Segment::new(nan, meta.clone()).is_err());
        let ok = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let mut bad = meta;
        bad.duration_ms = 0.0;
        assert!(Segment::new(ok, bad).is_err());
    }

    #[test]
    fn mixed_dims_rejected() {
        let r = Corpus::new(vec![
            toy_segment("a", "s", "L", &[&[1.0], &[2.0]]),
            toy_segment("b", "s", "L", &[&[1.0, 0.0], &[2.0, 0.0]]),
        ]);
        assert!(r.is_err());
    }
}
