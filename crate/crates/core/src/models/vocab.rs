use std::collections::BTreeMap;

use crate::corpus::{Corpus, WordKey};
use crate::error::{Error, Result};

/// Dense class indices for (language, word) types. Classes of one language
/// occupy a contiguous block; languages appear in the order they were given.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    languages: Vec<String>,
    offsets: Vec<usize>,
    words: Vec<WordKey>,
    index: BTreeMap<WordKey, usize>,
}

impl Vocabulary {
    /// At most `cap` types per language, keeping the most frequent ones
    /// (ties to the earlier type); kept types are numbered in order of first
    /// appearance.
    pub fn from_corpus(corpus: &Corpus, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidConfig("vocabulary cap must be at least 1".into()));
        }
        let mut per_language: Vec<(String, Vec<String>)> = Vec::new();
        for lang in corpus.languages() {
            let types: Vec<&WordKey> = corpus.word_types().iter().filter(|k| &k.language == lang).collect();
            let mut ranked: Vec<usize> = (0..types.len()).collect();
            ranked.sort_by_key(|&i| std::cmp::Reverse(corpus.word_ids(types[i]).len()));
            let mut keep: Vec<usize> = ranked.into_iter().take(cap).collect();
            keep.sort_unstable();
            per_language.push((lang.clone(), keep.into_iter().map(|i| types[i].word.clone()).collect()));
        }
        Self::from_labels(per_language)
    }

    /// Explicit per-language label lists, numbered in the given order.
    pub fn from_labels(per_language: Vec<(String, Vec<String>)>) -> Result<Self> {
        let mut v = Vocabulary {
            languages: Vec::new(),
            offsets: Vec::new(),
            words: Vec::new(),
            index: BTreeMap::new(),
        };
        for (lang, labels) in per_language {
            if v.languages.contains(&lang) {
                return Err(Error::InvalidInput(format!("language {lang} listed twice")));
            }
            v.offsets.push(v.words.len());
            for word in labels {
                let key = WordKey {
                    language: lang.clone(),
                    word,
                };
                if v.index.insert(key.clone(), v.words.len()).is_some() {
                    return Err(Error::InvalidInput(format!("duplicate class {}/{}", key.language, key.word)));
                }
                v.words.push(key);
            }
            v.languages.push(lang);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn class_of(&self, key: &WordKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn word(&self, class: usize) -> Option<&WordKey> {
        self.words.get(class)
    }

    pub fn classes_per_language(&self) -> Vec<usize> {
        (0..self.languages.len())
            .map(|l| self.offsets.get(l + 1).copied().unwrap_or(self.words.len()) - self.offsets[l])
            .collect()
    }

    /// (language index, class index within that language).
    pub fn locate(&self, class: usize) -> Result<(usize, usize)> {
        if class >= self.words.len() {
            return Err(Error::InvalidInput(format!(
                "class {class} outside vocabulary of {}",
                self.words.len()
            )));
        }
        let l = self.offsets.partition_point(|&o| o <= class) - 1;
        Ok((l, class - self.offsets[l]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::toy_segment;

    fn corpus() -> Corpus {
        let f: &[&[f64]] = &[&[1.0], &[2.0]];
        Corpus::new(vec![
            toy_segment("b", "s1", "X", f),
            toy_segment("a", "s1", "X", f),
            toy_segment("a", "s2", "X", f),
            toy_segment("c", "s1", "Y", f),
            toy_segment("a", "s1", "Y", f),
            toy_segment("c", "s2", "Y", f),
        ])
        .unwrap()
    }

    #[test]
    fn bijective_and_language_blocked() {
        let v = Vocabulary::from_corpus(&corpus(), 10).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.classes_per_language(), vec![2, 2]);
        let key = |l: &str, w: &str| WordKey {
            language: l.into(),
            word: w.into(),
        };
        assert_eq!(v.class_of(&key("X", "b")), Some(0));
        assert_eq!(v.class_of(&key("X", "a")), Some(1));
        assert_eq!(v.class_of(&key("Y", "c")), Some(2));
        assert_eq!(v.class_of(&key("Y", "a")), Some(3));
        for c in 0..4 {
            assert_eq!(v.class_of(v.word(c).unwrap()), Some(c));
        }
        assert_eq!(v.locate(3).unwrap(), (1, 1));
        assert!(v.locate(4).is_err());
    }

    #[test]
    fn cap_keeps_most_frequent_types() {
        let v = Vocabulary::from_corpus(&corpus(), 1).unwrap();
        assert_eq!(v.classes_per_language(), vec![1, 1]);
        assert_eq!(v.word(0).unwrap().word, "a");
        assert_eq!(v.word(1).unwrap().word, "c");
        assert!(Vocabulary::from_corpus(&corpus(), 0).is_err());
    }
}
