use rand::seq::SliceRandom;
use rand::Rng;

use super::Corpus;
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Segment-id pairs into an owning corpus.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PairList {
    pub pairs: Vec<(usize, usize)>,
}

impl PairList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        for &(i, j) in &self.pairs {
            if i == j || i >= corpus.len() || j >= corpus.len() {
                return Err(Error::InvalidInput(format!("invalid pair ({i}, {j})")));
            }
        }
        Ok(())
    }
}

/// `n` same-word pairs drawn uniformly, with replacement, from the pool of
/// every unordered same-word pair in `corpus` (word types are per language).
pub fn sample_word_pairs(corpus: &Corpus, n: usize, seed: u64) -> Result<PairList> {
    let groups: Vec<&[usize]> = corpus
        .word_types()
        .iter()
        .map(|k| corpus.word_ids(k))
        .filter(|ids| ids.len() >= 2)
        .collect();
    if groups.is_empty() {
        return Err(Error::InsufficientData(
            "no word type has two or more instances".into(),
        ));
    }
    // cumulative pair counts per group
    let mut cumulative = Vec::with_capacity(groups.len());
    let mut total: u64 = 0;
    for g in &groups {
        let k = g.len() as u64;
        total += k * (k - 1) / 2;
        cumulative.push(total);
    }
    let mut rng = rng_for(seed, "word-pairs");
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random_range(0..total);
        let gi = cumulative.partition_point(|&c| c <= r);
        let before = if gi == 0 { 0 } else { cumulative[gi - 1] };
        let (a, b) = unrank_pair(r - before, groups[gi].len() as u64);
        pairs.push((groups[gi][a], groups[gi][b]));
    }
    Ok(PairList { pairs })
}

/// Every unordered same-word pair, sorted ascending.
pub fn all_word_pairs(corpus: &Corpus) -> PairList {
    let mut pairs = Vec::new();
    for ids in corpus.word_index().values() {
        for a in 0..ids.len() {
            for b in a + 1..ids.len() {
                pairs.push((ids[a], ids[b]));
            }
        }
    }
    pairs.sort_unstable();
    PairList { pairs }
}

/// The `r`-th pair (a < b) of 0..k in lexicographic order.
fn unrank_pair(mut r: u64, k: u64) -> (usize, usize) {
    let mut a = 0;
    loop {
        let row = k - a - 1;
        if r < row {
            return (a as usize, (a + 1 + r) as usize);
        }
        r -= row;
        a += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitBy {
    Segment,
    Speaker,
}

/// Cut points for `n` items into parts of the given fractions, each part
/// non-empty when `nonempty` is set.
fn boundaries(fractions: &[f64], n: usize, nonempty: bool) -> Vec<usize> {
    let parts = fractions.len();
    let mut cuts = Vec::with_capacity(parts + 1);
    cuts.push(0);
    let mut acc = 0.0;
    for (k, f) in fractions.iter().enumerate() {
        acc += f;
        let mut b = if k + 1 == parts {
            n
        } else {
            (acc * n as f64).round() as usize
        };
        if nonempty {
            b = b.clamp(cuts[k] + 1, n - (parts - 1 - k));
        } else {
            b = b.clamp(cuts[k], n);
        }
        cuts.push(b);
    }
    cuts
}

/// Disjoint, exhaustive partition of segment ids; each part keeps corpus
/// order.
pub fn split_corpus_ids(
    corpus: &Corpus,
    fractions: &[f64],
    by: SplitBy,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::InvalidInput("fractions must be non-negative".into()));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("fractions sum to {sum}, expected 1")));
    }
    let mut rng = rng_for(seed, "split");
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
    match by {
        SplitBy::Segment => {
            let mut ids: Vec<usize> = (0..corpus.len()).collect();
            ids.shuffle(&mut rng);
            let cuts = boundaries(fractions, ids.len(), false);
            for (p, w) in cuts.windows(2).enumerate() {
                parts[p].extend_from_slice(&ids[w[0]..w[1]]);
            }
        }
        SplitBy::Speaker => {
            let mut speakers: Vec<&String> = corpus.speaker_index().keys().collect();
            if speakers.len() < fractions.len() {
                return Err(Error::InsufficientData(format!(
                    "{} speakers cannot fill {} parts",
                    speakers.len(),
                    fractions.len()
                )));
            }
            speakers.shuffle(&mut rng);
            let cuts = boundaries(fractions, speakers.len(), true);
            for (p, w) in cuts.windows(2).enumerate() {
                for spk in &speakers[w[0]..w[1]] {
                    parts[p].extend_from_slice(&corpus.speaker_index()[*spk]);
                }
            }
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

pub fn split_corpus(
    corpus: &Corpus,
    fractions: &[f64],
    by: SplitBy,
    seed: u64,
) -> Result<Vec<Corpus>> {
    split_corpus_ids(corpus, fractions, by, seed)?
        .iter()
        .map(|ids| corpus.subset(ids))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, toy_segment, SyntheticSpec};

    fn toy(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|i| toy_segment(&format!("w{}", i % 3), &format!("s{}", i % 6), "L", &[&[1.0], &[i as f64]]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn unranking_enumerates_in_order() {
        let k = 5;
        let all: Vec<_> = (0..10).map(|r| unrank_pair(r, k)).collect();
        let mut expect = Vec::new();
        for a in 0..5 {
            for b in a + 1..5 {
                expect.push((a, b));
            }
        }
        assert_eq!(all, expect);
    }

    #[test]
    fn single_pair_repeated() {
        let c = Corpus::new(vec![
            toy_segment("a", "s1", "L", &[&[1.0], &[2.0]]),
            toy_segment("b", "s1", "L", &[&[1.0], &[2.0]]),
            toy_segment("a", "s2", "L", &[&[1.0], &[2.0]]),
        ])
        .unwrap();
        let p = sample_word_pairs(&c, 5, 0).unwrap();
        assert_eq!(p.pairs, vec![(0, 2); 5]);
        assert!(sample_word_pairs(&c, 0, 0).unwrap().is_empty());
        let none = c.subset(&[0, 1]).unwrap();
        assert!(sample_word_pairs(&none, 3, 0).is_err());
    }

    #[test]
    fn sampled_pairs_share_word_and_language() {
        let spec = SyntheticSpec {
            n_languages: 3,
            vocab_size_per_language: 20,
            instances_per_word: 4,
            ..SyntheticSpec::default()
        };
        let c = generate_corpus(&spec).unwrap();
        let p = sample_word_pairs(&c, 300_000, 7).unwrap();
        assert_eq!(p.len(), 300_000);
        p.validate(&c).unwrap();
        for &(i, j) in &p.pairs {
            let (a, b) = (c.segment(i).meta(), c.segment(j).meta());
            assert!(i != j && a.word == b.word && a.language == b.language);
        }
    }

    #[test]
    fn segment_split_sizes() {
        let c = toy(10);
        let parts = split_corpus(&c, &[0.8, 0.2], SplitBy::Segment, 1).unwrap();
        assert_eq!(parts[0].len(), 8);
        assert_eq!(parts[1].len(), 2);
        let whole = split_corpus(&c, &[1.0], SplitBy::Segment, 1).unwrap();
        assert_eq!(whole[0], c);
    }

    #[test]
    fn speaker_split_keeps_speakers_whole() {
        let c = toy(36);
        let ids = split_corpus_ids(&c, &[0.5, 0.5], SplitBy::Speaker, 3).unwrap();
        let spk = |i: usize| c.segment(i).meta().speaker.clone();
        let a: std::collections::BTreeSet<_> = ids[0].iter().map(|&i| spk(i)).collect();
        let b: std::collections::BTreeSet<_> = ids[1].iter().map(|&i| spk(i)).collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 6);
        assert_eq!(ids[0].len() + ids[1].len(), 36);
        assert!(split_corpus(&c, &[0.2; 5].iter().chain(&[0.0, 0.0]).copied().collect::<Vec<_>>(), SplitBy::Speaker, 0).is_err());
    }

    #[test]
    fn fractions_must_sum_to_one() {
        assert!(split_corpus(&toy(4), &[0.5, 0.4], SplitBy::Segment, 0).is_err());
    }
}
