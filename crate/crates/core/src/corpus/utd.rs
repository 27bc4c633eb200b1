//! Simulated unsupervised term discovery.
//!
//! The simulator starts from the true word groupings of a single-language
//! corpus and corrupts them in two independent ways: label swaps (an instance
//! moves to a different cluster) and end-point jitter (span boundaries move
//! inward/outward and are clamped to the source segment). Every random draw
//! is made whatever the flags say, so toggling `fix_labels` or
//! `fix_boundaries` changes only that one kind of noise.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use rand::Rng;

use super::{Corpus, PairList};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionConfig {
    pub label_error_rate: f64,
    pub boundary_jitter_frames: usize,
    /// Cap on training pairs drawn from the clusters (0 = use all).
    pub n_pairs: usize,
    pub fix_boundaries: bool,
    pub fix_labels: bool,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            label_error_rate: 0.3,
            boundary_jitter_frames: 2,
            n_pairs: 0,
            fix_boundaries: false,
            fix_labels: false,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.label_error_rate) {
            return Err(Error::InvalidConfig(format!(
                "label_error_rate {} outside [0, 1]",
                self.label_error_rate
            )));
        }
        Ok(())
    }
}

/// Frames `start..end` of segment `segment`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub segment: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub label: String,
    pub spans: Vec<Span>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DiscoveredClusters {
    pub clusters: Vec<Cluster>,
}

impl DiscoveredClusters {
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        let mut seen = vec![false; corpus.len()];
        for c in &self.clusters {
            if c.label.is_empty() {
                return Err(Error::InvalidInput("empty cluster label".into()));
            }
            for s in &c.spans {
                if s.segment >= corpus.len() {
                    return Err(Error::InvalidInput(format!("span segment {} out of range", s.segment)));
                }
                if s.end <= s.start || s.end > corpus.segment(s.segment).n_frames() {
                    return Err(Error::InvalidInput(format!(
                        "span {}..{} invalid for segment {}",
                        s.start, s.end, s.segment
                    )));
                }
                if std::mem::replace(&mut seen[s.segment], true) {
                    return Err(Error::InvalidInput(format!(
                        "segment {} appears in more than one span",
                        s.segment
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_spans(&self) -> usize {
        self.clusters.iter().map(|c| c.spans.len()).sum()
    }

    /// Segment id → (cluster index, span), for every covered segment.
    pub fn assignments(&self) -> BTreeMap<usize, (usize, Span)> {
        let mut out = BTreeMap::new();
        for (ci, c) in self.clusters.iter().enumerate() {
            for s in &c.spans {
                out.insert(s.segment, (ci, *s));
            }
        }
        out
    }
}

fn cluster_label(i: usize) -> String {
    format!("utd{i:05}")
}

/// Corrupted word clusters for a single-language corpus.
pub fn simulate_utd(corpus: &Corpus, cfg: &CorruptionConfig) -> Result<DiscoveredClusters> {
    cfg.validate()?;
    if corpus.languages().len() > 1 {
        return Err(Error::InvalidInput(format!(
            "term discovery is monolingual; corpus holds {} languages",
            corpus.languages().len()
        )));
    }
    let labels = corpus.word_labels();
    let n_clusters = corpus.word_types().len();
    let mut rng = rng_for(cfg.seed, "utd");
    let jitter = cfg.boundary_jitter_frames as i64;

    let mut members: Vec<Vec<Span>> = vec![Vec::new(); n_clusters];
    for (id, seg) in corpus.segments().iter().enumerate() {
        let u: f64 = rng.random();
        let other = if n_clusters > 1 {
            let r = rng.random_range(0..n_clusters - 1);
            if r >= labels[id] {
                r + 1
            } else {
                r
            }
        } else {
            labels[id]
        };
        let ds = rng.random_range(0..=2 * jitter) - jitter;
        let de = rng.random_range(0..=2 * jitter) - jitter;

        let cluster = if !cfg.fix_labels && n_clusters > 1 && u < cfg.label_error_rate {
            other
        } else {
            labels[id]
        };
        let t = seg.n_frames() as i64;
        let (start, end) = if cfg.fix_boundaries {
            (0, t)
        } else {
            let start = ds.clamp(0, t - 2);
            let end = (t + de).clamp(start + 2, t);
            (start, end)
        };
        members[cluster].push(Span {
            segment: id,
            start: start as usize,
            end: end as usize,
        });
    }
    let clusters = members
        .into_iter()
        .enumerate()
        .filter(|(_, spans)| !spans.is_empty())
        .map(|(i, spans)| Cluster {
            label: cluster_label(i),
            spans,
        })
        .collect();
    Ok(DiscoveredClusters { clusters })
}

/// Every unordered within-cluster pair of segment ids, sorted ascending.
pub fn pairs_from_clusters(clusters: &DiscoveredClusters) -> PairList {
    let mut pairs = Vec::new();
    for c in &clusters.clusters {
        let mut ids: Vec<usize> = c.spans.iter().map(|s| s.segment).collect();
        ids.sort_unstable();
        for a in 0..ids.len() {
            for b in a + 1..ids.len() {
                pairs.push((ids[a], ids[b]));
            }
        }
    }
    pairs.sort_unstable();
    PairList { pairs }
}

/// One `cluster  segment  start  end` row per span, clusters in order.
pub fn write_clusters(clusters: &DiscoveredClusters, w: &mut impl Write) -> Result<()> {
    writeln!(w, "cluster\tsegment\tstart\tend")?;
    for c in &clusters.clusters {
        for s in &c.spans {
            writeln!(w, "{}\t{}\t{}\t{}", c.label, s.segment, s.start, s.end)?;
        }
    }
    Ok(())
}

/// Inverse of [`write_clusters`]. Rows of one cluster must be contiguous.
pub fn read_clusters(r: impl Read) -> Result<DiscoveredClusters> {
    let mut out = DiscoveredClusters::default();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line != "cluster\tsegment\tstart\tend" {
                return Err(Error::Format("unexpected cluster table header".into()));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Format(format!("cluster table line {}: {line:?}", n + 1));
        if f.len() != 4 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
        let span = Span {
            segment: num(f[1])?,
            start: num(f[2])?,
            end: num(f[3])?,
        };
        match out.clusters.last_mut() {
            Some(c) if c.label == f[0] => c.spans.push(span),
            _ => {
                if out.clusters.iter().any(|c| c.label == f[0]) {
                    return Err(Error::Format(format!("cluster {} is not contiguous", f[0])));
                }
                out.clusters.push(Cluster {
                    label: f[0].to_string(),
                    spans: vec![span],
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, toy_segment, SyntheticSpec};

    fn mono(vocab: usize, instances: usize) -> Corpus {
        generate_corpus(&SyntheticSpec {
            n_languages: 1,
            vocab_size_per_language: vocab,
            instances_per_word: instances,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn clean() -> CorruptionConfig {
        CorruptionConfig {
            label_error_rate: 0.0,
            boundary_jitter_frames: 0,
            ..CorruptionConfig::default()
        }
    }

    fn mislabelled(corpus: &Corpus, d: &DiscoveredClusters) -> Vec<usize> {
        let labels = corpus.word_labels();
        d.assignments()
            .iter()
            .filter(|(&seg, (ci, _))| d.clusters[*ci].label != cluster_label(labels[seg]))
            .map(|(&seg, _)| seg)
            .collect()
    }

    #[test]
    fn noiseless_is_ground_truth() {
        let c = mono(10, 5);
        let d = simulate_utd(&c, &clean()).unwrap();
        assert_eq!(d.clusters.len(), 10);
        for (key, cl) in c.word_types().iter().zip(&d.clusters) {
            let ids: Vec<usize> = cl.spans.iter().map(|s| s.segment).collect();
            assert_eq!(ids, c.word_ids(key));
            for s in &cl.spans {
                assert_eq!((s.start, s.end), (0, c.segment(s.segment).n_frames()));
            }
        }
        d.validate(&c).unwrap();
    }

    #[test]
    fn forced_reassignment_with_two_clusters() {
        let c = mono(2, 6);
        let cfg = CorruptionConfig {
            label_error_rate: 1.0,
            boundary_jitter_frames: 0,
            ..CorruptionConfig::default()
        };
        let d = simulate_utd(&c, &cfg).unwrap();
        assert_eq!(mislabelled(&c, &d).len(), c.len());
    }

    #[test]
    fn error_rate_is_respected() {
        let c = mono(100, 12);
        assert!(c.len() >= 1000);
        let cfg = CorruptionConfig {
            label_error_rate: 0.3,
            seed: 11,
            ..CorruptionConfig::default()
        };
        let d = simulate_utd(&c, &cfg).unwrap();
        let frac = mislabelled(&c, &d).len() as f64 / c.len() as f64;
        assert!((frac - 0.3).abs() <= 0.05, "fraction {frac}");
    }

    #[test]
    fn mislabelled_sets_are_nested() {
        let c = mono(30, 6);
        let run = |r| {
            let cfg = CorruptionConfig {
                label_error_rate: r,
                seed: 5,
                ..CorruptionConfig::default()
            };
            mislabelled(&c, &simulate_utd(&c, &cfg).unwrap())
        };
        let lo = run(0.2);
        let hi = run(0.6);
        assert!(lo.len() <= hi.len());
        assert!(lo.iter().all(|s| hi.contains(s)));
    }

    #[test]
    fn flags_undo_their_own_noise_only() {
        let c = mono(20, 6);
        let noisy = CorruptionConfig {
            seed: 9,
            ..CorruptionConfig::default()
        };
        let raw = simulate_utd(&c, &noisy).unwrap();
        let fixb = simulate_utd(&c, &CorruptionConfig { fix_boundaries: true, ..noisy.clone() }).unwrap();
        let fixl = simulate_utd(&c, &CorruptionConfig { fix_labels: true, ..noisy.clone() }).unwrap();
        let both = simulate_utd(
            &c,
            &CorruptionConfig {
                fix_labels: true,
                fix_boundaries: true,
                ..noisy
            },
        )
        .unwrap();
        let ra = raw.assignments();
        let ba = fixb.assignments();
        let la = fixl.assignments();
        for seg in 0..c.len() {
            // Same labels with boundaries fixed, same boundaries with labels fixed.
            assert_eq!(raw.clusters[ra[&seg].0].label, fixb.clusters[ba[&seg].0].label);
            assert_eq!(ra[&seg].1, la[&seg].1);
            assert_eq!(ba[&seg].1.end - ba[&seg].1.start, c.segment(seg).n_frames());
            let s = ra[&seg].1;
            assert!(s.end >= s.start + 2 && s.end <= c.segment(seg).n_frames());
        }
        assert!(mislabelled(&c, &fixl).is_empty());
        assert_eq!(both, simulate_utd(&c, &clean()).unwrap());
    }

    #[test]
    fn multilingual_rejected() {
        let c = generate_corpus(&SyntheticSpec {
            n_languages: 2,
            vocab_size_per_language: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        assert!(simulate_utd(&c, &clean()).is_err());
        let bad = CorruptionConfig {
            label_error_rate: 1.5,
            ..clean()
        };
        assert!(simulate_utd(&mono(3, 2), &bad).is_err());
    }

    fn clusters_of(sizes: &[usize]) -> DiscoveredClusters {
        let mut next = 0;
        DiscoveredClusters {
            clusters: sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| Cluster {
                    label: cluster_label(i),
                    spans: (0..n)
                        .map(|_| {
                            next += 1;
                            Span {
                                segment: next - 1,
                                start: 0,
                                end: 2,
                            }
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn pair_counts() {
        assert_eq!(pairs_from_clusters(&clusters_of(&[3])).pairs, vec![(0, 1), (0, 2), (1, 2)]);
        assert!(pairs_from_clusters(&clusters_of(&[1, 1, 1])).pairs.is_empty());
        assert_eq!(pairs_from_clusters(&clusters_of(&[4, 2])).pairs.len(), 7);
    }

    #[test]
    fn validate_catches_bad_spans() {
        let c = Corpus::new(vec![toy_segment("a", "s", "L", &[&[1.0], &[2.0]])]).unwrap();
        let mut d = clusters_of(&[1]);
        d.validate(&c).unwrap();
        d.clusters[0].spans[0].end = 3;
        assert!(d.validate(&c).is_err());
    }

    #[test]
    fn cluster_table_round_trip() {
        let c = DiscoveredClusters {
            clusters: vec![
                Cluster {
                    label: "a".into(),
                    spans: vec![Span { segment: 0, start: 0, end: 3 }, Span { segment: 2, start: 1, end: 4 }],
                },
                Cluster {
                    label: "b".into(),
                    spans: vec![Span { segment: 1, start: 0, end: 2 }],
                },
            ],
        };
        let mut buf = Vec::new();
        write_clusters(&c, &mut buf).unwrap();
        assert_eq!(read_clusters(buf.as_slice()).unwrap(), c);
        assert!(read_clusters("cluster\tsegment\tstart\tend\na\t0\t0\t2\nb\t1\t0\t2\na\t2\t0\t2\n".as_bytes()).is_err());
    }
}
