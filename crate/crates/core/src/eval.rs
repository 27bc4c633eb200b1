//! Same-different word discrimination.
//!
//! Every unordered pair of test segments is ranked by distance (ties broken
//! by pair index, pairs enumerated as (0,1), (0,2), …, (n−2,n−1)), and
//! average precision is the mean, over positive pairs, of the precision at
//! that pair's rank.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::corpus::SegmentMeta;
use crate::error::{Error, Result};
use crate::features::Embedding;
use crate::matrix::{dot, norm};

/// `1 − cos(u, v)`, with the similarity of an all-zero vector taken as 0.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        1.0
    } else {
        1.0 - dot(u, v) / (nu * nv)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SameDiffMode {
    /// Positive iff same word.
    All,
    /// Positive iff same word and different speakers; same-speaker repeats
    /// stay in the ranking as negatives.
    CrossSpeaker,
    /// As `CrossSpeaker`, but same-word same-speaker pairs are dropped from
    /// the ranking altogether.
    CrossSpeakerExclusive,
}

impl fmt::Display for SameDiffMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SameDiffMode::All => "all",
            SameDiffMode::CrossSpeaker => "cross_speaker",
            SameDiffMode::CrossSpeakerExclusive => "cross_speaker_exclusive",
        })
    }
}

impl std::str::FromStr for SameDiffMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SameDiffMode::All),
            "cross_speaker" => Ok(SameDiffMode::CrossSpeaker),
            "cross_speaker_exclusive" => Ok(SameDiffMode::CrossSpeakerExclusive),
            other => Err(Error::InvalidConfig(format!("unknown same-different mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SameDiffResult {
    pub ap: f64,
    /// (recall, precision) at every positive in rank order.
    pub pr_curve: Vec<(f64, f64)>,
    pub n_positive_pairs: usize,
    pub n_total_pairs: usize,
    pub mode: SameDiffMode,
}

impl SameDiffResult {
    pub fn write_metrics(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "mode\tap\tn_positive_pairs\tn_total_pairs")?;
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            self.mode, self.ap, self.n_positive_pairs, self.n_total_pairs
        )?;
        Ok(())
    }

    pub fn write_pr_curve(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "recall\tprecision")?;
        for (r, p) in &self.pr_curve {
            writeln!(w, "{r}\t{p}")?;
        }
        Ok(())
    }
}

/// Condensed upper-triangle distances in pair-index order.
pub fn condensed_distances<F>(n: usize, dist: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| dist(i, j)).collect::<Vec<f64>>())
        .collect::<Vec<_>>()
        .concat()
}

/// Same-different AP from precomputed condensed distances.
pub fn samediff_from_distances(
    distances: &[f64],
    metas: &[SegmentMeta],
    mode: SameDiffMode,
) -> Result<SameDiffResult> {
    let n = metas.len();
    if n < 2 {
        return Err(Error::InsufficientData("same-different needs at least 2 segments".into()));
    }
    if distances.len() != n * (n - 1) / 2 {
        return Err(Error::Shape(format!(
            "{} distances for {n} segments",
            distances.len()
        )));
    }
    if let Some(i) = distances.iter().position(|d| !d.is_finite()) {
        return Err(Error::NonFinite(format!("distance of pair {i}")));
    }
    let mut ranked: Vec<(usize, bool)> = Vec::with_capacity(distances.len());
    let mut idx = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&metas[i], &metas[j]);
            let same_word = a.word == b.word && a.language == b.language;
            let same_speaker = a.speaker == b.speaker;
            let keep = !(mode == SameDiffMode::CrossSpeakerExclusive && same_word && same_speaker);
            if keep {
                let positive = match mode {
                    SameDiffMode::All => same_word,
                    _ => same_word && !same_speaker,
                };
                ranked.push((idx, positive));
            }
            idx += 1;
        }
    }
    let n_positive = ranked.iter().filter(|(_, p)| *p).count();
    if n_positive == 0 {
        return Err(Error::InsufficientData(format!("no positive pairs in {mode} mode")));
    }
    ranked.sort_by(|x, y| distances[x.0].total_cmp(&distances[y.0]).then(x.0.cmp(&y.0)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    let mut pr_curve = Vec::with_capacity(n_positive);
    for (rank, (_, positive)) in ranked.iter().enumerate() {
        if *positive {
            hits += 1;
            let precision = hits as f64 / (rank + 1) as f64;
            sum += precision;
            pr_curve.push((hits as f64 / n_positive as f64, precision));
        }
    }
    Ok(SameDiffResult {
        ap: sum / n_positive as f64,
        pr_curve,
        n_positive_pairs: n_positive,
        n_total_pairs: ranked.len(),
        mode,
    })
}

/// Same-different AP of embeddings under cosine distance.
pub fn samediff_ap(
    embeddings: &[Embedding],
    metas: &[SegmentMeta],
    mode: SameDiffMode,
) -> Result<SameDiffResult> {
    if embeddings.len() != metas.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} segments",
            embeddings.len(),
            metas.len()
        )));
    }
    if let Some(e) = embeddings.first() {
        if embeddings.iter().any(|x| x.dim() != e.dim()) {
            return Err(Error::Shape("embeddings differ in dimension".into()));
        }
    }
    let d = condensed_distances(embeddings.len(), |i, j| {
        cosine_distance(embeddings[i].as_slice(), embeddings[j].as_slice())
    });
    samediff_from_distances(&d, metas, mode)
}
