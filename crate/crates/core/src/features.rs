//! Non-neural frame transforms: the downsampling embedder and regression
//! deltas.

use std::io::{BufRead, BufReader, Read, Write};

use crate::corpus::Segment;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A fixed-dimensional embedding vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(v: Vec<f64>) -> Self {
        Embedding(v)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub const DEFAULT_KEEP: usize = 10;

/// Keeps `n_keep` equally spaced frames, linearly interpolating between the
/// neighbouring frames, and concatenates them.
pub fn downsample_frames(frames: &Matrix, n_keep: usize) -> Result<Embedding> {
    let t = frames.rows();
    if t < 2 {
        return Err(Error::InvalidInput(format!("downsampling needs T >= 2, got {t}")));
    }
    if n_keep < 2 {
        return Err(Error::InvalidInput(format!("n_keep must be at least 2, got {n_keep}")));
    }
    let d = frames.cols();
    let mut out = Vec::with_capacity(n_keep * d);
    for i in 0..n_keep {
        let p = (i * (t - 1)) as f64 / (n_keep - 1) as f64;
        let lo = p.floor() as usize;
        let hi = (p.ceil() as usize).min(t - 1);
        let frac = p - lo as f64;
        let (a, b) = (frames.row(lo), frames.row(hi));
        if frac == 0.0 {
            out.extend_from_slice(a);
        } else {
            out.extend(a.iter().zip(b).map(|(x, y)| (1.0 - frac) * x + frac * y));
        }
    }
    Ok(Embedding(out))
}

pub fn downsample_embed(segment: &Segment, n_keep: usize) -> Result<Embedding> {
    downsample_frames(segment.frames(), n_keep)
}

/// Regression deltas over ±`window` frames with edge frames replicated.
pub fn deltas(frames: &Matrix, window: usize) -> Matrix {
    let (t, d) = (frames.rows(), frames.cols());
    let denom: f64 = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Matrix::zeros(t, d);
    if window == 0 {
        return out;
    }
    for i in 0..t {
        let row = out.row_mut(i);
        for n in 1..=window {
            let fwd = frames.row((i + n).min(t - 1));
            let back = frames.row(i.saturating_sub(n));
            for j in 0..d {
                row[j] += n as f64 * (fwd[j] - back[j]);
            }
        }
        row.iter_mut().for_each(|v| *v /= denom);
    }
    out
}

/// `[x ; Δx ; ΔΔx]` per frame.
pub fn append_deltas_frames(frames: &Matrix, window: usize) -> Result<Matrix> {
    if frames.rows() < 2 {
        return Err(Error::InvalidInput("deltas need T >= 2".into()));
    }
    let delta = deltas(frames, window);
    let delta2 = deltas(&delta, window);
    let d = frames.cols();
    let mut out = Matrix::zeros(frames.rows(), 3 * d);
    for i in 0..frames.rows() {
        let row = out.row_mut(i);
        row[..d].copy_from_slice(frames.row(i));
        row[d..2 * d].copy_from_slice(delta.row(i));
        row[2 * d..].copy_from_slice(delta2.row(i));
    }
    Ok(out)
}

pub fn append_deltas(segment: &Segment, window: usize) -> Result<Segment> {
    let frames = append_deltas_frames(segment.frames(), window)?;
    Segment::new(frames, segment.meta().clone())
}

/// Embedding table: a header line, then `id  v0  v1 ...` per row. Values
/// are printed in shortest round-trip form, so reading back is exact.
pub fn write_embeddings(ids: &[usize], embeddings: &[Embedding], w: &mut impl Write) -> Result<()> {
    if ids.len() != embeddings.len() {
        return Err(Error::Shape(format!("{} ids for {} embeddings", ids.len(), embeddings.len())));
    }
    let dim = embeddings.first().map_or(0, Embedding::dim);
    write!(w, "id")?;
    for k in 0..dim {
        write!(w, "\tz{k}")?;
    }
    writeln!(w)?;
    for (id, e) in ids.iter().zip(embeddings) {
        if e.dim() != dim {
            return Err(Error::Shape("embeddings differ in dimension".into()));
        }
        write!(w, "{id}")?;
        for v in &e.0 {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_embeddings(r: impl Read) -> Result<(Vec<usize>, Vec<Embedding>)> {
    let mut ids = Vec::new();
    let mut out = Vec::new();
    let mut dim = None;
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split('\t').collect();
        if n == 0 {
            if fields[0] != "id" {
                return Err(Error::Format("embedding table must start with an id column".into()));
            }
            dim = Some(fields.len() - 1);
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("embedding table line {}", n + 1));
        if Some(fields.len() - 1) != dim {
            return Err(bad());
        }
        ids.push(fields[0].parse().map_err(|_| bad())?);
        let v = fields[1..]
            .iter()
            .map(|x| x.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        out.push(Embedding(v));
    }
    if dim.is_none() {
        return Err(Error::Format("empty embedding table".into()));
    }
    Ok((ids, out))
}
