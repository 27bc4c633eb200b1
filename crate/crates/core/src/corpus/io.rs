//! Corpus storage: `metadata.tsv` plus `features.bin`.
//!
//! `metadata.tsv` has a header row and the columns
//! `id, word, speaker, language, phones (space-joined), duration_ms, n_frames`.
//!
//! `features.bin` is little-endian: the magic bytes `AWE1`, `u32` D, then for
//! each segment in id order a `u32` frame count T followed by T·D `f32`
//! values, frame-major.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Corpus, Segment, SegmentMeta};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 4] = b"AWE1";
pub const METADATA_FILE: &str = "metadata.tsv";
pub const FEATURES_FILE: &str = "features.bin";
const HEADER: &str = "id\tword\tspeaker\tlanguage\tphones\tduration_ms\tn_frames";

pub fn write_metadata(corpus: &Corpus, w: &mut impl Write) -> Result<()> {
    writeln!(w, "{HEADER}")?;
    for (id, s) in corpus.segments().iter().enumerate() {
        let m = s.meta();
        for field in [&m.word, &m.speaker, &m.language] {
            if field.contains(['\t', '\n']) {
                return Err(Error::Format(format!("field {field:?} contains a tab or newline")));
            }
        }
        writeln!(
            w,
            "{id}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.word,
            m.speaker,
            m.language,
            m.phones.join(" "),
            m.duration_ms,
            s.n_frames()
        )?;
    }
    Ok(())
}

pub fn write_features(corpus: &Corpus, w: &mut impl Write) -> Result<()> {
    let d = corpus.dim().unwrap_or(0);
    w.write_all(MAGIC)?;
    w.write_all(&(d as u32).to_le_bytes())?;
    for s in corpus.segments() {
        w.write_all(&(s.n_frames() as u32).to_le_bytes())?;
        for v in s.frames().as_slice() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut meta = BufWriter::new(File::create(dir.join(METADATA_FILE))?);
    write_metadata(corpus, &mut meta)?;
    meta.flush()?;
    let mut feats = BufWriter::new(File::create(dir.join(FEATURES_FILE))?);
    write_features(corpus, &mut feats)?;
    feats.flush()?;
    Ok(())
}

/// Parsed metadata rows with their declared frame counts.
pub fn read_metadata(r: impl Read) -> Result<Vec<(SegmentMeta, usize)>> {
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim_end() != HEADER {
                return Err(Error::Format(format!("unexpected metadata header {line:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(Error::Format(format!("line {}: expected 7 columns", lineno + 1)));
        }
        let bad = |what: &str| Error::Format(format!("line {}: bad {what}", lineno + 1));
        let id: usize = cols[0].parse().map_err(|_| bad("id"))?;
        if id != rows.len() {
            return Err(Error::Format(format!("line {}: ids must be dense and ordered", lineno + 1)));
        }
        rows.push((
            SegmentMeta {
                word: cols[1].to_string(),
                speaker: cols[2].to_string(),
                language: cols[3].to_string(),
                phones: cols[4].split_whitespace().map(str::to_string).collect(),
                duration_ms: cols[5].parse().map_err(|_| bad("duration_ms"))?,
            },
            cols[6].parse().map_err(|_| bad("n_frames"))?,
        ));
    }
    Ok(rows)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Frame matrices in file order.
pub fn read_features(r: impl Read) -> Result<Vec<Matrix>> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("feature file does not start with AWE1".into()));
    }
    let d = read_u32(&mut r)? as usize;
    let mut out = Vec::new();
    loop {
        let mut b = [0u8; 4];
        match r.read(&mut b[..1])? {
            0 => break,
            _ => r.read_exact(&mut b[1..])?,
        }
        let t = u32::from_le_bytes(b) as usize;
        let mut raw = vec![0u8; t * d * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push(Matrix::from_vec(t, d, data)?);
    }
    Ok(out)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let meta = read_metadata(File::open(dir.join(METADATA_FILE))?)?;
    let frames = read_features(File::open(dir.join(FEATURES_FILE))?)?;
    if meta.len() != frames.len() {
        return Err(Error::Format(format!(
            "{} metadata rows but {} feature blocks",
            meta.len(),
            frames.len()
        )));
    }
    let segments = meta
        .into_iter()
        .zip(frames)
        .enumerate()
        .map(|(id, ((m, n), f))| {
            if f.rows() != n {
                return Err(Error::Format(format!(
                    "segment {id}: metadata says {n} frames, features hold {}",
                    f.rows()
                )));
            }
            Segment::new(f, m)
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, SyntheticSpec};

    #[test]
    fn round_trip_through_disk() {
        let c = generate_corpus(&SyntheticSpec {
            n_languages: 2,
            vocab_size_per_language: 4,
            instances_per_word: 3,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&c, dir.path()).unwrap();
        let back = read_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), c.len());
        for (a, b) in c.segments().iter().zip(back.segments()) {
            assert_eq!(a.meta(), b.meta());
            for (x, y) in a.frames().as_slice().iter().zip(b.frames().as_slice()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn feature_layout_is_exact() {
        let c = Corpus::new(vec![crate::corpus::toy_segment("ab", "s", "L", &[&[1.0, 2.0], &[3.0, 4.0]])]).unwrap();
        let mut buf = Vec::new();
        write_features(&c, &mut buf).unwrap();
        let mut expect = b"AWE1".to_vec();
        expect.extend(2u32.to_le_bytes());
        expect.extend(2u32.to_le_bytes());
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            expect.extend(v.to_le_bytes());
        }
        assert_eq!(buf, expect);
        let mut meta = Vec::new();
        write_metadata(&c, &mut meta).unwrap();
        assert_eq!(
            String::from_utf8(meta).unwrap(),
            format!("{HEADER}\n0\tab\ts\tL\ta b\t20\t2\n")
        );
    }

    #[test]
    fn corrupt_inputs_rejected() {
        assert!(read_features(&b"AWE2\x01\0\0\0"[..]).is_err());
        assert!(read_features(&b"AWE1\x01\0\0\0\x02\0\0\0\0\0"[..]).is_err());
        let bad = format!("{HEADER}\n5\ta\ts\tL\ta\t20\t2\n");
        assert!(read_metadata(bad.as_bytes()).is_err());
    }
}
