//! `AWEM` checkpoints, all integers and floats little-endian:
//!
//! ```text
//! "AWEM"  u32 version (=1)
//! u32 header length, header bytes (UTF-8 `key=value` lines)
//! u32 block count
//! per block: u32 name length, name bytes, u64 value count, count × f64
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::params::Params;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AWEM";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub header: BTreeMap<String, String>,
    pub blocks: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_params<P: Params + ?Sized>(header: BTreeMap<String, String>, params: &P) -> Self {
        let mut blocks = Vec::new();
        params.visit("", &mut |name, v| blocks.push((name.to_string(), v.to_vec())));
        Checkpoint { header, blocks }
    }

    /// Copies block values into `params`, requiring identical names and sizes.
    pub fn load_into<P: Params + ?Sized>(&self, params: &mut P) -> Result<()> {
        let mut expected = Vec::new();
        params.visit("", &mut |name, v| expected.push((name.to_string(), v.len())));
        if expected.len() != self.blocks.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} blocks, model expects {}",
                self.blocks.len(),
                expected.len()
            )));
        }
        for ((name, len), (bname, values)) in expected.iter().zip(&self.blocks) {
            if name != bname || *len != values.len() {
                return Err(Error::Format(format!(
                    "block {bname} ({}) does not match {name} ({len})",
                    values.len()
                )));
            }
        }
        let mut k = 0;
        params.visit_mut("", &mut |_, v| {
            v.copy_from_slice(&self.blocks[k].1);
            k += 1;
        });
        Ok(())
    }
}

pub fn write_checkpoint<W: Write>(w: &mut W, ckpt: &Checkpoint) -> Result<()> {
    let mut header = String::new();
    for (k, v) in &ckpt.header {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Format(format!("header entry {k:?} is not representable")));
        }
        header.push_str(k);
        header.push('=');
        header.push_str(v);
        header.push('\n');
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    w.write_all(&(ckpt.blocks.len() as u32).to_le_bytes())?;
    for (name, values) in &ckpt.blocks {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(values.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(values.len() * 8);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Format(format!("truncated checkpoint while reading {what}")));
    }
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let b = read_exact(r, 4, what)?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let b = read_exact(r, 8, what)?;
    Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

fn utf8(bytes: Vec<u8>, what: &str) -> Result<String> {
    String::from_utf8(bytes).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    if read_exact(r, 4, "magic")? != MAGIC {
        return Err(Error::Format("not an AWEM checkpoint".into()));
    }
    let version = read_u32(r, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hlen = read_u32(r, "header length")? as usize;
    let text = utf8(read_exact(r, hlen, "header")?, "header")?;
    let mut header = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
        header.insert(k.to_string(), v.to_string());
    }
    let n_blocks = read_u32(r, "block count")?;
    let mut blocks = Vec::with_capacity(n_blocks.min(1 << 16) as usize);
    for _ in 0..n_blocks {
        let nlen = read_u32(r, "block name length")? as usize;
        let name = utf8(read_exact(r, nlen, "block name")?, "block name")?;
        let count = read_u64(r, "value count")? as usize;
        let bytes = read_exact(r, count.saturating_mul(8), &name)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blocks.push((name, values));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { header, blocks })
}
