//! Binary parameter checkpoints.
//!
//! Layout: the line `trnews-ckpt v1`, then for every tensor in name order a
//! line `name<TAB>rank<TAB>dim_1<TAB>...<TAB>dim_rank` followed by the
//! values as little-endian `f64`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::{ParameterSet, Tensor};

pub const HEADER: &str = "trnews-ckpt v1";

pub fn encode(params: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.scalar_count() * 8);
    out.extend_from_slice(HEADER.as_bytes());
    out.push(b'\n');
    for (name, t) in params.iter() {
        let mut line = format!("{name}\t{}", t.rank());
        for d in t.dims() {
            line.push('\t');
            line.push_str(&d.to_string());
        }
        line.push('\n');
        out.extend_from_slice(line.as_bytes());
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint(format!("unterminated line at byte {}", *pos)))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn decode(bytes: &[u8]) -> Result<ParameterSet> {
    let mut pos = 0;
    let header = read_line(bytes, &mut pos)?;
    if header != HEADER {
        return Err(Error::Checkpoint(format!("bad header `{header}`")));
    }
    let mut params = ParameterSet::new();
    while pos < bytes.len() {
        let line = read_line(bytes, &mut pos)?;
        let mut fields = line.split('\t');
        let name = fields
            .next()
            .filter(|n| !n.is_empty())
            .ok_or_else(|| Error::Checkpoint("missing tensor name".into()))?;
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("bad descriptor for `{name}`")))
        };
        let rank = parse(fields.next())?;
        let dims = (0..rank)
            .map(|_| parse(fields.next()))
            .collect::<Result<Vec<_>>>()?;
        if fields.next().is_some() {
            return Err(Error::Checkpoint(format!("trailing dims for `{name}`")));
        }
        let n: usize = dims.iter().product();
        let end = pos + n * 8;
        if end > bytes.len() {
            return Err(Error::Checkpoint(format!("truncated values for `{name}`")));
        }
        let values = bytes[pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        pos = end;
        if params.contains(name) {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
        params.insert(name, Tensor::from_vec(&dims, values)?)?;
    }
    Ok(params)
}

pub fn save(params: &ParameterSet, path: &Path) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParameterSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// SHA-256 of the encoded checkpoint, hex.
pub fn hash(params: &ParameterSet) -> String {
    let digest = Sha256::digest(encode(params));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
