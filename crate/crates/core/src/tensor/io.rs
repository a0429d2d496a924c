//! Blob format: one JSON header line `{"shape":[...],"name":"..."}` followed
//! by the values as flat little-endian `f64`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct BlobHeader {
    shape: Vec<usize>,
    name: String,
}

pub fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor) -> std::io::Result<()> {
    let header = BlobHeader {
        shape: t.shape().to_vec(),
        name: name.to_string(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

/// Reads the next blob; `Ok(None)` at a clean end of stream.
pub fn read_tensor<R: BufRead>(r: &mut R, source: &str) -> Result<Option<(String, Tensor)>> {
    let mut line = Vec::new();
    let n = r
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::io(source, e))?;
    if n == 0 {
        return Ok(None);
    }
    if line.last() != Some(&b'\n') {
        return Err(Error::format(source, "truncated tensor header"));
    }
    let header: BlobHeader = serde_json::from_slice(&line[..line.len() - 1])
        .map_err(|e| Error::format(source, format!("bad tensor header: {e}")))?;
    let count: usize = header.shape.iter().product();
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(source, format!("truncated tensor '{}'", header.name)))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let t = Tensor::new(header.shape, data)
        .map_err(|e| Error::format(source, format!("tensor '{}': {e}", header.name)))?;
    Ok(Some((header.name, t)))
}
