//! Checkpoint and dataset container: a JSON manifest on the first line,
//! then named tensor blobs in the tensor serialization format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(manifest: Value) -> Self {
        Checkpoint {
            manifest,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::format("checkpoint", format!("missing tensor '{name}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        serde_json::to_writer(&mut *w, &self.manifest)?;
        w.write_all(b"\n")?;
        for (name, t) in &self.tensors {
            write_tensor(w, name, t)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: &mut R, source: &str) -> Result<Self> {
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)
            .map_err(|e| Error::io(source, e))?;
        if line.last() != Some(&b'\n') {
            return Err(Error::format(source, "missing manifest line"));
        }
        let manifest: Value = serde_json::from_slice(&line[..line.len() - 1])
            .map_err(|e| Error::format(source, format!("bad manifest: {e}")))?;
        let mut tensors = Vec::new();
        while let Some(entry) = read_tensor(r, source)? {
            tensors.push(entry);
        }
        Ok(Checkpoint { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file), &path.display().to_string())
    }

    pub fn manifest_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .manifest
            .get(key)
            .ok_or_else(|| Error::format("checkpoint", format!("manifest lacks '{key}'")))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::format("checkpoint", format!("manifest field '{key}': {e}")))
    }
}
