//! Parameter checkpoints: a versioned header, a JSON manifest and a flat little-endian `f64` blob.
//!
//! ```text
//! b"HARCKPT\0" | u32 version | u64 manifest_len | manifest JSON | blob
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::param::Parameter;
use super::tensor::Tensor;
use crate::error::{HarError, Result};

pub const MAGIC: &[u8; 8] = b"HARCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Checkpoint {
            manifest: Manifest { kind: kind.to_string(), tensors: Vec::new(), meta },
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, tensor: &Tensor) {
        let offset = self
            .manifest
            .tensors
            .last()
            .zip(self.tensors.last())
            .map_or(0, |(e, t)| e.offset + 8 * t.len() as u64);
        self.manifest.tensors.push(TensorEntry {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            offset,
        });
        self.tensors.push(tensor.clone());
    }

    pub fn push_params<'a>(&mut self, params: impl IntoIterator<Item = &'a Parameter>) {
        for p in params {
            self.push(&p.name, &p.value);
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.manifest
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| HarError::Checkpoint(format!("missing tensor {name:?}")))
    }

    /// Copies stored values into `params`, matching by name and shape.
    pub fn restore_params<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) -> Result<()> {
        for p in params {
            let t = self.get(&p.name)?;
            if t.shape() != p.value.shape() {
                return Err(HarError::Checkpoint(format!(
                    "{}: stored shape {:?} but model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(manifest.len() as u64).to_le_bytes())?;
        w.write_all(&manifest)?;
        for t in &self.tensors {
            let mut buf = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(HarError::Checkpoint("not a checkpoint file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(HarError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut manifest = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut manifest)?;
        let manifest: Manifest = serde_json::from_slice(&manifest)?;
        let mut blob = Vec::new();
        r.read_to_end(&mut blob)?;

        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 8 * n;
            if end > blob.len() {
                return Err(HarError::Checkpoint(format!("{} runs past end of blob", e.name)));
            }
            let data = blob[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor::from_vec(&e.shape, data)?);
        }
        Ok(Checkpoint { manifest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = Checkpoint::new("test", serde_json::json!({"k": 1}));
        c.push("a", &Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap());
        c.push("b", &Tensor::from_vec(&[3], vec![9.0, 8.0, 7.0]).unwrap());
        assert_eq!(c.manifest.tensors[1].offset, 32);
        let back = Checkpoint::read_from(&c.to_bytes().unwrap()[..]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(Checkpoint::read_from(&b"NOTACKPT\x01\0\0\0"[..]).is_err());
        let mut bytes = Checkpoint::new("x", serde_json::Value::Null).to_bytes().unwrap();
        bytes[8] = 9;
        assert!(Checkpoint::read_from(&bytes[..]).is_err());
    }

    #[test]
    fn restore_checks_shape() {
        let mut c = Checkpoint::new("x", serde_json::Value::Null);
        c.push("w", &Tensor::zeros(&[2]));
        let mut p = Parameter::zeros("w", &[3]);
        assert!(c.restore_params([&mut p]).is_err());
    }
}
