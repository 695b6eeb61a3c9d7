//! Binary container for named tensors (network checkpoints, NIQE models,
//! raw float sidecars).
//!
//! Layout, all little-endian:
//!   magic "DEAN" | version u32 = 1 | tensor count u32 |
//!   per tensor: name (u16 length + UTF-8) | rank u8 | dims u32 each | f32 data
//!
//! Round-trips must be bit-exact, which is why values are stored as raw f32
//! bits rather than going through any text format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DEAN";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint file (bad magic bytes)")]
    BadMagic { path: String },
    #[error("{path}: unsupported checkpoint version {found} (expected {VERSION})")]
    BadVersion { path: String, found: u32 },
    #[error("{path}: malformed entry: {detail}")]
    Malformed { path: String, detail: String },
    #[error("missing tensor {name:?} in checkpoint")]
    MissingTensor { name: String },
    #[error("tensor {name:?}: checkpoint shape {found:?} does not match expected shape {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
}

/// An ordered named-tensor container. Entries keep insertion-independent
/// (sorted) order so identical contents serialize identically.
#[derive(Debug, Default, Clone)]
pub struct Checkpoint {
    entries: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_raw(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.insert(name.to_string(), (shape, data));
    }

    pub fn insert<T: Scalar>(&mut self, name: &str, tensor: &Tensor<T>) {
        let data = tensor.data().iter().map(|v| v.as_f64() as f32).collect();
        self.insert_raw(name, tensor.shape().to_vec(), data);
    }

    pub fn get_raw(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.entries
            .get(name)
            .map(|(s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Copy stored values into an existing tensor; fails loudly when shapes
    /// disagree, printing both.
    pub fn load_into<T: Scalar>(&self, name: &str, tensor: &Tensor<T>) -> Result<(), CheckpointError> {
        let (shape, data) = self
            .get_raw(name)
            .ok_or_else(|| CheckpointError::MissingTensor {
                name: name.to_string(),
            })?;
        if shape != tensor.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                found: shape.to_vec(),
                expected: tensor.shape().to_vec(),
            });
        }
        let mut dst = tensor.data_mut();
        for (d, &s) in dst.iter_mut().zip(data) {
            *d = T::from_f64(s as f64);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let wrap = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
        let mut go = || -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
            for (name, (shape, data)) in &self.entries {
                w.write_all(&(name.len() as u16).to_le_bytes())?;
                w.write_all(name.as_bytes())?;
                w.write_all(&[shape.len() as u8])?;
                for &d in shape {
                    w.write_all(&(d as u32).to_le_bytes())?;
                }
                for &v in data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.flush()
        };
        go().map_err(wrap)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let wrap = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let p = path.display().to_string();
        let mut r = BufReader::new(File::open(path).map_err(wrap)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(wrap)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic { path: p });
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(wrap)?;
        let version = u32::from_le_bytes(u32buf);
        if version != VERSION {
            return Err(CheckpointError::BadVersion {
                path: p,
                found: version,
            });
        }
        r.read_exact(&mut u32buf).map_err(wrap)?;
        let count = u32::from_le_bytes(u32buf);
        let mut out = Checkpoint::new();
        for _ in 0..count {
            let mut u16buf = [0u8; 2];
            r.read_exact(&mut u16buf).map_err(wrap)?;
            let name_len = u16::from_le_bytes(u16buf) as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes).map_err(wrap)?;
            let name = String::from_utf8(name_bytes).map_err(|e| CheckpointError::Malformed {
                path: p.clone(),
                detail: format!("tensor name is not UTF-8: {}", e),
            })?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank).map_err(wrap)?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                r.read_exact(&mut u32buf).map_err(wrap)?;
                shape.push(u32::from_le_bytes(u32buf) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                r.read_exact(&mut u32buf).map_err(wrap)?;
                data.push(f32::from_le_bytes(u32buf));
            }
            out.entries.insert(name, (shape, data));
        }
        Ok(out)
    }
}
