//! Binary checkpoint: `SYMC`, version, a JSON header, then named f32
//! tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, Scalar};
use crate::artifact::{write_atomic, ArtifactError};

const MAGIC: &[u8; 4] = b"SYMC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_hash: String,
    step: u64,
    rng_state: Vec<u64>,
    #[serde(default)]
    meta: serde_json::Value,
    n_tensors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub step: u64,
    /// Seeds from which all remaining random streams are re-derived.
    pub rng_state: Vec<u64>,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>, vocab_hash: &str, step: u64, rng_state: Vec<u64>) -> Self {
        let tensors = model
            .arch
            .entries
            .iter()
            .map(|e| TensorRecord {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data: model.params[e.range()].iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect();
        Checkpoint {
            config: model.config().clone(),
            vocab_hash: vocab_hash.to_string(),
            step,
            rng_state,
            meta: serde_json::Value::Null,
            tensors,
        }
    }

    /// Adds a flat tensor aligned with the parameter vector (optimizer state).
    pub fn push_flat<T: Scalar>(&mut self, name: &str, data: &[T]) {
        self.tensors.push(TensorRecord {
            name: name.into(),
            shape: vec![data.len()],
            data: data.iter().map(|v| v.as_f64() as f32).collect(),
        });
    }

    pub fn flat<T: Scalar>(&self, name: &str) -> Option<Vec<T>> {
        self.tensors.iter().find(|t| t.name == name).map(|t| t.data.iter().map(|&v| T::of(f64::from(v))).collect())
    }

    pub fn to_model<T: Scalar>(&self) -> Result<Model<T>, ModelError> {
        let mut model = Model::<T>::new(&self.config, 0)?;
        for e in &model.arch.entries {
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == e.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {}", e.name)))?;
            if t.shape != e.shape {
                return Err(ModelError::Checkpoint(format!("tensor {} has shape {:?}, expected {:?}", e.name, t.shape, e.shape)));
            }
            for (dst, &src) in model.params[e.range()].iter_mut().zip(&t.data) {
                *dst = T::of(f64::from(src));
            }
        }
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<(), ModelError> {
        let header = Header {
            config: self.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            step: self.step,
            rng_state: self.rng_state.clone(),
            meta: self.meta.clone(),
            n_tensors: self.tensors.len(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        for t in &self.tensors {
            buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(t.name.as_bytes());
            buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &s in &t.shape {
                buf.extend_from_slice(&(s as u64).to_le_bytes());
            }
            for &v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(write_atomic(path, &buf)?)
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|e| ArtifactError::io(path, e))?;
        let err = |m: &str| ModelError::Checkpoint(format!("{}: {m}", path.display()));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], ModelError> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| err("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(err("not a checkpoint"));
        }
        let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = u32_of(take(4)?);
        if version != VERSION {
            return Err(err(&format!("unsupported version {version}")));
        }
        let hlen = u32_of(take(4)?) as usize;
        let header: Header = serde_json::from_slice(take(hlen)?).map_err(|e| err(&e.to_string()))?;
        let mut tensors = Vec::with_capacity(header.n_tensors);
        for _ in 0..header.n_tensors {
            let nlen = u32_of(take(4)?) as usize;
            let name = String::from_utf8(take(nlen)?.to_vec()).map_err(|_| err("tensor name is not UTF-8"))?;
            let ndim = u32_of(take(4)?) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize);
            }
            let n: usize = shape.iter().product();
            let data = take(4 * n)?.chunks(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            tensors.push(TensorRecord { name, shape, data });
        }
        if pos != bytes.len() {
            return Err(err("trailing bytes"));
        }
        Ok(Checkpoint {
            config: header.config,
            vocab_hash: header.vocab_hash,
            step: header.step,
            rng_state: header.rng_state,
            meta: header.meta,
            tensors,
        })
    }
}
