//! Named parameter tensors with seeded initialization.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{NumericError, Tensor};

/// Initialization scheme for a newly registered tensor.
#[derive(Debug, Clone, Copy)]
pub enum TensorInit {
    Zeros,
    /// Uniform in [-0.05, 0.05]; row 0 forced to zero (padding/unknown row).
    Embedding,
    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    DenseWeight { fan_in: usize },
}

/// All trainable tensors of the model, addressed by name.
///
/// Insertion order is fixed at construction and determines update order;
/// checkpoints are written sorted by name so the on-disk form is stable.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    tensors: Vec<Tensor>,
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UBRCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic (expected UBRCKPT1)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match model layout: {0}")]
    LayoutMismatch(String),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: TensorInit,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), NumericError> {
        if self.index.contains_key(name) {
            return Err(NumericError::DuplicateParam(name.to_string()));
        }
        let mut t = Tensor::zeros(rows, cols);
        match init {
            TensorInit::Zeros => {}
            TensorInit::Embedding => {
                for v in t.data_mut() {
                    *v = rng.gen_range(-0.05..0.05);
                }
                for c in 0..cols.min(t.len()) {
                    t.set(0, c, 0.0);
                }
            }
            TensorInit::DenseWeight { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                for v in t.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
        self.index.insert(name.to_string(), self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NumericError> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| NumericError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NumericError> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(NumericError::UnknownParam(name.to_string())),
        }
    }

    /// Names in registration order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    pub(crate) fn tensor_by_idx(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub(crate) fn tensor_by_idx_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub(crate) fn idx_of(&self, name: &str) -> Result<usize, NumericError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NumericError::UnknownParam(name.to_string()))
    }


    pub fn clear_grads(&mut self) {
        for t in &mut self.tensors {
            t.clear_grad();
        }
    }

    /// True when every tensor holds only finite values.
    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Bitwise snapshot of a group of tensors, for freeze assertions and
    /// best-checkpoint tracking.
    pub fn snapshot(&self, filter: impl Fn(&str) -> bool) -> Vec<(String, Tensor)> {
        self.iter()
            .filter(|(n, _)| filter(n))
            .map(|(n, t)| {
                let mut c = t.clone();
                c.clear_grad();
                (n.to_string(), c)
            })
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) {
        for (name, tensor) in snapshot {
            let idx = self.index[name.as_str()];
            self.tensors[idx] = tensor.clone();
        }
    }

    /// Write all tensors as `UBRCKPT1`: magic, tensor count, then per tensor
    /// (sorted by name) the name, shape, and raw little-endian f64 data.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), CheckpointError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        let mut sorted: Vec<&str> = self.names.iter().map(String::as_str).collect();
        sorted.sort_unstable();
        for name in sorted {
            let t = &self.tensors[self.index[name]];
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows() as u32).to_le_bytes())?;
            w.write_all(&(t.cols() as u32).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Load a checkpoint into this store. Every tensor in the file must exist
    /// here with the same shape, and vice versa.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<(), CheckpointError> {
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let count = read_u64(&mut r)? as usize;
        if count != self.tensors.len() {
            return Err(CheckpointError::LayoutMismatch(format!(
                "file has {count} tensors, model has {}",
                self.tensors.len()
            )));
        }
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| CheckpointError::Corrupt("non-utf8 tensor name".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let idx = *self.index.get(&name).ok_or_else(|| {
                CheckpointError::LayoutMismatch(format!("unexpected tensor `{name}`"))
            })?;
            if self.tensors[idx].shape() != (rows, cols) {
                return Err(CheckpointError::LayoutMismatch(format!(
                    "tensor `{name}` has shape {:?} in file, {:?} in model",
                    (rows, cols),
                    self.tensors[idx].shape()
                )));
            }
            let mut data = vec![0.0f64; rows * cols];
            let mut buf = [0u8; 8];
            for v in &mut data {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            self.tensors[idx] = Tensor::from_vec(rows, cols, data);
        }
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
