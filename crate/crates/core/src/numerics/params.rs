use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SUNCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    rng: ChaCha8Rng,
    rng_seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            rng_seed,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<ParamId, NumericsError> {
        if self.names.iter().any(|n| n == name) {
            return Err(NumericsError::Contract(format!("duplicate parameter name `{name}`")));
        }
        let mut tensor = tensor.with_grad();
        tensor.grad = Some(vec![0.0; tensor.len()]);
        self.names.push(name.to_owned());
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    /// Glorot-uniform matrix drawn from the store's own generator.
    pub fn xavier(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId, NumericsError> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64) -> Result<ParamId, NumericsError> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<ParamId, NumericsError> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<(), NumericsError> {
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            names: self.names.clone(),
            shapes: self.tensors.iter().map(|t| t.shape().to_vec()).collect(),
        };
        out.write_all(CHECKPOINT_MAGIC)?;
        serde_json::to_writer(&mut out, &header)
            .map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
        out.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(self.num_scalars() * 8);
        for t in &self.tensors {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        let mut bytes = Vec::new();
        self.write_checkpoint(&mut bytes)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Parses a checkpoint. The header line is terminated by `\n`; the payload
    /// must be exactly the number of floats the shapes imply.
    pub fn read_checkpoint<R: Read>(mut input: R, rng_seed: u64) -> Result<Self, NumericsError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(NumericsError::Checkpoint("bad magic bytes".into()));
        }
        let rest = &bytes[8..];
        let newline = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| NumericsError::Checkpoint("unterminated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&rest[..newline])
            .map_err(|e| NumericsError::Checkpoint(format!("header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(NumericsError::Checkpoint(format!(
                "unsupported version {}",
                header.version
            )));
        }
        if header.names.len() != header.shapes.len() {
            return Err(NumericsError::Checkpoint("names and shapes differ in length".into()));
        }
        let payload = &rest[newline + 1..];
        let total: usize = header.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if payload.len() != total * 8 {
            return Err(NumericsError::Checkpoint(format!(
                "payload holds {} bytes, header implies {}",
                payload.len(),
                total * 8
            )));
        }
        let mut store = ParamStore::new(rng_seed);
        let mut floats = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        for (name, shape) in header.names.iter().zip(header.shapes) {
            let n = shape.iter().product();
            let data: Vec<f64> = floats.by_ref().take(n).collect();
            store.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(store)
    }

    pub fn load(path: &Path, rng_seed: u64) -> Result<Self, NumericsError> {
        let file = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(file), rng_seed)
    }

    /// Copies values from `other` by name; every name and shape must match.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), NumericsError> {
        if other.names != self.names {
            return Err(NumericsError::Checkpoint("parameter names differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(NumericsError::Checkpoint(format!(
                    "shape {:?} does not match {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}
