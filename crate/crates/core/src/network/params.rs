use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetError, NetworkConfig, Result};
use crate::scalar::Real;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MESHPYRW";

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Running statistics are stored here too but are not trained.
    pub trainable: bool,
}

/// Named tensors in creation order. Trainable entries can be addressed by a
/// single flat index, which the gradient check and the optimizer use.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<T> {
    pub config: NetworkConfig,
    pub tensors: Vec<Tensor<T>>,
}

/// Gradients aligned with [`NetParams::tensors`]; zero for non-trainable
/// tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T>(pub Vec<Vec<T>>);

impl<T: Real> Gradients<T> {
    pub fn zeros_like(p: &NetParams<T>) -> Self {
        Self(p.tensors.iter().map(|t| vec![T::zero(); t.data.len()]).collect())
    }

    /// Trainable gradients in flat order.
    pub fn flat(&self, p: &NetParams<T>) -> Vec<T> {
        self.0.iter().zip(&p.tensors).filter(|(_, t)| t.trainable).flat_map(|(g, _)| g.iter().copied()).collect()
    }
}

pub(crate) struct Builder<T> {
    rng: ChaCha8Rng,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> Builder<T> {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), tensors: Vec::new() }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<T>, trainable: bool) -> usize {
        self.tensors.push(Tensor { name, shape, data, trainable });
        self.tensors.len() - 1
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn weight(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let bound = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols).map(|_| T::lit(self.rng.random_range(-bound..bound))).collect();
        self.push(name, vec![rows, cols], data, true)
    }

    pub fn constant(&mut self, name: String, n: usize, v: f64, trainable: bool) -> usize {
        self.push(name, vec![n], vec![T::lit(v); n], trainable)
    }
}

impl<T: Real> NetParams<T> {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().filter(|t| t.trainable).map(|t| t.data.len()).sum()
    }

    fn locate(&self, mut k: usize) -> (usize, usize) {
        for (i, t) in self.tensors.iter().enumerate() {
            if !t.trainable {
                continue;
            }
            if k < t.data.len() {
                return (i, k);
            }
            k -= t.data.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn get_flat(&self, k: usize) -> T {
        let (i, j) = self.locate(k);
        self.tensors[i].data[j]
    }

    pub fn set_flat(&mut self, k: usize, v: T) {
        let (i, j) = self.locate(k);
        self.tensors[i].data[j] = v;
    }

    /// Name of the tensor holding flat index `k`.
    pub fn flat_name(&self, k: usize) -> &str {
        &self.tensors[self.locate(k).0].name
    }

    pub fn trainable_flat(&self) -> Vec<T> {
        self.tensors.iter().filter(|t| t.trainable).flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: NetworkConfig,
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

/// `MESHPYRW`, little-endian `u32` version, `u64` header length, JSON
/// header, then every tensor as row-major little-endian `f64`.
pub fn save_checkpoint<T: Real>(params: &NetParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        tensors: params.tensors.iter().map(|t| TensorHeader { name: t.name.clone(), shape: t.shape.clone(), trainable: t.trainable }).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * params.tensors.iter().map(|t| t.data.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &params.tensors {
        for x in &t.data {
            out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<NetParams<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| NetError::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Checkpoint(format!("version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut pos = 20 + hlen;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for th in header.tensors {
        let n: usize = th.shape.iter().product();
        let raw = bytes.get(pos..pos + 8 * n).ok_or_else(|| bad("truncated tensor data"))?;
        pos += 8 * n;
        let data = raw.chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
        tensors.push(Tensor { name: th.name, shape: th.shape, data, trainable: th.trainable });
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(NetParams { config: header.config, tensors })
}
