//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "FLNK" | version: u16 | layer count: u32
//! per layer, weight then bias: rank: u32 | dims: u32 * rank | payload: f32 * prod(dims)
//! FNV-1a 64 checksum of all payload bytes: u64
//! ```
//!
//! Layer types are recovered from tensor ranks: rank-4 weights are conv
//! blocks, rank-2 weights are dense layers, the last of which is the head.

use super::model::{Layer, LayerKind, LayeredModel, KERNEL};
use super::tensor::Tensor;
use crate::scalar::Scalar;
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"FLNK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after checksum")]
    TrailingBytes(usize),
    #[error("checksum mismatch")]
    ChecksumMismatch,
    #[error("inconsistent shape table: {0}")]
    Shape(String),
    #[error("I/O error: {0}")]
    Io(String),
}

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;

pub fn to_bytes<T: Scalar>(model: &LayeredModel<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layer_count() as u32).to_le_bytes());
    let mut checksum = FNV_OFFSET;
    for layer in model.layers() {
        for tensor in [&layer.weight, &layer.bias] {
            out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for d in tensor.shape() {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in tensor.data() {
                let bytes = (v.as_f64() as f32).to_le_bytes();
                checksum = fnv1a(&bytes, checksum);
                out.extend_from_slice(&bytes);
            }
        }
    }
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(self.bytes.len()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn isqrt_exact(v: usize) -> Option<usize> {
    let r = (v as f64).sqrt().round() as usize;
    (r * r == v).then_some(r)
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<LayeredModel<T>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let layer_count = r.u32()? as usize;
    if layer_count < 2 {
        return Err(CheckpointError::Shape(format!("{layer_count} layers")));
    }
    let mut checksum = FNV_OFFSET;
    let mut tensors: Vec<Tensor<T>> = Vec::with_capacity(2 * layer_count);
    for _ in 0..2 * layer_count {
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 4 {
            return Err(CheckpointError::Shape(format!("tensor rank {rank}")));
        }
        let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_, _>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| CheckpointError::Shape(format!("dims {dims:?} overflow")))?;
        let payload = r.take(count.checked_mul(4).ok_or(CheckpointError::Truncated(bytes.len()))?)?;
        checksum = fnv1a(payload, checksum);
        let data = payload
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        tensors.push(Tensor::from_vec(&dims, data).expect("count matches dims"));
    }
    let stored = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    if stored != checksum {
        return Err(CheckpointError::ChecksumMismatch);
    }

    let pairs: Vec<(Tensor<T>, Tensor<T>)> = tensors
        .chunks_exact(2)
        .map(|c| (c[0].clone(), c[1].clone()))
        .collect();
    let convs = pairs.iter().take_while(|(w, _)| w.shape().len() == 4).count();
    let in_channels = match pairs[0].0.shape() {
        [_, c, k1, k2] if *k1 == KERNEL && *k2 == KERNEL => *c,
        [_, _] => 3,
        s => return Err(CheckpointError::Shape(format!("first weight shape {s:?}"))),
    };
    let first_dense = pairs
        .get(convs)
        .ok_or_else(|| CheckpointError::Shape("no dense head".into()))?;
    let flat = match first_dense.0.shape() {
        [_, inputs] => *inputs,
        s => return Err(CheckpointError::Shape(format!("dense weight shape {s:?}"))),
    };
    let last_channels = if convs > 0 { pairs[convs - 1].0.shape()[0] } else { in_channels };
    if flat % last_channels != 0 {
        return Err(CheckpointError::Shape("dense input not divisible by channels".into()));
    }
    let side = isqrt_exact(flat / last_channels).ok_or_else(|| CheckpointError::Shape("non-square feature map".into()))?;
    let input_size = side << convs;
    let channels0 = in_channels;

    let mut layers = Vec::with_capacity(layer_count);
    let mut size = input_size;
    for (i, (weight, bias)) in pairs.into_iter().enumerate() {
        let kind = match *weight.shape() {
            [out, inp, _, _] => {
                let k = LayerKind::ConvBlock {
                    in_channels: inp,
                    out_channels: out,
                    size,
                };
                size /= 2;
                k
            }
            [out, inp] => LayerKind::Dense {
                inputs: inp,
                outputs: out,
                relu: i + 1 < layer_count,
            },
            _ => return Err(CheckpointError::Shape(format!("layer {i} weight shape {:?}", weight.shape()))),
        };
        layers.push(Layer { kind, weight, bias });
    }
    LayeredModel::from_layers(input_size, channels0, layers).map_err(|e| CheckpointError::Shape(e.to_string()))
}

/// Writes the whole file or nothing readable: data goes to a sibling
/// temporary file that is renamed into place.
pub fn save_checkpoint<T: Scalar>(model: &LayeredModel<T>, path: &Path) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, to_bytes(model)).map_err(|e| CheckpointError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<LayeredModel<T>, CheckpointError> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}
