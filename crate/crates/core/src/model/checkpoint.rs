//! `QTNW` checkpoint container.
//!
//! ```text
//! "QTNW" | u32 version | u32 record_len | record (UTF-8 JSON)
//! repeated: u32 name_len | name | u8 dtype (1=f32, 2=f64) | u32 rank | rank x u32 dims | data (LE)
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! The JSON record carries the model config, the init seed, the tensor count
//! and, for resumable checkpoints, the training progress. Running statistics
//! are stored as `<layer>.running_mean` / `<layer>.running_var` vectors and
//! optimizer moments as `adam.m.<param>` / `adam.v.<param>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::Cursor;
pub use crate::codec::write_atomic;
use crate::error::{Error, FormatError, Result};
use crate::kernels::RunningStats;
use crate::model::config::ModelConfig;
use crate::model::params::Parameters;
use crate::tensor::{DType, Scalar, Shape, Tensor};
use crate::trainer::AdamState;

pub const MAGIC: [u8; 4] = *b"QTNW";
pub const VERSION: u32 = 1;

const RUNNING_MEAN: &str = ".running_mean";
const RUNNING_VAR: &str = ".running_var";
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

/// Where a run stands; present only in resumable checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    /// Last completed epoch (1-based).
    pub epoch: usize,
    pub best_score: Option<f64>,
    pub best_epoch: Option<usize>,
    /// The full epoch history so far, as CSV rows, so a resumed run can
    /// rewrite its learning curve exactly.
    #[serde(default)]
    pub history: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub seed: u64,
    pub dtype: String,
    pub tensor_count: usize,
    #[serde(default)]
    pub adam_step: Option<u64>,
    #[serde(default)]
    pub progress: Option<TrainProgress>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Parameters<T>,
    pub optimizer: Option<AdamState<T>>,
    pub progress: Option<TrainProgress>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn weights_only(config: ModelConfig, seed: u64, params: Parameters<T>) -> Self {
        Checkpoint {
            config,
            seed,
            params,
            optimizer: None,
            progress: None,
        }
    }
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F32 => "f32",
        DType::F64 => "f64",
    }
}

fn push_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE.code());
    out.extend_from_slice(&4u32.to_le_bytes());
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in t.data() {
        x.write_le(out);
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    let mut named: Vec<(String, Tensor<T>)> = Vec::new();
    for (name, t) in ckpt.params.iter() {
        named.push((name.to_string(), t.clone()));
    }
    for (layer, r) in ckpt.params.running() {
        named.push((format!("{layer}{RUNNING_MEAN}"), Tensor::vector(r.mean.clone())));
        named.push((format!("{layer}{RUNNING_VAR}"), Tensor::vector(r.var.clone())));
    }
    if let Some(opt) = &ckpt.optimizer {
        for (name, m) in opt.first_moments() {
            named.push((format!("{ADAM_M}{name}"), m.clone()));
        }
        for (name, v) in opt.second_moments() {
            named.push((format!("{ADAM_V}{name}"), v.clone()));
        }
    }
    let header = CheckpointHeader {
        model: ckpt.config,
        seed: ckpt.seed,
        dtype: dtype_name(T::DTYPE).to_string(),
        tensor_count: named.len(),
        adam_step: ckpt.optimizer.as_ref().map(|o| o.step()),
        progress: ckpt.progress.clone(),
    };
    let record = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(record.len() as u32).to_le_bytes());
    out.extend_from_slice(&record);
    for (name, t) in &named {
        push_tensor(&mut out, name, t);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn save_weights<T: Scalar>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(ckpt)?)
}

struct RawTensor {
    name: String,
    dtype: DType,
    shape: Shape,
    data: Vec<u8>,
}

impl RawTensor {
    fn decode<T: Scalar>(&self) -> Tensor<T> {
        let width = self.dtype.size();
        let data: Vec<T> = match self.dtype {
            DType::F32 => self
                .data
                .chunks_exact(width)
                .map(|c| T::of(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => self
                .data
                .chunks_exact(width)
                .map(|c| T::of(f64::read_le(c)))
                .collect(),
        };
        Tensor::from_vec(self.shape, data).expect("decoded length matches shape")
    }
}

fn parse(bytes: &[u8]) -> std::result::Result<(CheckpointHeader, Vec<RawTensor>), FormatError> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4).map_err(|_| FormatError::BadMagic {
        expected: MAGIC,
        found: bytes.to_vec(),
    })?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: magic.to_vec(),
        });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(FormatError::Version {
            found: version,
            supported: VERSION,
        });
    }
    // everything after the header is parsed against the body without the
    // 4-byte trailer, so a cut anywhere surfaces as truncation
    if bytes.len() < cur.pos() + 4 {
        return Err(FormatError::Truncated {
            needed: cur.pos() + 4,
            available: bytes.len(),
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let mut cur = Cursor::at(body, cur.pos());
    let record_len = cur.u32()? as usize;
    let record = cur.take(record_len)?;
    let header: CheckpointHeader = serde_json::from_slice(record)
        .map_err(|e| FormatError::Malformed(format!("config record: {e}")))?;

    let mut tensors = Vec::with_capacity(header.tensor_count);
    for _ in 0..header.tensor_count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| FormatError::Malformed("tensor name is not UTF-8".into()))?;
        let dtype = match cur.u8()? {
            1 => DType::F32,
            2 => DType::F64,
            other => return Err(FormatError::DType(other)),
        };
        let rank = cur.u32()? as usize;
        if rank > 4 {
            return Err(FormatError::Malformed(format!("tensor {name} has rank {rank}")));
        }
        let mut dims = [1usize; 4];
        for d in dims.iter_mut().take(rank) {
            *d = cur.u32()? as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let data = cur.take(shape.len() * dtype.size())?.to_vec();
        tensors.push(RawTensor {
            name,
            dtype,
            shape,
            data,
        });
    }
    if cur.pos() != body.len() {
        return Err(FormatError::Size(format!(
            "{} unexpected bytes after the last tensor",
            body.len() - cur.pos()
        )));
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok((header, tensors))
}

/// Reads only the JSON record (validates the whole file).
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes).map(|(h, _)| h).map_err(|e| Error::format(path, e))
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> std::result::Result<Checkpoint<T>, FormatError> {
    let (header, raw) = parse(bytes)?;
    header
        .model
        .validate()
        .map_err(|e| FormatError::Malformed(e.to_string()))?;
    let mut tensors = BTreeMap::new();
    let mut means = BTreeMap::new();
    let mut vars = BTreeMap::new();
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for r in &raw {
        let t = r.decode::<T>();
        if let Some(layer) = r.name.strip_suffix(RUNNING_MEAN) {
            means.insert(layer.to_string(), t.into_vec());
        } else if let Some(layer) = r.name.strip_suffix(RUNNING_VAR) {
            vars.insert(layer.to_string(), t.into_vec());
        } else if let Some(p) = r.name.strip_prefix(ADAM_M) {
            m.insert(p.to_string(), t);
        } else if let Some(p) = r.name.strip_prefix(ADAM_V) {
            v.insert(p.to_string(), t);
        } else {
            tensors.insert(r.name.clone(), t);
        }
    }
    let mut running = BTreeMap::new();
    for (layer, mean) in means {
        let var = vars
            .remove(&layer)
            .ok_or_else(|| FormatError::Malformed(format!("{layer} has a running mean but no variance")))?;
        running.insert(layer, RunningStats { mean, var });
    }
    let params = Parameters::from_parts(tensors, running);
    params
        .check_against(&header.model)
        .map_err(|e| FormatError::Malformed(e.to_string()))?;
    let optimizer = match header.adam_step {
        Some(step) => Some(
            AdamState::from_moments(m, v, step).map_err(|e| FormatError::Malformed(e.to_string()))?,
        ),
        None => None,
    };
    Ok(Checkpoint {
        config: header.model,
        seed: header.seed,
        params,
        optimizer,
        progress: header.progress,
    })
}

/// Loads a checkpoint, converting to `T` if it was saved in the other precision.
pub fn load_weights<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::format(path, e))
}
