//! `S3DW` tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "S3DW" | u32 version = 1 | u64 manifest length | manifest (UTF-8 JSON)
//! zero padding to a 64-byte boundary
//! tensor payloads, each starting on a 64-byte boundary
//! ```
//!
//! The manifest is `{"config": …, "tensors": {name: {"shape", "dtype",
//! "offset"}}}` where `offset` is relative to the start of the payload
//! region, so the manifest length never feeds back into the offsets.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Weights};
use crate::error::{Error, Result};
use crate::kernels::Real;

pub const MAGIC: &[u8; 4] = b"S3DW";
pub const FORMAT_VERSION: u32 = 1;
const ALIGN: usize = 64;

/// On-disk element type. Arithmetic is always f64; `F32` storage rounds
/// every parameter to single precision when written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    fn width(self) -> usize {
        match self {
            Precision::F64 => 8,
            Precision::F32 => 4,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Precision::F64),
            "f32" => Ok(Precision::F32),
            _ => Err(Error::InvalidInput(format!("unknown precision {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<Real>,
}

/// Decoded file: the manifest's `config` value plus tensors in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub config: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    dtype: Precision,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: serde_json::Value,
    tensors: BTreeMap<String, Entry>,
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

pub fn write_tensor_file<W: Write>(
    mut out: W,
    config: serde_json::Value,
    tensors: &[NamedTensor],
    precision: Precision,
) -> Result<()> {
    let mut sorted: Vec<&NamedTensor> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    let mut entries = BTreeMap::new();
    let mut offset = 0usize;
    for t in &sorted {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::InvalidInput(format!(
                "tensor {} has {} values for shape {:?}",
                t.name,
                t.data.len(),
                t.shape
            )));
        }
        if entries
            .insert(
                t.name.clone(),
                Entry {
                    shape: t.shape.clone(),
                    dtype: precision,
                    offset: offset as u64,
                },
            )
            .is_some()
        {
            return Err(Error::InvalidInput(format!("duplicate tensor {}", t.name)));
        }
        offset = align(offset + t.data.len() * precision.width());
    }
    let manifest = serde_json::to_vec(&Manifest {
        config,
        tensors: entries,
    })?;

    let header = 4 + 4 + 8 + manifest.len();
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(manifest.len() as u64).to_le_bytes())?;
    out.write_all(&manifest)?;
    out.write_all(&vec![0u8; align(header) - header])?;

    let mut written = 0usize;
    for t in &sorted {
        let mut bytes = Vec::with_capacity(t.data.len() * precision.width());
        for &v in &t.data {
            match precision {
                Precision::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
                Precision::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
        out.write_all(&bytes)?;
        written += bytes.len();
        let padded = align(written);
        out.write_all(&vec![0u8; padded - written])?;
        written = padded;
    }
    out.flush()?;
    Ok(())
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

pub fn read_tensor_file<R: Read>(mut input: R) -> Result<TensorFile> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return format_err("bad magic");
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return format_err(format!("unsupported version {version}"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let Some(manifest_bytes) = bytes.get(16..16usize.saturating_add(len)) else {
        return format_err("manifest runs past end of file");
    };
    let manifest: Manifest = serde_json::from_slice(manifest_bytes)
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let base = align(16 + len);
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for (name, e) in manifest.tensors {
        let count: usize = e.shape.iter().product();
        let start = base.checked_add(e.offset as usize);
        let end = start.and_then(|s| s.checked_add(count * e.dtype.width()));
        let (Some(start), Some(end)) = (start, end) else {
            return format_err(format!("tensor {name} offset overflows"));
        };
        if !(e.offset as usize).is_multiple_of(ALIGN) {
            return format_err(format!("tensor {name} is not 64-byte aligned"));
        }
        let Some(raw) = bytes.get(start..end) else {
            return format_err(format!("tensor {name} runs past end of file"));
        };
        let data: Vec<Real> = match e.dtype {
            Precision::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            Precision::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as Real)
                .collect(),
        };
        tensors.push(NamedTensor {
            name,
            shape: e.shape,
            data,
        });
    }
    Ok(TensorFile {
        config: manifest.config,
        tensors,
    })
}

pub fn write_weights<W: Write>(out: W, model: &Model, precision: Precision) -> Result<()> {
    let tensors: Vec<NamedTensor> = model
        .weights()
        .tensors()
        .into_iter()
        .map(|(info, data)| NamedTensor {
            name: info.name,
            shape: info.shape,
            data: data.to_vec(),
        })
        .collect();
    write_tensor_file(out, serde_json::to_value(model.config())?, &tensors, precision)
}

/// Reads a model, validating the configuration, the tensor set, and every
/// shape against it.
pub fn read_weights<R: Read>(input: R) -> Result<Model> {
    let file = read_tensor_file(input)?;
    let config: ModelConfig = serde_json::from_value(file.config)
        .map_err(|e| Error::Format(format!("config: {e}")))?;
    config.validate()?;
    let mut by_name: BTreeMap<String, NamedTensor> = file
        .tensors
        .into_iter()
        .map(|t| (t.name.clone(), t))
        .collect();
    let mut weights = Weights::zeros(&config);
    for (info, slot) in weights.tensors_mut() {
        let Some(t) = by_name.remove(&info.name) else {
            return format_err(format!("missing tensor {}", info.name));
        };
        if t.shape != info.shape {
            return format_err(format!(
                "tensor {} has shape {:?}, expected {:?}",
                info.name, t.shape, info.shape
            ));
        }
        slot.copy_from_slice(&t.data);
    }
    if let Some(extra) = by_name.keys().next() {
        return format_err(format!("unexpected tensor {extra}"));
    }
    Model::new(config, weights)
}

pub fn save_model(path: impl AsRef<Path>, model: &Model, precision: Precision) -> Result<()> {
    write_weights(BufWriter::new(File::create(path)?), model, precision)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    read_weights(BufReader::new(File::open(path)?))
}
