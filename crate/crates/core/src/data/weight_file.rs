use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderWeights};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NGW1";
const HEADER_LIMIT: u64 = 64 << 20;

/// One manifest record. `offset` is the byte offset of the tensor within
/// the payload that follows the header.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

/// Layout: `NGW1`, header length as little-endian u64, JSON manifest, then
/// every tensor as contiguous little-endian f32 in manifest order.
pub fn write_weights<T: Scalar>(params: &ParamSet<T>, mut out: impl Write) -> Result<()> {
    let mut offset = 0u64;
    let manifest: Vec<ManifestEntry> = params
        .iter()
        .map(|(name, t)| {
            let e = ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                dtype: "f32".to_string(),
                offset,
            };
            offset += 4 * t.numel() as u64;
            e
        })
        .collect();
    let header = serde_json::to_vec(&manifest)?;
    let io = |e: std::io::Error| Error::Format(format!("write failed: {e}"));
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&header).map_err(io)?;
    for (_, t) in params.iter() {
        let mut buf = Vec::with_capacity(4 * t.numel());
        for v in t.data() {
            buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
        out.write_all(&buf).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn save_weights<T: Scalar>(params: &ParamSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_weights(params, BufWriter::new(file)).map_err(|e| match e {
        Error::Format(m) => Error::io(path, std::io::Error::other(m)),
        other => other,
    })
}

pub fn read_weights<T: Scalar>(mut input: impl Read) -> Result<ParamSet<T>> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"NGW1\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut len = [0u8; 8];
    read_exact(&mut input, &mut len, "header length")?;
    let len = u64::from_le_bytes(len);
    if len > HEADER_LIMIT {
        return Err(Error::Format(format!("header length {len} is implausible")));
    }
    let mut header = vec![0u8; len as usize];
    read_exact(&mut input, &mut header, "header")?;
    let manifest: Vec<ManifestEntry> =
        serde_json::from_slice(&header).map_err(|e| Error::Format(format!("unreadable manifest: {e}")))?;

    let mut expected_offset = 0u64;
    for e in &manifest {
        if e.dtype != "f32" {
            return Err(Error::Format(format!(
                "tensor `{}` has unsupported dtype `{}`",
                e.name, e.dtype
            )));
        }
        if e.offset != expected_offset {
            return Err(Error::Format(format!(
                "tensor `{}` at offset {}, expected {expected_offset}",
                e.name, e.offset
            )));
        }
        if e.shape.is_empty() || e.shape.contains(&0) {
            return Err(Error::Format(format!(
                "tensor `{}` has degenerate shape {:?}",
                e.name, e.shape
            )));
        }
        expected_offset += 4 * e.shape.iter().product::<usize>() as u64;
    }

    let mut params = ParamSet::new();
    for e in manifest {
        let n: usize = e.shape.iter().product();
        let mut bytes = vec![0u8; 4 * n];
        read_exact(&mut input, &mut bytes, &format!("payload of `{}`", e.name))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        if params.insert(e.name.clone(), Tensor::new(e.shape, data)?).is_some() {
            return Err(Error::Format(format!("tensor `{}` listed twice", e.name)));
        }
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(params)
}

fn read_exact(input: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated file while reading {what}"))
        } else {
            Error::Format(format!("read failed in {what}: {e}"))
        }
    })
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<ParamSet<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_weights(BufReader::new(file))
}

/// Loads and validates against `config`, listing every mismatch at once.
pub fn load_encoder_weights<T: Scalar>(path: impl AsRef<Path>, config: EncoderConfig) -> Result<EncoderWeights<T>> {
    EncoderWeights::new(config, load_weights(path)?)
}
