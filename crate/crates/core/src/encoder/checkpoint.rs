//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "PWENCODR"
//! version   u32      CHECKPOINT_VERSION
//! hdr_len   u64      length of the JSON header in bytes
//! header    hdr_len  UTF-8 JSON: { version, config, tensors: [{name, shape, kind}],
//!                                  buffers: [{name, channels}] }
//! payload            f64 values: every tensor in header order, then for each
//!                    buffer its running mean followed by its running variance
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Encoder, EncoderConfig, RunningStats};
use crate::error::{ensure, Error, Result};
use crate::tensor::{ParamKind, Tensor};

const MAGIC: &[u8; 8] = b"PWENCODR";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
}

#[derive(Serialize, Deserialize)]
struct BufferEntry {
    name: String,
    channels: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: EncoderConfig,
    tensors: Vec<TensorEntry>,
    buffers: Vec<BufferEntry>,
}

pub fn save_checkpoint(encoder: &Encoder, path: &Path) -> Result<()> {
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: encoder.config().clone(),
        tensors: encoder
            .params()
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                kind: t.kind,
            })
            .collect(),
        buffers: encoder
            .running_stats()
            .iter()
            .map(|s| BufferEntry {
                name: s.name.clone(),
                channels: s.mean.len(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let values = encoder
        .params()
        .iter()
        .flat_map(|t| t.data.iter())
        .chain(
            encoder
                .running_stats()
                .iter()
                .flat_map(|s| s.mean.iter().chain(s.var.iter())),
        );
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    ensure!(
        *pos + n <= bytes.len(),
        Format,
        "checkpoint truncated at byte {}",
        *pos
    );
    let s = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn read_f64s(bytes: &[u8], pos: &mut usize, n: usize) -> Result<Vec<f64>> {
    let raw = take(bytes, pos, n * 8)?;
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn load_checkpoint(path: &Path) -> Result<Encoder> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    ensure!(
        take(&bytes, &mut pos, 8)? == MAGIC,
        Format,
        "{} is not an encoder checkpoint",
        path.display()
    );
    let version = u32::from_le_bytes(take(&bytes, &mut pos, 4)?.try_into().unwrap());
    ensure!(
        version == CHECKPOINT_VERSION,
        Format,
        "unsupported checkpoint version {version}"
    );
    let hdr_len = u64::from_le_bytes(take(&bytes, &mut pos, 8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(take(&bytes, &mut pos, hdr_len)?)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let mut params = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n = t.shape.iter().product();
        params.push(Tensor {
            data: read_f64s(&bytes, &mut pos, n)?,
            name: t.name,
            shape: t.shape,
            kind: t.kind,
        });
    }
    let mut stats = Vec::with_capacity(header.buffers.len());
    for b in header.buffers {
        let mean = read_f64s(&bytes, &mut pos, b.channels)?;
        let var = read_f64s(&bytes, &mut pos, b.channels)?;
        stats.push(RunningStats {
            name: b.name,
            mean,
            var,
        });
    }
    ensure!(
        pos == bytes.len(),
        Format,
        "checkpoint has {} trailing bytes",
        bytes.len() - pos
    );
    Encoder::from_parts(header.config, params, stats)
}
