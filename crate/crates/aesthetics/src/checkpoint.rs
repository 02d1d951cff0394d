//! Single-file weight container: a magic tag, one JSON metadata string, then
//! named f32 tensor blocks. Little-endian throughout. The format is the
//! interchange point for pretrained weights, training checkpoints, and
//! warm-start donors, so round-trips must be bitwise exact.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"MCAESTH1";

/// Velocity blocks ride along under this prefix so optimizer state survives
/// a resume; value blocks use the bare parameter name.
pub const VELOCITY_PREFIX: &str = "vel.";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("corrupt checkpoint at byte {offset}: {detail}")]
    Corrupt { offset: usize, detail: String },
}

fn io_err(path: &Path, source: io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_file(
    path: &Path,
    meta_json: &str,
    blocks: &[(String, ArrayD<f32>)],
) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let meta = meta_json.as_bytes();
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(meta);
    buf.extend_from_slice(&(blocks.len() as u64).to_le_bytes());
    for (name, tensor) in blocks {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u64).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(tensor.ndim() as u64).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let data = tensor.as_slice().expect("contiguous tensor");
        for &v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    // Write-then-rename so a crash mid-write never leaves a torn file under
    // the checkpoint's name.
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(&buf).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.offset + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt {
                offset: self.offset,
                detail: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        let s = self.take(8, what)?;
        Ok(u64::from_le_bytes(s.try_into().expect("8 bytes")))
    }
}

pub fn read_file(path: &Path) -> Result<(String, Vec<(String, ArrayD<f32>)>), CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let mut cur = Cursor {
        bytes: &bytes,
        offset: 0,
    };
    let magic = cur.take(8, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::Corrupt {
            offset: 0,
            detail: "bad magic".into(),
        });
    }
    let meta_len = cur.u64("metadata length")? as usize;
    let meta = String::from_utf8(cur.take(meta_len, "metadata")?.to_vec()).map_err(|_| {
        CheckpointError::Corrupt {
            offset: 16,
            detail: "metadata is not UTF-8".into(),
        }
    })?;
    let block_count = cur.u64("block count")? as usize;
    let mut blocks = Vec::with_capacity(block_count.min(4096));
    for _ in 0..block_count {
        let name_len = cur.u64("name length")? as usize;
        let name_offset = cur.offset;
        let name = String::from_utf8(cur.take(name_len, "block name")?.to_vec()).map_err(|_| {
            CheckpointError::Corrupt {
                offset: name_offset,
                detail: "block name is not UTF-8".into(),
            }
        })?;
        let ndim = cur.u64("rank")? as usize;
        if ndim > 8 {
            return Err(CheckpointError::Corrupt {
                offset: cur.offset,
                detail: format!("implausible rank {ndim} for `{name}`"),
            });
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u64("dimension")? as usize);
        }
        let len: usize = dims.iter().product();
        let raw = cur.take(len * 4, &format!("data of `{name}`"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor = ArrayD::from_shape_vec(dims, data).map_err(|e| CheckpointError::Corrupt {
            offset: cur.offset,
            detail: format!("shape error for `{name}`: {e}"),
        })?;
        blocks.push((name, tensor));
    }
    if cur.offset != bytes.len() {
        return Err(CheckpointError::Corrupt {
            offset: cur.offset,
            detail: "trailing bytes after last block".into(),
        });
    }
    Ok((meta, blocks))
}

/// Flatten named parameters into checkpoint blocks: values under their bare
/// names, velocities (when present) under the velocity prefix.
pub fn blocks_from_params(params: &[(String, &crate::nn::Param)]) -> Vec<(String, ArrayD<f32>)> {
    let mut blocks = Vec::with_capacity(params.len() * 2);
    for (name, p) in params {
        blocks.push((name.clone(), p.value.clone()));
        if let Some(v) = &p.velocity {
            blocks.push((format!("{VELOCITY_PREFIX}{name}"), v.clone()));
        }
    }
    blocks
}

/// Install checkpoint blocks into named parameters. Every parameter must
/// have a matching value block of identical shape; velocity blocks are
/// optional and absent ones reset the velocity.
pub fn params_from_blocks(
    params: &mut [(String, &mut crate::nn::Param)],
    blocks: &[(String, ArrayD<f32>)],
) -> Result<(), CheckpointError> {
    let index: std::collections::BTreeMap<&str, &ArrayD<f32>> =
        blocks.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for (name, param) in params.iter_mut() {
        let tensor = index
            .get(name.as_str())
            .ok_or_else(|| CheckpointError::Corrupt {
                offset: 0,
                detail: format!("missing block `{name}`"),
            })?;
        if tensor.shape() != param.value.shape() {
            return Err(CheckpointError::Corrupt {
                offset: 0,
                detail: format!(
                    "shape mismatch for `{name}`: file {:?} vs model {:?}",
                    tensor.shape(),
                    param.value.shape()
                ),
            });
        }
        param.value = (*tensor).clone();
        let vel_name = format!("{VELOCITY_PREFIX}{name}");
        param.velocity = index.get(vel_name.as_str()).map(|t| (*t).clone());
        param.grad = None;
    }
    Ok(())
}

/// Hex digest of every value block, for freeze checks and donor comparisons.
pub fn param_fingerprint(params: &[(String, &crate::nn::Param)]) -> String {
    use sha2::Digest;
    let mut hasher = sha2::Sha256::new();
    for (name, p) in params {
        hasher.update(name.as_bytes());
        hasher.update([0xFFu8]);
        for &v in p.value.as_slice().expect("contiguous param") {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
