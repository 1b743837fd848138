//! Binary tensor container and checkpoint serialization.
//!
//! Container layout, all integers little-endian:
//!   magic `G2SQG` · version u32 · tensor count u32 ·
//!   per tensor { name len u32 · UTF-8 name · rank u32 · dims u32×rank ·
//!   f32 data } · CRC32 of every preceding byte.
//!
//! Save-then-load reproduces every tensor bitwise. The same container
//! carries contextual-embedding sidecars (keys `ctx/<id>/passage`).

use super::adam::OptimizerState;
use crate::error::{Error, Result};
use crate::gradcore::{ParameterStore, RealArray};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 5] = b"G2SQG";
const FORMAT_VERSION: u32 = 1;

fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 {
                0xedb8_8320 ^ (c >> 1)
            } else {
                c >> 1
            };
        }
        *slot = c;
    }
    let mut crc = 0xffff_ffffu32;
    for &b in bytes {
        crc = table[((crc ^ u32::from(b)) & 0xff) as usize] ^ (crc >> 8);
    }
    crc ^ 0xffff_ffff
}

pub fn write_container(
    path: impl AsRef<Path>,
    tensors: &BTreeMap<String, RealArray<f32>>,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(tensor.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(tensor.cols() as u32).to_le_bytes());
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<BTreeMap<String, RealArray<f32>>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 12 {
        return Err(Error::Integrity("container truncated".into()));
    }
    if &bytes[..5] != MAGIC {
        return Err(Error::Integrity("bad magic bytes".into()));
    }
    let payload_len = bytes.len() - 4;
    let stored_crc = u32::from_le_bytes(bytes[payload_len..].try_into().unwrap());
    if crc32(&bytes[..payload_len]) != stored_crc {
        return Err(Error::Integrity("CRC32 mismatch".into()));
    }

    let mut cursor = 5usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor + n > payload_len {
            return Err(Error::Integrity("container truncated".into()));
        }
        let s = &bytes[cursor..cursor + n];
        cursor += n;
        Ok(s)
    };
    let read_u32 = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());

    let version = read_u32(take(4)?);
    if version != FORMAT_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let count = read_u32(take(4)?) as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u32(take(4)?) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| Error::Integrity("tensor name is not UTF-8".into()))?;
        let rank = read_u32(take(4)?) as usize;
        if rank == 0 || rank > 2 {
            return Err(Error::Integrity(format!("unsupported tensor rank {rank}")));
        }
        let mut dims = [1usize; 2];
        for d in dims.iter_mut().take(rank) {
            *d = read_u32(take(4)?) as usize;
        }
        let (rows, cols) = if rank == 1 {
            (dims[0], 1)
        } else {
            (dims[0], dims[1])
        };
        let len = rows * cols;
        let raw = take(len * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.insert(name, RealArray::new(rows, cols, data)?);
    }
    if cursor != payload_len {
        return Err(Error::Integrity("trailing bytes after tensors".into()));
    }
    Ok(out)
}

fn bits_tensor(value: u64) -> RealArray<f32> {
    RealArray::new(
        1,
        2,
        vec![
            f32::from_bits((value >> 32) as u32),
            f32::from_bits(value as u32),
        ],
    )
    .expect("valid shape")
}

fn tensor_bits(t: &RealArray<f32>) -> u64 {
    (u64::from(t.data()[0].to_bits()) << 32) | u64::from(t.data()[1].to_bits())
}

/// Checkpoint contents after a successful load.
pub struct Checkpoint {
    pub params: ParameterStore<f32>,
    pub optimizer: Option<OptimizerState>,
    pub config_hash: u64,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ParameterStore<f32>,
    optimizer: Option<&OptimizerState>,
    config_hash: u64,
) -> Result<()> {
    let mut tensors = BTreeMap::new();
    for (name, p) in params.iter() {
        let prefix = if p.trainable { "param" } else { "fixed" };
        tensors.insert(format!("{prefix}/{name}"), p.array.clone());
    }
    if let Some(opt) = optimizer {
        for (name, m) in &opt.first_moment {
            tensors.insert(format!("opt/m/{name}"), m.clone());
        }
        for (name, v) in &opt.second_moment {
            tensors.insert(format!("opt/v/{name}"), v.clone());
        }
        tensors.insert("opt/step".into(), bits_tensor(opt.step));
    }
    tensors.insert("meta/config_hash".into(), bits_tensor(config_hash));
    write_container(path, &tensors)
}

/// Load a checkpoint. A config-hash mismatch is the caller's concern (a
/// warning, not an error); format problems are integrity errors.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let tensors = read_container(path)?;
    let mut params = ParameterStore::new();
    let mut opt = OptimizerState::default();
    let mut has_opt = false;
    let mut config_hash = 0u64;
    for (key, tensor) in tensors {
        if let Some(name) = key.strip_prefix("param/") {
            params.insert(name, tensor);
        } else if let Some(name) = key.strip_prefix("fixed/") {
            params.insert_fixed(name, tensor);
        } else if let Some(name) = key.strip_prefix("opt/m/") {
            opt.first_moment.insert(name.to_string(), tensor);
            has_opt = true;
        } else if let Some(name) = key.strip_prefix("opt/v/") {
            opt.second_moment.insert(name.to_string(), tensor);
            has_opt = true;
        } else if key == "opt/step" {
            opt.step = tensor_bits(&tensor);
            has_opt = true;
        } else if key == "meta/config_hash" {
            config_hash = tensor_bits(&tensor);
        } else {
            return Err(Error::Integrity(format!("unexpected tensor key `{key}`")));
        }
    }
    if params.is_empty() {
        return Err(Error::Integrity("checkpoint holds no parameters".into()));
    }
    Ok(Checkpoint {
        params,
        optimizer: if has_opt { Some(opt) } else { None },
        config_hash,
    })
}
