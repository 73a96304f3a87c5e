//! Named-parameter checkpoints: a flat little-endian binary plus a JSON
//! manifest carrying configuration and seeds.
//!
//! Binary layout: magic `MPHC`, `u32` version, `u32` parameter count, then per
//! parameter `u32` name length, UTF-8 name, `u8` dtype (0 = f32, 1 = f64),
//! `u32` rank, `u64` dims, raw values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{DType, NumError, ParamStore, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"MPHC";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dtype: DType,
    pub params: Vec<ParamEntry>,
    /// Free-form provenance: model config, seeds, step.
    pub extra: serde_json::Value,
}

pub fn encode_params<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_elements() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(match T::DTYPE {
            DType::F32 => 0,
            DType::F64 => 1,
        });
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in p.value.data() {
            x.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumError> {
        if self.pos + n > self.bytes.len() {
            return Err(NumError::Format(format!("truncated checkpoint at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NumError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NumError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes a checkpoint into `(name, tensor)` pairs, converting to `T`.
pub fn decode_params<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>, NumError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NumError::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NumError::Format(format!("unsupported checkpoint version {}", version)));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| NumError::Format(e.to_string()))?;
        let dtype = match r.take(1)?[0] {
            0 => DType::F32,
            1 => DType::F64,
            other => return Err(NumError::Format(format!("unknown dtype tag {}", other))),
        };
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * dtype.size())?;
        let data = match dtype {
            DType::F32 => raw.chunks(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
            DType::F64 => raw.chunks(8).map(|c| T::lit(f64::read_le(c))).collect(),
        };
        out.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(NumError::Format("trailing bytes after checkpoint".into()));
    }
    Ok(out)
}

/// Copies named tensors into a store; every store parameter must be present
/// with a matching shape.
pub fn load_into<T: Scalar>(store: &mut ParamStore<T>, named: Vec<(String, Tensor<T>)>) -> Result<(), NumError> {
    let mut seen = 0;
    for (name, t) in named {
        let id = store.id(&name).ok_or_else(|| NumError::Format(format!("unknown parameter {}", name)))?;
        let p = store.get_mut(id);
        if p.value.shape() != t.shape() {
            return Err(NumError::Shape {
                op: "load_checkpoint",
                detail: format!("{}: {:?} vs {:?}", name, p.value.shape(), t.shape()),
            });
        }
        p.value = t;
        seen += 1;
    }
    if seen != store.len() {
        return Err(NumError::Format(format!("checkpoint has {} of {} parameters", seen, store.len())));
    }
    Ok(())
}

pub fn manifest_for<T: Scalar>(store: &ParamStore<T>, extra: serde_json::Value) -> CheckpointManifest {
    CheckpointManifest {
        dtype: T::DTYPE,
        params: store.iter().map(|(_, p)| ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec() }).collect(),
        extra,
    }
}

/// Writes `<stem>.bin` and `<stem>.json`, each through a temp file and rename.
pub fn save<T: Scalar>(store: &ParamStore<T>, stem: &Path, extra: serde_json::Value) -> Result<(), NumError> {
    let manifest = manifest_for(store, extra);
    write_atomic(&stem.with_extension("bin"), &encode_params(store))?;
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| NumError::Format(e.to_string()))?;
    write_atomic(&stem.with_extension("json"), &json)
}

pub fn load<T: Scalar>(store: &mut ParamStore<T>, stem: &Path) -> Result<CheckpointManifest, NumError> {
    let bytes = fs::read(stem.with_extension("bin"))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(stem.with_extension("json"))?)
        .map_err(|e| NumError::Format(e.to_string()))?;
    load_into(store, decode_params(&bytes)?)?;
    Ok(manifest)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), NumError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
