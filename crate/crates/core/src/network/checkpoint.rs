//! Binary checkpoint format.
//!
//! ```text
//! magic   b"URM2"
//! version u32
//! count   u32
//! count x { name_len u32, name utf-8, ndim u32, dims u64 x ndim, offset u64 }
//! data    f64 values, offsets in bytes from the start of this section
//! ```
//!
//! All integers and floats are little-endian. The first entry is always
//! `meta.arch`, a vector describing the architecture so a checkpoint can be
//! loaded without any side configuration.

use std::fs;
use std::path::Path;

use super::baselines::{BaselineConfig, MultiHeadPolicy, ZeroPaddingPolicy};
use super::params::ParamStore;
use super::tensor::Tensor;
use super::urma::{UrmaConfig, UrmaPolicy};
use super::{ActorCritic, ArchKind, D_OBS, D_OBS_CRITIC};
use crate::randomization::DESC_DIM;

pub const MAGIC: &[u8; 4] = b"URM2";
pub const VERSION: u32 = 1;
const META: &str = "meta.arch";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint does not match this build: {0}")]
    Shape(String),
}

fn format_err(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

/// Serializes `store` preceded by the metadata vector.
pub fn encode(meta: &[f64], store: &ParamStore) -> Vec<u8> {
    let meta_t = Tensor::from_vec(1, meta.len(), meta.to_vec());
    let entries: Vec<(&str, &Tensor)> = std::iter::once((META, &meta_t)).chain(store.iter()).collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in &entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 8 * t.len() as u64;
    }
    for (_, t) in &entries {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| format_err("truncated header"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Inverse of [`encode`].
pub fn decode(bytes: &[u8]) -> Result<(Vec<f64>, ParamStore), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(format_err("bad magic bytes"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut headers = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| format_err("tensor name is not utf-8"))?.to_string();
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let (rows, cols) = match dims[..] {
            [n] => (1, n),
            [a, b] => (a, b),
            _ => return Err(format_err(format!("`{name}` has {ndim} dimensions"))),
        };
        let offset = r.u64()? as usize;
        headers.push((name, rows, cols, offset));
    }
    let data = &bytes[r.pos..];
    let mut meta = None;
    let mut store = ParamStore::new();
    for (name, rows, cols, offset) in headers {
        let n = rows.checked_mul(cols).ok_or_else(|| format_err("tensor too large"))?;
        let end = offset.checked_add(n * 8).filter(|&e| e <= data.len()).ok_or_else(|| format_err(format!("data for `{name}` out of bounds")))?;
        let values = data[offset..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::from_vec(rows, cols, values);
        if name == META {
            meta = Some(t.into_vec());
        } else if store.find(&name).is_some() {
            return Err(format_err(format!("duplicate tensor `{name}`")));
        } else {
            store.add(name, t);
        }
    }
    let meta = meta.ok_or_else(|| format_err("missing architecture metadata"))?;
    Ok((meta, store))
}

pub fn save(policy: &dyn ActorCritic, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(&policy.metadata(), policy.params()))?;
    Ok(())
}

/// Rebuilds the policy described by a checkpoint's metadata.
pub fn from_parts(meta: &[f64], store: ParamStore) -> Result<Box<dyn ActorCritic>, CheckpointError> {
    check_input_widths(&store)?;
    let kind = meta.first().copied().unwrap_or(0.0);
    let baseline = |m: &[f64]| -> Result<(BaselineConfig, usize), CheckpointError> {
        if m.len() < 5 {
            return Err(format_err("baseline metadata too short"));
        }
        Ok((
            BaselineConfig {
                hidden: m[1] as usize,
                layers: m[2] as usize,
                init_log_std: m[3],
            },
            m[4] as usize,
        ))
    };
    let shape = CheckpointError::Shape;
    if kind == ArchKind::Urma as u8 as f64 {
        let config = UrmaConfig::from_metadata(meta).ok_or_else(|| format_err("bad architecture metadata"))?;
        config.validate().map_err(format_err)?;
        Ok(Box::new(UrmaPolicy::from_store(config, store).map_err(shape)?))
    } else if kind == ArchKind::ZeroPadding as u8 as f64 {
        let (config, max_joints) = baseline(meta)?;
        Ok(Box::new(ZeroPaddingPolicy::from_store(config, max_joints, store).map_err(shape)?))
    } else if kind == ArchKind::MultiHead as u8 as f64 {
        let (config, n) = baseline(meta)?;
        if meta.len() != 5 + n {
            return Err(format_err("multi-head metadata length mismatch"));
        }
        let joints = meta[5..].iter().map(|&j| j as usize).collect();
        Ok(Box::new(MultiHeadPolicy::from_store(config, joints, store).map_err(shape)?))
    } else {
        Err(format_err(format!("unknown architecture tag {kind}")))
    }
}

/// Names the first input layer whose width disagrees with this build's
/// description and observation widths.
fn check_input_widths(store: &ParamStore) -> Result<(), CheckpointError> {
    let expect = [
        ("actor.f_phi.0.w", DESC_DIM),
        ("critic.f_phi.0.w", DESC_DIM),
        ("actor.f_psi.0.w", D_OBS),
        ("critic.f_psi.0.w", D_OBS_CRITIC),
    ];
    for (name, width) in expect {
        if let Some(id) = store.find(name) {
            let got = store.get(id).cols();
            if got != width {
                let what = if name.contains("f_phi") { "description width D_desc" } else { "joint observation width D_obs" };
                return Err(CheckpointError::Shape(format!("`{name}` expects {what} = {got}, this build uses {width}")));
            }
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Box<dyn ActorCritic>, CheckpointError> {
    let bytes = fs::read(path)?;
    let (meta, store) = decode(&bytes)?;
    from_parts(&meta, store)
}
