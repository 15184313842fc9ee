//! Checkpoint container.
//!
//! Layout: magic, `u32` format version, `u64` metadata length, metadata
//! JSON (model config plus the name and shape of every tensor), then each
//! tensor's values as little-endian `f32` in metadata order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Network};
use crate::error::{PiaError, Result};
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PIAM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: ModelConfig,
    tensors: Vec<TensorMeta>,
}

pub fn save_checkpoint<T: Real>(net: &Network<T>) -> Result<Vec<u8>> {
    let params = net.params();
    let meta = Meta {
        config: net.config().clone(),
        tensors: params
            .iter()
            .map(|p| TensorMeta {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&meta)?;
    let total: usize = params.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(16 + json.len() + 4 * total);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        for v in &p.value {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> PiaError {
    PiaError::Cache(format!("checkpoint: {}", msg.into()))
}

pub fn load_checkpoint<T: Real>(bytes: &[u8]) -> Result<Network<T>> {
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("missing header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!(
            "unsupported version {version}; this reader understands version {CHECKPOINT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| corrupt("truncated metadata"))?;
    let meta: Meta = serde_json::from_slice(body)?;
    let mut net = Network::<T>::new(&meta.config, 0)?;
    let mut data = &bytes[16 + len..];
    let params = net.params_mut();
    if params.len() != meta.tensors.len() {
        return Err(corrupt(format!(
            "{} tensors stored, the configured model has {}",
            meta.tensors.len(),
            params.len()
        )));
    }
    for (p, t) in params.into_iter().zip(&meta.tensors) {
        if p.name != t.name || p.shape != t.shape {
            return Err(corrupt(format!("tensor {} {:?} does not match {} {:?}", t.name, t.shape, p.name, p.shape)));
        }
        let n = 4 * p.len();
        if data.len() < n {
            return Err(corrupt(format!("truncated tensor {}", t.name)));
        }
        for (v, chunk) in p.value.iter_mut().zip(data[..n].chunks_exact(4)) {
            *v = T::of(f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64);
        }
        data = &data[n..];
    }
    if !data.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", data.len())));
    }
    Ok(net)
}

pub fn write_checkpoint<T: Real>(path: &Path, net: &Network<T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, save_checkpoint(net)?)?;
    Ok(())
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Network<T>> {
    load_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, Streams};

    #[test]
    fn round_trip_is_bit_exact() {
        for arch in [Architecture::Pia, Architecture::PlainCnn] {
            let cfg = ModelConfig {
                architecture: arch,
                d: 8,
                heads: 2,
                streams: Streams {
                    identity: false,
                    ..Streams::ALL
                },
                ..ModelConfig::default()
            };
            let net = Network::<f32>::new(&cfg, 5).unwrap();
            let bytes = save_checkpoint(&net).unwrap();
            let back = load_checkpoint::<f32>(&bytes).unwrap();
            for (a, b) in net.params().iter().zip(back.params()) {
                assert_eq!(a.name, b.name);
                assert!(a.value.iter().zip(&b.value).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            assert_eq!(save_checkpoint(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_other_versions_and_truncation() {
        let net = Network::<f32>::new(&ModelConfig { d: 4, heads: 1, ..ModelConfig::default() }, 1).unwrap();
        let mut bytes = save_checkpoint(&net).unwrap();
        assert!(load_checkpoint::<f32>(&bytes[..bytes.len() - 3]).is_err());
        bytes[4] = 9;
        let err = load_checkpoint::<f32>(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
