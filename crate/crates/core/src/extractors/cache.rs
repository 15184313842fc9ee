//! Per-video feature cache.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PIA1" | u32 version | u64 metadata length | metadata (UTF-8 JSON)
//! then for each blob: u16 name length | name | u64 byte length | f32 data
//! ```
//!
//! Metadata holds the manifest and the scalar per-frame fields. Landmarks,
//! identity embeddings and crops live in the `landmarks`, `identity` and
//! `crops` blobs, one fixed-size record per frame that carries one.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IdentityEmbedding, LandmarkSet, VisemeCrop, CROP_LEN, EMBEDDING_DIM, LANDMARK_COUNT};
use crate::alignment::FrameRecord;
use crate::error::{PiaError, Result};
use crate::geometry::LipGeometry;
use crate::synthgen::RenderSpec;

pub const CACHE_MAGIC: &[u8; 4] = b"PIA1";
pub const CACHE_VERSION: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Class index: real 0, fake 1.
    pub fn class(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }
}

/// Metadata for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub video_id: String,
    pub fps: f64,
    pub frame_count: usize,
    pub label: Label,
    /// Manipulation family of fakes (`lip-sync`, `face-swap`, `avatar`), or
    /// `real`.
    pub category: String,
    /// Present for generated videos whose crops are rendered on demand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render: Option<RenderSpec>,
}

/// Everything cached for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub manifest: VideoManifest,
    pub frames: Vec<FrameRecord>,
    pub crops: Vec<VisemeCrop>,
}

#[derive(Serialize, Deserialize)]
struct FrameMeta {
    frame_index: usize,
    timestamp: f64,
    phoneme: Option<String>,
    geometry: LipGeometry,
    valid: bool,
    /// None: no landmark record; Some(detected).
    landmarks: Option<bool>,
    identity: bool,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    manifest: VideoManifest,
    frames: Vec<FrameMeta>,
    crop_frames: Vec<usize>,
}

fn check_consistency(cache: &FeatureCache) -> Result<()> {
    if cache.frames.len() > cache.manifest.frame_count {
        return Err(PiaError::Cache(format!(
            "{} frame records for a {}-frame video",
            cache.frames.len(),
            cache.manifest.frame_count
        )));
    }
    if let Some(f) = cache.frames.iter().find(|f| f.frame_index >= cache.manifest.frame_count) {
        return Err(PiaError::Cache(format!("frame index {} out of range", f.frame_index)));
    }
    for f in &cache.frames {
        if let Some(lm) = &f.landmarks {
            if lm.points.len() != LANDMARK_COUNT {
                return Err(PiaError::Cache(format!("frame {}: malformed landmarks", f.frame_index)));
            }
        }
        if let Some(id) = &f.identity {
            if id.vector.len() != EMBEDDING_DIM {
                return Err(PiaError::Cache(format!("frame {}: malformed identity", f.frame_index)));
            }
        }
    }
    if let Some(c) = cache.crops.iter().find(|c| c.pixels.len() != CROP_LEN) {
        return Err(PiaError::Cache(format!("crop for frame {} is malformed", c.frame_index)));
    }
    Ok(())
}

fn push_blob(out: &mut Vec<u8>, name: &str, data: &[f32]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&((data.len() * 4) as u64).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a cache to bytes.
pub fn encode_cache(cache: &FeatureCache) -> Result<Vec<u8>> {
    check_consistency(cache)?;
    let meta = Metadata {
        manifest: cache.manifest.clone(),
        frames: cache
            .frames
            .iter()
            .map(|f| FrameMeta {
                frame_index: f.frame_index,
                timestamp: f.timestamp,
                phoneme: f.phoneme.clone(),
                geometry: f.geometry,
                valid: f.valid,
                landmarks: f.landmarks.as_ref().map(|l| l.detected),
                identity: f.identity.is_some(),
            })
            .collect(),
        crop_frames: cache.crops.iter().map(|c| c.frame_index).collect(),
    };
    let json = serde_json::to_vec(&meta)?;

    let landmarks: Vec<f32> = cache
        .frames
        .iter()
        .filter_map(|f| f.landmarks.as_ref())
        .flat_map(|l| l.points.iter().flatten().copied())
        .collect();
    let identity: Vec<f32> = cache
        .frames
        .iter()
        .filter_map(|f| f.identity.as_ref())
        .flat_map(|e| e.vector.iter().copied())
        .collect();
    let crops: Vec<f32> = cache.crops.iter().flat_map(|c| c.pixels.iter().copied()).collect();

    let mut out = Vec::with_capacity(json.len() + 4 * (landmarks.len() + identity.len() + crops.len()) + 64);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_blob(&mut out, "landmarks", &landmarks);
    push_blob(&mut out, "identity", &identity);
    push_blob(&mut out, "crops", &crops);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            PiaError::Cache(format!("truncated file while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses bytes produced by [`encode_cache`].
pub fn decode_cache(bytes: &[u8]) -> Result<FeatureCache> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CACHE_MAGIC {
        return Err(PiaError::Cache("not a feature cache (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CACHE_VERSION {
        return Err(PiaError::Cache(format!(
            "unsupported cache version {version}; this reader understands version {CACHE_VERSION}"
        )));
    }
    let meta_len = r.u64("metadata length")? as usize;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| PiaError::Cache(format!("metadata: {e}")))?;

    let mut landmarks = None;
    let mut identity = None;
    let mut crops = None;
    while r.pos < bytes.len() {
        let name_len = r.u16("blob name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "blob name")?)
            .map_err(|_| PiaError::Cache("blob name is not UTF-8".into()))?
            .to_owned();
        let len = r.u64("blob length")? as usize;
        if len % 4 != 0 {
            return Err(PiaError::Cache(format!("blob {name} length {len} is not a multiple of 4")));
        }
        let data: Vec<f32> = r
            .take(len, &name)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        match name.as_str() {
            "landmarks" => landmarks = Some(data),
            "identity" => identity = Some(data),
            "crops" => crops = Some(data),
            other => log::debug!("ignoring unknown cache blob {other}"),
        }
    }
    let (landmarks, identity, crops) = match (landmarks, identity, crops) {
        (Some(l), Some(i), Some(c)) => (l, i, c),
        _ => return Err(PiaError::Cache("truncated file: missing blob".into())),
    };

    let n_landmarks = meta.frames.iter().filter(|f| f.landmarks.is_some()).count();
    let n_identity = meta.frames.iter().filter(|f| f.identity).count();
    if landmarks.len() != n_landmarks * LANDMARK_COUNT * 2
        || identity.len() != n_identity * EMBEDDING_DIM
        || crops.len() != meta.crop_frames.len() * CROP_LEN
    {
        return Err(PiaError::Cache("blob sizes disagree with metadata".into()));
    }

    let mut lm_chunks = landmarks.chunks_exact(LANDMARK_COUNT * 2);
    let mut id_chunks = identity.chunks_exact(EMBEDDING_DIM);
    let frames = meta
        .frames
        .into_iter()
        .map(|f| FrameRecord {
            frame_index: f.frame_index,
            timestamp: f.timestamp,
            phoneme: f.phoneme,
            geometry: f.geometry,
            valid: f.valid,
            landmarks: f.landmarks.map(|detected| LandmarkSet {
                points: lm_chunks
                    .next()
                    .expect("counted above")
                    .chunks_exact(2)
                    .map(|p| [p[0], p[1]])
                    .collect(),
                detected,
            }),
            identity: f.identity.then(|| IdentityEmbedding {
                vector: id_chunks.next().expect("counted above").to_vec(),
                frame_index: f.frame_index,
            }),
        })
        .collect();
    let crops = meta
        .crop_frames
        .into_iter()
        .zip(crops.chunks_exact(CROP_LEN))
        .map(|(frame_index, px)| VisemeCrop {
            frame_index,
            pixels: px.to_vec(),
        })
        .collect();

    let cache = FeatureCache {
        manifest: meta.manifest,
        frames,
        crops,
    };
    check_consistency(&cache)?;
    Ok(cache)
}

/// Writes a cache file; returns the path as the handle.
pub fn write_cache(path: &Path, cache: &FeatureCache) -> Result<()> {
    fs::write(path, encode_cache(cache)?)?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<FeatureCache> {
    let bytes = fs::read(path).map_err(|e| PiaError::Cache(format!("{}: {e}", path.display())))?;
    decode_cache(&bytes)
}
