//! Turns index entries plus their feature caches into model inputs.

use std::collections::BTreeMap;
use std::path::Path;

use crate::alignment::{read_index, FrameRecord, IndexEntry};
use crate::error::{PiaError, Result};
use crate::extractors::{read_cache, FeatureCache, VisemeCrop, EMBEDDING_DIM};
use crate::model::{GroupInput, VideoInput, GEOMETRY_FEATURES};
use crate::synthgen::render::render_crop;

/// Videos in index order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub videos: Vec<VideoInput>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Number of videos per class `(real, fake)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let fake = self.videos.iter().filter(|v| v.label.is_fake()).count();
        (self.videos.len() - fake, fake)
    }
}

/// Reads an index file; cache paths resolve against its directory.
pub fn load_dataset(index: &Path, with_visual: bool) -> Result<Dataset> {
    let entries = read_index(index)?;
    let base = index.parent().unwrap_or(Path::new("."));
    load_entries(&entries, base, with_visual)
}

pub fn load_entries(entries: &[IndexEntry], base: &Path, with_visual: bool) -> Result<Dataset> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_video: BTreeMap<&str, Vec<&IndexEntry>> = BTreeMap::new();
    for e in entries {
        let list = by_video.entry(&e.video_id).or_default();
        if list.is_empty() {
            order.push(&e.video_id);
        }
        list.push(e);
    }
    let mut videos = Vec::with_capacity(order.len());
    for id in order {
        let group_entries = &by_video[id];
        let cache = read_cache(&base.join(&group_entries[0].cache))?;
        videos.push(video_input(&cache, group_entries, with_visual)?);
    }
    Ok(Dataset { videos })
}

fn frame_crop(cache: &FeatureCache, frame: &FrameRecord) -> Result<VisemeCrop> {
    if let Some(c) = cache.crops.iter().find(|c| c.frame_index == frame.frame_index) {
        return Ok(c.clone());
    }
    match &cache.manifest.render {
        Some(spec) => Ok(render_crop(spec, frame)),
        None => Err(PiaError::InvalidDataset(format!(
            "video {} has no crop for frame {}",
            cache.manifest.video_id, frame.frame_index
        ))),
    }
}

/// Builds one video's inputs from its cache and its index entries.
pub fn video_input(cache: &FeatureCache, entries: &[&IndexEntry], with_visual: bool) -> Result<VideoInput> {
    let manifest = &cache.manifest;
    let mut groups = Vec::with_capacity(entries.len());
    let mut mask = Vec::with_capacity(entries.len());
    let mut consistency_embeddings = Vec::new();
    let mut consistency_mask = Vec::new();
    for e in entries {
        if e.video_id != manifest.video_id {
            return Err(PiaError::InvalidDataset(format!(
                "entry for {} points at the cache of {}",
                e.video_id, manifest.video_id
            )));
        }
        let frames: Vec<&FrameRecord> = e
            .frame_offsets
            .iter()
            .map(|&o| {
                cache.frames.get(o).ok_or_else(|| {
                    PiaError::InvalidDataset(format!("{}: frame offset {o} out of range", e.video_id))
                })
            })
            .collect::<Result<_>>()?;
        let mut geometry = Vec::with_capacity(frames.len() * GEOMETRY_FEATURES);
        let mut identity = Vec::with_capacity(frames.len() * EMBEDDING_DIM);
        for f in &frames {
            if f.face_detected() {
                geometry.extend(f.geometry.to_array().iter().map(|&v| v as f32));
            } else {
                geometry.extend([0.0; GEOMETRY_FEATURES]);
            }
            match &f.identity {
                Some(id) => {
                    identity.extend_from_slice(&id.vector);
                    consistency_embeddings.push(id.vector.clone());
                    consistency_mask.push(f.valid);
                }
                None => {
                    identity.extend([0.0; EMBEDDING_DIM]);
                    consistency_embeddings.push(vec![0.0; EMBEDDING_DIM]);
                    consistency_mask.push(false);
                }
            }
        }
        let visual = if with_visual {
            let crops = frames.iter().map(|f| frame_crop(cache, f)).collect::<Result<Vec<_>>>()?;
            GroupInput::visual_from_crops(&crops)?
        } else {
            Vec::new()
        };
        mask.push(frames.iter().any(|f| f.face_detected()));
        groups.push(GroupInput {
            symbol: e.symbol.clone(),
            geometry,
            identity,
            visual,
        });
    }
    Ok(VideoInput {
        video_id: manifest.video_id.clone(),
        label: manifest.label,
        category: manifest.category.clone(),
        groups,
        mask,
        consistency_embeddings,
        consistency_mask,
    })
}
