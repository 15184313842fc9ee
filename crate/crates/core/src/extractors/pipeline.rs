//! Per-video extraction: audio to phoneme-labelled frames, then landmarks,
//! lip geometry, identity embeddings and mouth crops for each frame.

use std::collections::BTreeSet;

use super::{
    canonicalize_audio, crop_mouth, detect_landmarks, embed_identity, phonemize, transcribe, AudioTrack, FeatureCache,
    FrameImage, IdentityEmbedder, Label, LandmarkDetector, Phonemizer, Transcriber, VideoManifest,
};
use crate::alignment::{filter_vocabulary, label_frames, sample_groups, FrameRecord, PhonemeVocabulary, GROUP_SIZE};
use crate::error::{PiaError, Result};
use crate::geometry::{compute_geometry, LipGeometry, LipLandmarkIndexSet, MAR_EPSILON};

/// The four perception adapters used for one extraction run.
pub struct Adapters<'a> {
    pub transcriber: &'a dyn Transcriber,
    pub phonemizer: &'a dyn Phonemizer,
    pub landmarks: &'a dyn LandmarkDetector,
    pub embedder: &'a dyn IdentityEmbedder,
}

#[derive(Debug, Clone)]
pub struct VideoMeta {
    pub video_id: String,
    pub fps: f64,
    pub label: Label,
    pub category: String,
}

/// Runs every adapter over one video and assembles its feature cache.
///
/// A frame is valid when it carries a vocabulary phoneme, a detected face
/// and an identity embedding. Crops are stored for the frames that the
/// phoneme-group sampler selects.
pub fn extract_video(meta: &VideoMeta, audio: &AudioTrack, frames: &[FrameImage], adapters: &Adapters) -> Result<FeatureCache> {
    if frames.is_empty() {
        return Err(PiaError::InvalidInput(format!("video {} has no frames", meta.video_id)));
    }
    let audio = canonicalize_audio(audio)?;
    let words = transcribe(adapters.transcriber, &audio)?;
    let intervals = phonemize(adapters.phonemizer, &words)?;
    let labels = label_frames(&intervals, meta.fps, frames.len())?;
    let lips = LipLandmarkIndexSet::default();

    let mut records = Vec::with_capacity(frames.len());
    let mut landmark_sets = Vec::with_capacity(frames.len());
    for (frame, label) in frames.iter().zip(&labels) {
        let lm = detect_landmarks(adapters.landmarks, frame)?;
        let geometry = if lm.detected {
            compute_geometry(&lm, &lips, MAR_EPSILON)?
        } else {
            LipGeometry::default()
        };
        let identity = match embed_identity(adapters.embedder, frame) {
            Ok(e) => Some(e),
            Err(PiaError::NoFace(_)) => None,
            Err(e) => return Err(e),
        };
        let speech = label.symbol.as_deref().is_some_and(PhonemeVocabulary::contains);
        records.push(FrameRecord {
            frame_index: frame.frame_index,
            timestamp: frame.frame_index as f64 / meta.fps,
            phoneme: label.symbol.clone(),
            valid: speech && lm.detected && identity.is_some(),
            landmarks: Some(lm.clone()),
            geometry,
            identity,
        });
        landmark_sets.push(lm);
    }

    let wanted: BTreeSet<usize> = sample_groups(&filter_vocabulary(&labels), GROUP_SIZE)
        .into_iter()
        .flat_map(|g| g.frame_indices)
        .collect();
    let all_lips = lips.all();
    let mut crops = Vec::with_capacity(wanted.len());
    for (i, frame) in frames.iter().enumerate() {
        if wanted.contains(&frame.frame_index) {
            let idx: &[usize] = if landmark_sets[i].detected { &all_lips } else { &[] };
            crops.push(crop_mouth(frame, &landmark_sets[i], idx)?);
        }
    }

    Ok(FeatureCache {
        manifest: VideoManifest {
            video_id: meta.video_id.clone(),
            fps: meta.fps,
            frame_count: frames.len(),
            label: meta.label,
            category: meta.category.clone(),
            render: None,
        },
        frames: records,
        crops,
    })
}

/// Decodes an image file into an RGB frame.
pub fn read_frame_image(path: &std::path::Path, frame_index: usize) -> Result<FrameImage> {
    let img = image::open(path)
        .map_err(|e| PiaError::Decode(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let frame = FrameImage::new(frame_index, w as usize, h as usize, img.into_raw());
    frame.validate()?;
    Ok(frame)
}

/// Encodes a frame as PNG.
pub fn write_frame_image(path: &std::path::Path, frame: &FrameImage) -> Result<()> {
    let img = image::RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.rgb.clone())
        .ok_or_else(|| PiaError::Decode(format!("frame {} has inconsistent size", frame.frame_index)))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| PiaError::Io(std::io::Error::other(e.to_string())))
}
