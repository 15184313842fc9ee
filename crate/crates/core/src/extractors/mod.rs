//! Perception front end.
//!
//! The detector consumes four kinds of perception output: word-level
//! transcripts, phoneme intervals, face-mesh landmarks and identity
//! embeddings. Each comes from a heavyweight external model, so every one of
//! them sits behind a small adapter trait with three flavours:
//!
//! * **live** adapters shell out to an external program that wraps the real
//!   model and prints JSON,
//! * **fixture** adapters replay committed recordings,
//! * **synthetic** adapters are wired to the ground truth of
//!   [`crate::synthgen`].
//!
//! The free functions in this module ([`transcribe`], [`phonemize`],
//! [`detect_landmarks`], [`embed_identity`]) wrap any adapter and enforce the
//! output contracts, so downstream code never sees an unordered transcript or
//! a malformed landmark set.

mod adapters;
mod audio;
pub mod cache;
mod crop;
mod g2p;
mod pipeline;

use serde::{Deserialize, Serialize};

pub use adapters::{
    check_containment, detect_landmarks, embed_identity, phonemize, transcribe,
    CommandEmbedder, CommandLandmarkDetector, CommandTranscriber, FixtureEmbedder,
    FixtureLandmarkDetector, FixturePhonemizer, FixtureTranscriber, IdentityEmbedder,
    LandmarkDetector, Phonemizer, ReferencePhonemizer, SyntheticEmbedder,
    SyntheticLandmarkDetector, Transcriber,
};
pub use audio::{canonicalize_audio, read_wav, write_wav, AudioTrack, CANONICAL_SAMPLE_RATE};
pub use cache::{decode_cache, encode_cache, read_cache, write_cache, FeatureCache, Label, VideoManifest, CACHE_MAGIC, CACHE_VERSION};
pub use crop::{crop_mouth, CROP_MEAN, CROP_STD};
pub use g2p::word_to_phonemes;
pub use pipeline::{extract_video, read_frame_image, write_frame_image, Adapters, VideoMeta};

use crate::error::{PiaError, Result};

/// Number of points produced by the face-mesh landmark model.
pub const LANDMARK_COUNT: usize = 468;
/// Dimension of identity embeddings.
pub const EMBEDDING_DIM: usize = 512;
/// Side length of square viseme crops, in pixels.
pub const CROP_SIZE: usize = 112;
/// Channel count of viseme crops.
pub const CROP_CHANNELS: usize = 3;
/// Number of scalars in one crop.
pub const CROP_LEN: usize = CROP_CHANNELS * CROP_SIZE * CROP_SIZE;

/// A transcribed word with its time span in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSegment {
    pub text: String,
    pub start: f64,
    pub end: f64,
}

/// A decoded video frame, 8-bit RGB, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameImage {
    pub frame_index: usize,
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl FrameImage {
    pub fn new(frame_index: usize, width: usize, height: usize, rgb: Vec<u8>) -> Self {
        Self {
            frame_index,
            width,
            height,
            rgb,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.rgb.len() != self.width * self.height * 3 {
            return Err(PiaError::Decode(format!(
                "frame {}: {} bytes for {}x{} RGB",
                self.frame_index,
                self.rgb.len(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    /// True when no pixel is brighter than a near-black level.
    pub fn is_blank(&self) -> bool {
        self.rgb.iter().all(|&v| v < 8)
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

/// Face-mesh landmarks in normalized image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<[f32; 2]>,
    pub detected: bool,
}

impl LandmarkSet {
    pub fn undetected() -> Self {
        Self {
            points: vec![[0.0; 2]; LANDMARK_COUNT],
            detected: false,
        }
    }

    pub fn detected(points: Vec<[f32; 2]>) -> Result<Self> {
        let set = Self {
            points,
            detected: true,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != LANDMARK_COUNT {
            return Err(PiaError::InvalidInput(format!(
                "expected {LANDMARK_COUNT} landmarks, got {}",
                self.points.len()
            )));
        }
        if self.detected {
            let bad = self
                .points
                .iter()
                .position(|p| !p.iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c)));
            if let Some(i) = bad {
                return Err(PiaError::InvalidInput(format!(
                    "landmark {i} outside the unit square: {:?}",
                    self.points[i]
                )));
            }
        }
        Ok(())
    }
}

/// A 512-d identity embedding for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityEmbedding {
    pub vector: Vec<f32>,
    pub frame_index: usize,
}

impl IdentityEmbedding {
    pub fn new(vector: Vec<f32>, frame_index: usize) -> Result<Self> {
        if vector.len() != EMBEDDING_DIM {
            return Err(PiaError::Shape(format!(
                "identity embedding has {} components, expected {EMBEDDING_DIM}",
                vector.len()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(PiaError::Numerical(format!(
                "non-finite identity embedding at frame {frame_index}"
            )));
        }
        Ok(Self {
            vector,
            frame_index,
        })
    }
}

/// A normalized mouth crop, channel-major (`3 x 112 x 112`).
#[derive(Debug, Clone, PartialEq)]
pub struct VisemeCrop {
    pub frame_index: usize,
    pub pixels: Vec<f32>,
}

impl VisemeCrop {
    pub fn new(frame_index: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != CROP_LEN {
            return Err(PiaError::Shape(format!(
                "crop for frame {frame_index} has {} values, expected {CROP_LEN}",
                pixels.len()
            )));
        }
        Ok(Self {
            frame_index,
            pixels,
        })
    }
}
