//! The three-stream detector: per-group geometry, visual and identity
//! encoders, concatenation fusion, multi-head attention pooling over the
//! group sequence of a video, and a two-class head.

mod attention;
mod checkpoint;
mod encoders;
pub mod layers;
mod pia;
mod plain;

use serde::{Deserialize, Serialize};

use crate::alignment::{PhonemeVocabulary, GROUP_SIZE};
use crate::error::{PiaError, Result};
use crate::extractors::{Label, VisemeCrop, CROP_CHANNELS, CROP_LEN, CROP_SIZE, EMBEDDING_DIM};
use crate::scalar::Real;

pub use attention::{AttentionCache, AttentionPool};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoders::{Mlp, MlpCache, VisualCache, VisualEncoder};
use layers::{Dims, Param, TemporalConv};
pub use pia::{identity_features, PiaCache, PiaNet};
pub use plain::{PlainCache, PlainCnn};

/// Values per frame fed to the geometry encoder.
pub const GEOMETRY_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Convolution blocks trained with the rest of the network.
    TrainableSmall,
    /// Convolution blocks kept at their initial values; only the temporal
    /// convolution and the projection train.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Pia,
    /// Convolutional classifier over mouth crops only.
    PlainCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Streams {
    pub viseme: bool,
    pub geometry: bool,
    pub identity: bool,
}

impl Streams {
    pub const ALL: Streams = Streams {
        viseme: true,
        geometry: true,
        identity: true,
    };

    pub fn count(&self) -> usize {
        self.viseme as usize + self.geometry as usize + self.identity as usize
    }
}

/// What the identity encoder sees for each group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityEncoding {
    /// Elementwise mean absolute change between consecutive embeddings of
    /// the group, after scaling each embedding to unit RMS per component.
    /// Frames without an embedding are skipped.
    Drift,
    /// Mean of the group's raw embeddings.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Per-stream embedding width.
    pub d: usize,
    pub heads: usize,
    pub backbone: Backbone,
    pub streams: Streams,
    pub phoneme_one_hot: bool,
    pub classes: usize,
    /// Output channels of the temporal convolution and the three backbone
    /// blocks.
    pub channels: [usize; 4],
    pub geometry_hidden: usize,
    pub identity_hidden: usize,
    pub identity_encoding: IdentityEncoding,
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Pia,
            d: 128,
            heads: 4,
            backbone: Backbone::TrainableSmall,
            streams: Streams::ALL,
            phoneme_one_hot: false,
            classes: 2,
            channels: [4, 8, 16, 16],
            geometry_hidden: 64,
            identity_hidden: 128,
            identity_encoding: IdentityEncoding::Drift,
            head_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PiaError::InvalidConfig(m));
        if self.architecture == Architecture::Pia && self.streams.count() == 0 {
            return bad("at least one stream must be enabled".into());
        }
        if self.heads == 0 || self.d == 0 {
            return bad(format!("d = {} and heads = {} must be positive", self.d, self.heads));
        }
        if self.d % self.heads != 0 {
            return bad(format!("d = {} is not divisible by {} heads", self.d, self.heads));
        }
        if self.classes != 2 {
            return bad(format!("{} classes; the detector is binary", self.classes));
        }
        if self.channels.contains(&0) || self.geometry_hidden == 0 || self.identity_hidden == 0 || self.head_hidden == 0 {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Width of a fused group vector.
    pub fn fused_dim(&self) -> usize {
        3 * self.d + if self.phoneme_one_hot { PhonemeVocabulary::LEN } else { 0 }
    }
}

/// Indicator vector of a vocabulary symbol.
pub fn phoneme_one_hot(symbol: &str) -> Result<Vec<f32>> {
    let i = PhonemeVocabulary::index_of(symbol)
        .ok_or_else(|| PiaError::InvalidInput(format!("{symbol:?} is not in the phoneme vocabulary")))?;
    let mut v = vec![0.0; PhonemeVocabulary::LEN];
    v[i] = 1.0;
    Ok(v)
}

/// Ordered concatenation `g | v | a`.
pub fn fuse<T: Copy>(g: &[T], v: &[T], a: &[T]) -> Result<Vec<T>> {
    if g.len() != v.len() || v.len() != a.len() {
        return Err(PiaError::Shape(format!(
            "stream widths {}, {}, {} differ",
            g.len(),
            v.len(),
            a.len()
        )));
    }
    Ok([g, v, a].concat())
}

/// Model inputs for one phoneme group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupInput {
    pub symbol: String,
    /// `GROUP_SIZE x GEOMETRY_FEATURES`, frame-major; zeros for frames
    /// without a face.
    pub geometry: Vec<f32>,
    /// `GROUP_SIZE x 512` raw identity embeddings; zeros where missing.
    pub identity: Vec<f32>,
    /// Temporally shifted crop means (see [`layers::TemporalConv`]), or empty
    /// when the visual stream is not needed.
    pub visual: Vec<f32>,
}

/// Dimensions of one mouth crop.
pub const CROP_DIMS: Dims = Dims {
    channels: CROP_CHANNELS,
    height: CROP_SIZE,
    width: CROP_SIZE,
};

impl GroupInput {
    /// Preprocesses the crops of one group for the visual encoder.
    pub fn visual_from_crops(crops: &[VisemeCrop]) -> Result<Vec<f32>> {
        if crops.len() != GROUP_SIZE {
            return Err(PiaError::Shape(format!("{} crops in a group of {GROUP_SIZE}", crops.len())));
        }
        if let Some(c) = crops.iter().find(|c| c.pixels.len() != CROP_LEN) {
            return Err(PiaError::Shape(format!(
                "crop of frame {} has {} values, expected {CROP_LEN}",
                c.frame_index,
                c.pixels.len()
            )));
        }
        let frames: Vec<&[f32]> = crops.iter().map(|c| c.pixels.as_slice()).collect();
        Ok(TemporalConv::<f32>::shifted_means(&frames, CROP_DIMS))
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let shape = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(PiaError::Shape(format!("{what} has {got} values, expected {want}")))
            }
        };
        shape("geometry input", self.geometry.len(), GROUP_SIZE * GEOMETRY_FEATURES)?;
        shape("identity input", self.identity.len(), GROUP_SIZE * EMBEDDING_DIM)?;
        let needs_visual = config.architecture == Architecture::PlainCnn || config.streams.viseme;
        if needs_visual {
            shape("visual input", self.visual.len(), 3 * CROP_LEN)?;
        }
        if config.phoneme_one_hot {
            phoneme_one_hot(&self.symbol)?;
        }
        Ok(())
    }
}

/// One video: its phoneme-group sequence plus the frame-level identity
/// sequence the consistency loss runs over.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoInput {
    pub video_id: String,
    pub label: Label,
    pub category: String,
    pub groups: Vec<GroupInput>,
    pub mask: Vec<bool>,
    pub consistency_embeddings: Vec<Vec<f32>>,
    pub consistency_mask: Vec<bool>,
}

/// Two-class logits and the fake-class probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub logits: [f64; 2],
    pub probability: f64,
}

impl DetectionScore {
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let m = logits[0].max(logits[1]);
        let (e0, e1) = ((logits[0] - m).exp(), (logits[1] - m).exp());
        Self {
            logits,
            probability: e1 / (e0 + e1),
        }
    }
}

/// Forward state kept for the backward pass.
#[derive(Debug)]
pub enum NetworkCache<T> {
    Pia(PiaCache<T>),
    Plain(PlainCache<T>),
}

/// Either architecture behind one interface.
#[derive(Debug, Clone)]
pub enum Network<T> {
    Pia(PiaNet<T>),
    Plain(PlainCnn<T>),
}

impl<T: Real> Network<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(match config.architecture {
            Architecture::Pia => Network::Pia(PiaNet::new(config.clone(), seed)),
            Architecture::PlainCnn => Network::Plain(PlainCnn::new(config.clone(), seed)),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Network::Pia(n) => &n.config,
            Network::Plain(n) => &n.config,
        }
    }

    pub fn forward(&self, video: &VideoInput) -> Result<(Vec<T>, NetworkCache<T>)> {
        match self {
            Network::Pia(n) => n.forward(&video.groups, &video.mask).map(|(l, c)| (l, NetworkCache::Pia(c))),
            Network::Plain(n) => n.forward(&video.groups, &video.mask).map(|(l, c)| (l, NetworkCache::Plain(c))),
        }
    }

    /// Accumulates parameter gradients for `dlogits`.
    pub fn backward(&mut self, video: &VideoInput, cache: &NetworkCache<T>, dlogits: &[T]) {
        match (self, cache) {
            (Network::Pia(n), NetworkCache::Pia(c)) => n.backward(&video.groups, c, dlogits),
            (Network::Plain(n), NetworkCache::Plain(c)) => n.backward(&video.groups, c, dlogits),
            _ => unreachable!("cache from a different architecture"),
        }
    }

    pub fn score(&self, video: &VideoInput) -> Result<DetectionScore> {
        let (logits, _) = self.forward(video)?;
        let l = [logits[0].f64(), logits[1].f64()];
        if !l.iter().all(|x| x.is_finite()) {
            return Err(PiaError::Numerical(format!("non-finite logits for {}", video.video_id)));
        }
        Ok(DetectionScore::from_logits(l))
    }

    /// All parameters in a fixed order, frozen ones included.
    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Network::Pia(n) => n.params(),
            Network::Plain(n) => n.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Network::Pia(n) => n.params_mut(),
            Network::Plain(n) => n.params_mut(),
        }
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_examples() {
        let p = phoneme_one_hot("p").unwrap();
        assert_eq!(p[0], 1.0);
        assert_eq!(p.iter().sum::<f32>(), 1.0);
        let all: Vec<Vec<f32>> = crate::alignment::VOCABULARY.iter().map(|s| phoneme_one_hot(s).unwrap()).collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
        assert_eq!(phoneme_one_hot("q").unwrap_err().kind(), "InvalidInput");
    }

    #[test]
    fn fuse_concatenates_in_order() {
        assert_eq!(fuse(&[1, 2], &[3, 4], &[5, 6]).unwrap(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(fuse(&[1], &[3, 4], &[5, 6]).unwrap_err().kind(), "ShapeError");
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let none = ModelConfig {
            streams: Streams {
                viseme: false,
                geometry: false,
                identity: false,
            },
            ..ModelConfig::default()
        };
        assert_eq!(none.validate().unwrap_err().kind(), "InvalidConfig");
        let zero_heads = ModelConfig {
            heads: 0,
            ..ModelConfig::default()
        };
        assert!(zero_heads.validate().is_err());
    }
}
