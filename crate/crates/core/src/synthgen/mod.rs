//! Synthetic labelled videos with known phoneme–viseme consistency and
//! identity drift.
//!
//! Genuine videos keep every frame's mouth aspect ratio inside the band of
//! its phoneme and let the identity embedding wander in small steps. Fakes
//! get some combination of mismatched mouth shapes, planted identity jumps
//! and a smoothed blending patch around the mouth, depending on their
//! manipulation category.

pub mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    filter_vocabulary, label_frames, sample_groups, video_ids, write_index, FrameRecord, IndexEntry,
    PhonemeInterval, PhonemeVocabulary, GROUP_SIZE,
};
use crate::error::{PiaError, Result};
use crate::extractors::cache::{Label, VideoManifest};
use crate::extractors::{write_cache, FeatureCache, FrameImage, IdentityEmbedding, LandmarkSet, EMBEDDING_DIM};
use crate::geometry::{compute_geometry, LipGeometry, LipLandmarkIndexSet, MAR_EPSILON};
pub use render::{MouthParams, RenderSpec};

pub const DEFAULT_FPS: f64 = 25.0;

/// Scale of generated identity embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentityScale {
    /// Consecutive genuine drift around 0.5.
    Unit,
    /// Eight times larger; genuine drift around 4, inside the 2 to 6 band
    /// seen on raw face-recognition embeddings.
    Raw,
}

impl IdentityScale {
    pub fn factor(self) -> f64 {
        match self {
            IdentityScale::Unit => 1.0,
            IdentityScale::Raw => 8.0,
        }
    }

    /// Per-component standard deviation of a genuine random-walk step.
    pub fn step_sigma(self) -> f64 {
        0.5 * self.factor() / (EMBEDDING_DIM as f64).sqrt()
    }
}

/// Silence in a phoneme script.
pub const SCRIPT_SILENCE: &str = "";

/// Generation parameters for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub label: Label,
    pub category: String,
    pub identity_scale: IdentityScale,
    /// Per-component standard deviation of each identity step.
    pub identity_step_sigma: f64,
    /// L2 size of a planted identity jump.
    pub jump_magnitude: f64,
    pub jump_count: usize,
    /// Probability that a speech frame's aspect ratio comes from its own
    /// phoneme's band.
    pub viseme_consistency: f64,
    pub blend_strength: f64,
    /// `(symbol, seconds)`; an empty symbol is silence.
    pub phoneme_script: Vec<(String, f64)>,
}

impl SynthProfile {
    pub fn real(phoneme_script: Vec<(String, f64)>) -> Self {
        Self {
            label: Label::Real,
            category: "real".into(),
            identity_scale: IdentityScale::Raw,
            identity_step_sigma: IdentityScale::Raw.step_sigma(),
            jump_magnitude: 0.0,
            jump_count: 0,
            viseme_consistency: 1.0,
            blend_strength: 0.0,
            phoneme_script,
        }
    }

    /// A fake of the given category with the default manipulation strength.
    pub fn fake(category: &str, phoneme_script: Vec<(String, f64)>) -> Result<Self> {
        let scale = IdentityScale::Raw;
        let (consistency, jumps, blend) = match category {
            "lip-sync" => (0.55, 0, 0.6),
            "face-swap" => (0.9, 3, 0.5),
            "avatar" => (0.7, 1, 0.55),
            other => return Err(PiaError::InvalidConfig(format!("unknown fake category {other:?}"))),
        };
        Ok(Self {
            label: Label::Fake,
            category: category.into(),
            identity_scale: scale,
            identity_step_sigma: scale.step_sigma(),
            jump_magnitude: 1.25 * scale.factor(),
            jump_count: jumps,
            viseme_consistency: consistency,
            blend_strength: blend,
            phoneme_script,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.viseme_consistency) || !(0.0..1.0).contains(&self.blend_strength) {
            return Err(PiaError::InvalidConfig("profile probabilities outside [0, 1]".into()));
        }
        if self.identity_step_sigma < 0.0 || self.jump_magnitude < 0.0 {
            return Err(PiaError::InvalidConfig("negative identity scales".into()));
        }
        if self.label == Label::Real
            && (self.jump_count != 0 || self.viseme_consistency != 1.0 || self.blend_strength != 0.0)
        {
            return Err(PiaError::InvalidConfig(
                "real profiles have no jumps, full consistency and no blending".into(),
            ));
        }
        if self.phoneme_script.iter().any(|(_, d)| !(*d > 0.0)) {
            return Err(PiaError::InvalidConfig("script durations must be positive".into()));
        }
        Ok(())
    }
}

/// Mouth aspect ratio band for a phoneme (silence when `None`).
pub fn mar_band(symbol: Option<&str>) -> (f64, f64) {
    match symbol {
        None => (0.02, 0.10),
        Some("p" | "b" | "m") => (0.0, 0.06),
        Some("f" | "v") => (0.10, 0.18),
        Some("t" | "s") => (0.20, 0.30),
        Some("k") => (0.30, 0.40),
        Some("w") => (0.25, 0.35),
        Some("ɹ") => (0.22, 0.32),
        Some("i") => (0.28, 0.38),
        Some("æ") => (0.60, 0.80),
        Some("o") => (0.50, 0.65),
        Some("ʃ") => (0.30, 0.40),
        Some(_) => (0.20, 0.40),
    }
}

/// Lip width relative to the speaker's neutral width.
fn width_factor(symbol: Option<&str>) -> f64 {
    match symbol {
        Some("w") => 0.7,
        Some("o" | "ʃ") => 0.75,
        Some("ɹ") => 0.8,
        Some("i" | "æ") => 1.08,
        _ => 1.0,
    }
}

/// A phoneme from the opposite end of the openness scale.
fn mismatched(symbol: &str, rng: &mut ChaCha8Rng) -> &'static str {
    let (lo, hi) = mar_band(Some(symbol));
    if (lo + hi) / 2.0 < 0.3 {
        *["æ", "o"].choose(rng).unwrap()
    } else {
        *["p", "b", "m"].choose(rng).unwrap()
    }
}

/// A random speech script: leading silence, then vocabulary phonemes
/// interleaved with fillers and pauses.
pub fn random_script(rng: &mut ChaCha8Rng, vocab_runs: usize) -> Vec<(String, f64)> {
    const FILLERS: [&str; 4] = ["ə", "n", "l", "d"];
    let mut script = vec![(SCRIPT_SILENCE.to_string(), rng.gen_range(0.08..0.2))];
    let mut last = "";
    for r in 0..vocab_runs {
        let symbol = loop {
            let s = *crate::alignment::VOCABULARY.choose(rng).unwrap();
            if s != last {
                break s;
            }
        };
        last = symbol;
        script.push((symbol.to_string(), rng.gen_range(0.12..0.34)));
        if r + 1 < vocab_runs {
            if rng.gen_bool(0.25) {
                script.push((SCRIPT_SILENCE.to_string(), rng.gen_range(0.08..0.16)));
            } else {
                let filler = *FILLERS.choose(rng).unwrap();
                script.push((filler.to_string(), rng.gen_range(0.06..0.14)));
            }
        }
    }
    script.push((SCRIPT_SILENCE.to_string(), rng.gen_range(0.08..0.2)));
    script
}

/// Generated video plus the ground truth behind it.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub manifest: VideoManifest,
    pub frames: Vec<FrameRecord>,
    pub intervals: Vec<PhonemeInterval>,
    pub mouths: Vec<MouthParams>,
    /// Aspect ratio each frame was generated with.
    pub target_mar: Vec<f64>,
    /// Frames whose mouth shape was drawn from a mismatched phoneme.
    pub mismatched_frames: Vec<usize>,
    /// Pair indices `t` where an identity jump was planted between frames
    /// `t` and `t + 1`.
    pub jump_pairs: Vec<usize>,
}

impl SynthVideo {
    pub fn render_spec(&self) -> &RenderSpec {
        self.manifest.render.as_ref().expect("synthetic videos carry a render spec")
    }

    pub fn frame_image(&self, frame_index: usize) -> FrameImage {
        render::render_frame(self.render_spec(), &self.mouths[frame_index], frame_index)
    }

    pub fn identities(&self) -> Vec<IdentityEmbedding> {
        self.frames.iter().filter_map(|f| f.identity.clone()).collect()
    }

    pub fn to_cache(&self, embed_crops: bool, frames_for_crops: &[usize]) -> FeatureCache {
        let crops = if embed_crops {
            frames_for_crops
                .iter()
                .map(|&i| render::render_crop(self.render_spec(), &self.frames[i]))
                .collect()
        } else {
            Vec::new()
        };
        FeatureCache {
            manifest: self.manifest.clone(),
            frames: self.frames.clone(),
            crops,
        }
    }
}

/// Generates one video from a profile.
pub fn generate_video(video_id: &str, profile: &SynthProfile, fps: f64, seed: u64) -> Result<SynthVideo> {
    profile.validate()?;
    if !(fps > 0.0) {
        return Err(PiaError::InvalidInput(format!("frame rate {fps}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // timeline
    let mut intervals = Vec::new();
    let mut t = 0.0;
    for (symbol, dur) in &profile.phoneme_script {
        if symbol != SCRIPT_SILENCE {
            intervals.push(PhonemeInterval::new(symbol.clone(), t, t + dur)?);
        }
        t += dur;
    }
    let frame_count = ((t * fps).ceil() as usize).max(2);
    let labels = label_frames(&intervals, fps, frame_count)?;

    // mouth shapes
    let neutral_width = rng.gen_range(0.36..0.42);
    let lip_thickness = rng.gen_range(0.03..0.04);
    let (cx0, cy0) = (rng.gen_range(0.47..0.53), rng.gen_range(0.52..0.58));
    let mut target_mar = Vec::with_capacity(frame_count);
    let mut mismatched_frames = Vec::new();
    let mut mouths = Vec::with_capacity(frame_count);
    let mut run_target = 0.0;
    for (i, lf) in labels.iter().enumerate() {
        let symbol = lf.symbol.as_deref();
        let (lo, hi) = mar_band(symbol);
        if i == 0 || labels[i - 1].symbol != lf.symbol {
            run_target = rng.gen_range(lo..=hi);
        }
        let jitter = 0.1 * (hi - lo) * rng.gen_range(-1.0..=1.0);
        let mut mar = (run_target + jitter).clamp(lo, hi);
        let mut shape_symbol = symbol;
        if let Some(s) = symbol.filter(|s| PhonemeVocabulary::contains(s)) {
            if !rng.gen_bool(profile.viseme_consistency) {
                let other = mismatched(s, &mut rng);
                let (mlo, mhi) = mar_band(Some(other));
                mar = rng.gen_range(mlo..=mhi);
                shape_symbol = Some(other);
                mismatched_frames.push(i);
            }
        }
        let width = neutral_width * width_factor(shape_symbol) * (1.0 + 0.01 * rng.gen_range(-1.0..=1.0));
        target_mar.push(mar);
        mouths.push(MouthParams {
            cx: cx0 + 0.004 * rng.gen_range(-1.0..=1.0),
            cy: cy0 + 0.004 * rng.gen_range(-1.0..=1.0),
            half_width: width / 2.0,
            half_height: mar * (width + MAR_EPSILON) / 2.0,
            lip_thickness,
        });
    }

    // identity trajectory
    let base_sd = profile.identity_scale.factor() / 8.0;
    let mut current: Vec<f64> = (0..EMBEDDING_DIM)
        .map(|_| base_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let valid: Vec<bool> = labels.iter().map(|l| l.symbol.is_some()).collect();
    let mut candidates: Vec<usize> = (0..frame_count - 1).filter(|&t| valid[t] && valid[t + 1]).collect();
    if candidates.len() < profile.jump_count {
        return Err(PiaError::InvalidConfig(format!(
            "script leaves {} speech pairs for {} jumps",
            candidates.len(),
            profile.jump_count
        )));
    }
    candidates.shuffle(&mut rng);
    let mut jump_pairs: Vec<usize> = candidates[..profile.jump_count].to_vec();
    jump_pairs.sort_unstable();

    let mut identities = Vec::with_capacity(frame_count);
    for i in 0..frame_count {
        if i > 0 {
            let step: Vec<f64> = if jump_pairs.binary_search(&(i - 1)).is_ok() {
                let dir: Vec<f64> = (0..EMBEDDING_DIM).map(|_| rng.sample(StandardNormal)).collect();
                let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                dir.iter().map(|x| x / n * profile.jump_magnitude).collect()
            } else {
                (0..EMBEDDING_DIM)
                    .map(|_| profile.identity_step_sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            };
            for (c, s) in current.iter_mut().zip(step) {
                *c += s;
            }
        }
        identities.push(current.iter().map(|&x| x as f32).collect::<Vec<f32>>());
    }

    let index_set = LipLandmarkIndexSet::default();
    let mut frames = Vec::with_capacity(frame_count);
    for (i, lf) in labels.iter().enumerate() {
        let landmarks = LandmarkSet::detected(render::mouth_landmarks(&mouths[i]))?;
        let geometry: LipGeometry = compute_geometry(&landmarks, &index_set, MAR_EPSILON)?;
        frames.push(FrameRecord {
            frame_index: i,
            timestamp: i as f64 / fps,
            phoneme: lf.symbol.clone(),
            landmarks: Some(landmarks),
            geometry,
            identity: Some(IdentityEmbedding::new(identities[i].clone(), i)?),
            valid: valid[i],
        });
    }

    let manifest = VideoManifest {
        video_id: video_id.to_string(),
        fps,
        frame_count,
        label: profile.label,
        category: profile.category.clone(),
        render: Some(RenderSpec {
            texture_seed: rng.gen(),
            tone: rng.gen_range(-15.0..15.0),
            blend_strength: profile.blend_strength,
        }),
    };
    Ok(SynthVideo {
        manifest,
        frames,
        intervals,
        mouths,
        target_mar,
        mismatched_frames,
        jump_pairs,
    })
}

/// Options for [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub fps: f64,
    pub vocab_runs: usize,
    /// Fraction of each class held out for testing.
    pub test_fraction: f64,
    /// Store rendered crops in the caches instead of rendering on demand.
    pub embed_crops: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            fps: DEFAULT_FPS,
            vocab_runs: 6,
            test_fraction: 0.2,
            embed_crops: false,
        }
    }
}

/// Paths written by [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub index: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
}

pub const FAKE_CATEGORIES: [&str; 3] = ["lip-sync", "face-swap", "avatar"];

/// Index entries for one cached video: one per sampled phoneme group.
pub fn index_entries(cache: &FeatureCache, cache_rel: &str) -> Vec<IndexEntry> {
    let labeled: Vec<_> = cache
        .frames
        .iter()
        .map(|f| crate::alignment::LabeledFrame {
            frame_index: f.frame_index,
            symbol: f.phoneme.clone(),
        })
        .collect();
    let position: BTreeMap<usize, usize> = cache
        .frames
        .iter()
        .enumerate()
        .map(|(pos, f)| (f.frame_index, pos))
        .collect();
    sample_groups(&filter_vocabulary(&labeled), GROUP_SIZE)
        .into_iter()
        .map(|g| IndexEntry {
            video_id: cache.manifest.video_id.clone(),
            frame_offsets: g.frame_indices.iter().map(|i| position[i]).collect(),
            symbol: g.symbol,
            frame_indices: g.frame_indices,
            label: cache.manifest.label,
            category: cache.manifest.category.clone(),
            cache: cache_rel.to_string(),
        })
        .collect()
}

/// Splits entries into `(train, test)` by video, drawing `test_fraction`
/// of each label's videos for the test side; each label keeps at least
/// one training video.
pub fn split_entries(entries: &[IndexEntry], test_fraction: f64, seed: u64) -> (Vec<IndexEntry>, Vec<IndexEntry>) {
    let mut ids_by_label: BTreeMap<Label, Vec<String>> = BTreeMap::new();
    for id in video_ids(entries) {
        let label = entries.iter().find(|e| e.video_id == id).map(|e| e.label).unwrap_or(Label::Real);
        ids_by_label.entry(label).or_default().push(id);
    }
    let mut split_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5917);
    let mut test_ids = BTreeSet::new();
    for ids in ids_by_label.values_mut() {
        ids.shuffle(&mut split_rng);
        let n_test = ((ids.len() as f64 * test_fraction).round() as usize).min(ids.len().saturating_sub(1));
        test_ids.extend(ids[..n_test].iter().cloned());
    }
    let (test, train) = entries.iter().cloned().partition(|e| test_ids.contains(&e.video_id));
    (train, test)
}

/// Writes `n_real + n_fake` cached videos under `out/caches/` plus
/// `index.jsonl`, `train.jsonl` and `test.jsonl`.
pub fn generate_dataset(n_real: usize, n_fake: usize, seed: u64, out: &Path, opts: &DatasetOptions) -> Result<DatasetPaths> {
    if n_real == 0 || n_fake == 0 {
        return Err(PiaError::InvalidInput("need at least one real and one fake video".into()));
    }
    let caches = out.join("caches");
    fs::create_dir_all(&caches)?;

    let mut all = Vec::new();
    for i in 0..n_real + n_fake {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let script = random_script(&mut rng, opts.vocab_runs);
        let (video_id, profile) = if i < n_real {
            (format!("real_{i:04}"), SynthProfile::real(script))
        } else {
            let k = i - n_real;
            let cat = FAKE_CATEGORIES[k % FAKE_CATEGORIES.len()];
            (format!("fake_{k:04}"), SynthProfile::fake(cat, script)?)
        };
        let video = generate_video(&video_id, &profile, opts.fps, rng.gen())?;
        let rel = format!("caches/{video_id}.pia");

        let mut entries = index_entries(&video.to_cache(false, &[]), &rel);
        let cache = if opts.embed_crops {
            let mut frames: Vec<usize> = entries.iter().flat_map(|e| e.frame_indices.clone()).collect();
            frames.sort_unstable();
            frames.dedup();
            let cache = video.to_cache(true, &frames);
            entries = index_entries(&cache, &rel);
            cache
        } else {
            video.to_cache(false, &[])
        };
        write_cache(&out.join(&rel), &cache)?;
        all.extend(entries);
    }

    let (train, test) = split_entries(&all, opts.test_fraction, seed);

    let paths = DatasetPaths {
        index: out.join("index.jsonl"),
        train: out.join("train.jsonl"),
        test: out.join("test.jsonl"),
    };
    write_index(&paths.index, &all)?;
    write_index(&paths.train, &train)?;
    write_index(&paths.test, &test)?;
    Ok(paths)
}
