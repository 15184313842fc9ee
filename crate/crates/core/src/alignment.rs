//! Frame-level phoneme labelling and five-frame group sampling.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PiaError, Result};
use crate::extractors::{IdentityEmbedding, LandmarkSet};
use crate::extractors::cache::Label;
use crate::geometry::LipGeometry;

/// Frames per phoneme group.
pub const GROUP_SIZE: usize = 5;

/// The 14 visually distinct phonemes, in index order: bilabials, labiodentals,
/// alveolars, velar, approximants, vowels, postalveolar.
pub const VOCABULARY: [&str; 14] = ["p", "b", "m", "f", "v", "t", "s", "k", "w", "ɹ", "i", "æ", "o", "ʃ"];

/// Index lookup over [`VOCABULARY`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PhonemeVocabulary;

impl PhonemeVocabulary {
    pub const LEN: usize = VOCABULARY.len();

    pub fn index_of(symbol: &str) -> Option<usize> {
        VOCABULARY.iter().position(|&s| s == symbol)
    }

    pub fn symbol(index: usize) -> Option<&'static str> {
        VOCABULARY.get(index).copied()
    }

    pub fn contains(symbol: &str) -> bool {
        Self::index_of(symbol).is_some()
    }
}

/// An IPA phoneme with its half-open time span `[start, end)` in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeInterval {
    pub symbol: String,
    pub start: f64,
    pub end: f64,
}

impl PhonemeInterval {
    pub fn new(symbol: impl Into<String>, start: f64, end: f64) -> Result<Self> {
        let iv = Self {
            symbol: symbol.into(),
            start,
            end,
        };
        iv.validate()?;
        Ok(iv)
    }

    pub fn validate(&self) -> Result<()> {
        if self.symbol.is_empty() || !(self.start < self.end) || !self.start.is_finite() || !self.end.is_finite() {
            return Err(PiaError::InvalidInput(format!(
                "phoneme interval {:?} [{}, {})",
                self.symbol, self.start, self.end
            )));
        }
        Ok(())
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }
}

/// A frame index with its phoneme, `None` meaning silence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledFrame {
    pub frame_index: usize,
    pub symbol: Option<String>,
}

/// Everything known about one frame after extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub timestamp: f64,
    pub phoneme: Option<String>,
    pub landmarks: Option<LandmarkSet>,
    pub geometry: LipGeometry,
    pub identity: Option<IdentityEmbedding>,
    /// Mask bit: speech frame with a detected face.
    pub valid: bool,
}

impl FrameRecord {
    pub fn face_detected(&self) -> bool {
        self.landmarks.as_ref().is_some_and(|l| l.detected)
    }
}

/// Assigns each frame the phoneme whose interval contains `frame_index / fps`.
///
/// Frames outside every interval are silence.
pub fn label_frames(intervals: &[PhonemeInterval], fps: f64, frame_count: usize) -> Result<Vec<LabeledFrame>> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(PiaError::InvalidInput(format!("frame rate {fps}")));
    }
    for iv in intervals {
        iv.validate()?;
    }
    for pair in intervals.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(PiaError::InvalidInput(format!(
                "intervals {:?} [{}, {}) and {:?} [{}, {}) overlap or are unordered",
                pair[0].symbol, pair[0].start, pair[0].end, pair[1].symbol, pair[1].start, pair[1].end
            )));
        }
    }

    Ok((0..frame_count)
        .map(|frame_index| {
            let t = frame_index as f64 / fps;
            // last interval starting at or before t
            let k = intervals.partition_point(|iv| iv.start <= t);
            let symbol = k
                .checked_sub(1)
                .map(|k| &intervals[k])
                .filter(|iv| iv.contains(t))
                .map(|iv| iv.symbol.clone());
            LabeledFrame { frame_index, symbol }
        })
        .collect())
}

/// Keeps only frames labelled with a vocabulary phoneme.
pub fn filter_vocabulary(frames: &[LabeledFrame]) -> Vec<LabeledFrame> {
    frames
        .iter()
        .filter(|f| f.symbol.as_deref().is_some_and(PhonemeVocabulary::contains))
        .cloned()
        .collect()
}

/// Frame indices chosen for one phoneme occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSkeleton {
    pub symbol: String,
    pub frame_indices: Vec<usize>,
}

/// Splits frames into maximal runs of consecutive indices sharing a symbol
/// and picks `k` frames from each.
///
/// Long runs are sampled at `first + j (len - 1) / (k - 1)` rounded half to
/// even; runs shorter than `k` are padded by repeating their last frame.
pub fn sample_groups(frames: &[LabeledFrame], k: usize) -> Vec<GroupSkeleton> {
    assert!(k >= 1, "group size must be positive");
    let mut groups = Vec::new();
    let mut i = 0;
    while i < frames.len() {
        let Some(symbol) = frames[i].symbol.clone() else {
            i += 1;
            continue;
        };
        let mut j = i + 1;
        while j < frames.len()
            && frames[j].symbol.as_deref() == Some(symbol.as_str())
            && frames[j].frame_index == frames[j - 1].frame_index + 1
        {
            j += 1;
        }
        let first = frames[i].frame_index;
        let len = j - i;
        let frame_indices = if len >= k {
            let last = len - 1;
            (0..k)
                .map(|s| {
                    if k == 1 {
                        first
                    } else {
                        first + (s as f64 * last as f64 / (k - 1) as f64).round_ties_even() as usize
                    }
                })
                .collect()
        } else {
            (0..k).map(|s| first + s.min(len - 1)).collect()
        };
        groups.push(GroupSkeleton { symbol, frame_indices });
        i = j;
    }
    groups
}

/// One line of the dataset index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub video_id: String,
    pub symbol: String,
    pub frame_indices: Vec<usize>,
    pub label: Label,
    pub category: String,
    /// Cache file, relative to the index file's directory.
    pub cache: String,
    /// Positions of the sampled frames within the cache's frame list.
    pub frame_offsets: Vec<usize>,
}

pub fn write_index(path: &Path, entries: &[IndexEntry]) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn read_index(path: &Path) -> Result<Vec<IndexEntry>> {
    let f = fs::File::open(path)?;
    let mut entries = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| {
            PiaError::InvalidDataset(format!("{} line {}: {e}", path.display(), n + 1))
        })?);
    }
    Ok(entries)
}

/// Distinct video ids in first-appearance order.
pub fn video_ids(entries: &[IndexEntry]) -> Vec<String> {
    let mut seen = HashSet::new();
    entries
        .iter()
        .filter(|e| seen.insert(e.video_id.clone()))
        .map(|e| e.video_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lf(frame_index: usize, symbol: Option<&str>) -> LabeledFrame {
        LabeledFrame {
            frame_index,
            symbol: symbol.map(String::from),
        }
    }

    #[test]
    fn vocabulary_is_a_bijection() {
        assert_eq!(PhonemeVocabulary::LEN, 14);
        for (i, s) in VOCABULARY.iter().enumerate() {
            assert_eq!(PhonemeVocabulary::index_of(s), Some(i));
            assert_eq!(PhonemeVocabulary::symbol(i), Some(*s));
        }
        assert_eq!(PhonemeVocabulary::index_of("ə"), None);
    }

    #[test]
    fn frame_inside_interval_gets_its_symbol() {
        let ivs = [PhonemeInterval::new("m", 0.10, 0.20).unwrap()];
        let frames = label_frames(&ivs, 25.0, 10).unwrap();
        assert_eq!(frames.len(), 10);
        assert_eq!(frames[3].symbol.as_deref(), Some("m"));
        assert_eq!(frames[2].symbol, None);
        // t = 0.20 is the open end
        assert_eq!(frames[5].symbol, None);
    }

    #[test]
    fn boundary_frame_goes_to_next_interval() {
        let ivs = [
            PhonemeInterval::new("m", 0.0, 0.2).unwrap(),
            PhonemeInterval::new("æ", 0.2, 0.4).unwrap(),
        ];
        let frames = label_frames(&ivs, 25.0, 12).unwrap();
        assert_eq!(frames[4].symbol.as_deref(), Some("m"));
        assert_eq!(frames[5].symbol.as_deref(), Some("æ"));
        assert_eq!(frames[10].symbol, None);
    }

    #[test]
    fn no_intervals_is_all_silence() {
        let frames = label_frames(&[], 30.0, 7).unwrap();
        assert!(frames.iter().all(|f| f.symbol.is_none()));
    }

    #[test]
    fn overlapping_intervals_are_rejected() {
        let ivs = [
            PhonemeInterval::new("m", 0.0, 0.3).unwrap(),
            PhonemeInterval::new("æ", 0.2, 0.4).unwrap(),
        ];
        assert_eq!(label_frames(&ivs, 25.0, 5).unwrap_err().kind(), "InvalidInput");
    }

    #[test]
    fn filter_keeps_only_vocabulary() {
        let frames = [lf(0, Some("m")), lf(1, None), lf(2, Some("ə")), lf(3, Some("m"))];
        let kept = filter_vocabulary(&frames);
        assert_eq!(kept, vec![lf(0, Some("m")), lf(3, Some("m"))]);
        assert!(filter_vocabulary(&[lf(0, None), lf(1, None)]).is_empty());
    }

    #[test]
    fn eleven_frame_run_samples_five() {
        let frames: Vec<_> = (10..=20).map(|i| lf(i, Some("o"))).collect();
        let groups = sample_groups(&frames, 5);
        assert_eq!(groups.len(), 1);
        let oracle: Vec<usize> = (0..5)
            .map(|j| (10.0 + j as f64 * 10.0 / 4.0).round_ties_even() as usize)
            .collect();
        assert_eq!(oracle, vec![10, 12, 15, 18, 20]);
        assert_eq!(groups[0].frame_indices, oracle);
    }

    #[test]
    fn exact_and_short_runs() {
        let five: Vec<_> = (3..8).map(|i| lf(i, Some("p"))).collect();
        assert_eq!(sample_groups(&five, 5)[0].frame_indices, vec![3, 4, 5, 6, 7]);
        let three: Vec<_> = (4..7).map(|i| lf(i, Some("p"))).collect();
        assert_eq!(sample_groups(&three, 5)[0].frame_indices, vec![4, 5, 6, 6, 6]);
    }

    #[test]
    fn gaps_and_symbol_changes_split_runs() {
        let frames = [
            lf(0, Some("m")),
            lf(1, Some("m")),
            lf(3, Some("m")),
            lf(4, Some("o")),
        ];
        let groups = sample_groups(&frames, 5);
        let firsts: Vec<_> = groups.iter().map(|g| (g.symbol.as_str(), g.frame_indices[0])).collect();
        assert_eq!(firsts, vec![("m", 0), ("m", 3), ("o", 4)]);
    }
}
