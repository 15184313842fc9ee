use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Deserialize;

use super::g2p::word_to_phonemes;
use super::{
    audio, AudioTrack, FrameImage, IdentityEmbedding, LandmarkSet, WordSegment, EMBEDDING_DIM,
    LANDMARK_COUNT,
};
use crate::alignment::PhonemeInterval;
use crate::error::{PiaError, Result};
use crate::synthgen::render;

/// Speech-to-text with word timestamps.
pub trait Transcriber {
    fn name(&self) -> &str;
    fn transcribe(&self, audio: &AudioTrack) -> Result<Vec<WordSegment>>;
}

/// Words to timed IPA phonemes.
pub trait Phonemizer {
    fn name(&self) -> &str;
    fn phonemize(&self, segments: &[WordSegment]) -> Result<Vec<PhonemeInterval>>;
}

/// Face-mesh landmarks for one frame.
pub trait LandmarkDetector {
    fn name(&self) -> &str;
    fn detect(&self, frame: &FrameImage) -> Result<LandmarkSet>;
}

/// Identity embedding for one frame.
pub trait IdentityEmbedder {
    fn name(&self) -> &str;
    fn embed(&self, frame: &FrameImage) -> Result<IdentityEmbedding>;
}

/// Runs a transcriber on canonical audio and checks its output.
///
/// Silent audio short-circuits to an empty transcript without calling the
/// adapter.
pub fn transcribe(adapter: &dyn Transcriber, audio: &AudioTrack) -> Result<Vec<WordSegment>> {
    if audio.sample_rate != audio::CANONICAL_SAMPLE_RATE || audio.channels != 1 {
        return Err(PiaError::InvalidInput(format!(
            "transcription expects 16 kHz mono, got {} Hz x{}",
            audio.sample_rate, audio.channels
        )));
    }
    if audio.is_silent() {
        return Ok(Vec::new());
    }
    let segments = adapter.transcribe(audio)?;
    let duration = audio.duration();
    validate_segments(&segments)?;
    if let Some(s) = segments.iter().find(|s| s.start < 0.0 || s.end > duration + 1e-9) {
        return Err(PiaError::Adapter(format!(
            "{}: segment {:?} [{}, {}] outside audio duration {duration}",
            adapter.name(),
            s.text,
            s.start,
            s.end
        )));
    }
    Ok(segments)
}

/// Runs a phonemizer and checks that every interval sits inside a word.
pub fn phonemize(adapter: &dyn Phonemizer, segments: &[WordSegment]) -> Result<Vec<PhonemeInterval>> {
    validate_segments(segments)?;
    let intervals = adapter.phonemize(segments)?;
    check_containment(segments, &intervals)?;
    Ok(intervals)
}

/// Runs a landmark detector. Blank frames are reported as "no face" without
/// consulting the adapter.
pub fn detect_landmarks(adapter: &dyn LandmarkDetector, frame: &FrameImage) -> Result<LandmarkSet> {
    frame.validate()?;
    if frame.is_blank() {
        return Ok(LandmarkSet::undetected());
    }
    let set = adapter.detect(frame)?;
    set.validate()?;
    Ok(set)
}

pub fn embed_identity(adapter: &dyn IdentityEmbedder, frame: &FrameImage) -> Result<IdentityEmbedding> {
    frame.validate()?;
    if frame.is_blank() {
        return Err(PiaError::NoFace(frame.frame_index));
    }
    let emb = adapter.embed(frame)?;
    IdentityEmbedding::new(emb.vector, emb.frame_index)
}

fn validate_segments(segments: &[WordSegment]) -> Result<()> {
    for s in segments {
        if !(s.start >= 0.0 && s.start < s.end) {
            return Err(PiaError::InvalidInput(format!(
                "word {:?} has invalid span [{}, {}]",
                s.text, s.start, s.end
            )));
        }
    }
    for pair in segments.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(PiaError::InvalidInput(format!(
                "words {:?} and {:?} overlap or are out of order",
                pair[0].text, pair[1].text
            )));
        }
    }
    Ok(())
}

/// Checks that intervals are ordered, pairwise disjoint and each contained in
/// one of the word segments.
pub fn check_containment(segments: &[WordSegment], intervals: &[PhonemeInterval]) -> Result<()> {
    for iv in intervals {
        iv.validate()?;
        if !segments.iter().any(|s| s.start <= iv.start && iv.end <= s.end) {
            return Err(PiaError::InvalidInput(format!(
                "phoneme {:?} [{}, {}] is not contained in any word",
                iv.symbol, iv.start, iv.end
            )));
        }
    }
    for pair in intervals.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(PiaError::InvalidInput(format!(
                "phonemes {:?} and {:?} overlap or are out of order",
                pair[0].symbol, pair[1].symbol
            )));
        }
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| PiaError::Adapter(format!("fixture {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------- fixtures

#[derive(Deserialize)]
struct SegmentsFile {
    segments: Vec<WordSegment>,
}

/// Replays a recorded transcript: `{"segments": [{"text", "start", "end"}]}`.
#[derive(Debug, Clone)]
pub struct FixtureTranscriber {
    segments: Vec<WordSegment>,
}

impl FixtureTranscriber {
    pub fn from_file(path: &Path) -> Result<Self> {
        let file: SegmentsFile = read_json(path)?;
        Ok(Self {
            segments: file.segments,
        })
    }

    pub fn new(segments: Vec<WordSegment>) -> Self {
        Self { segments }
    }
}

impl Transcriber for FixtureTranscriber {
    fn name(&self) -> &str {
        "fixture"
    }

    fn transcribe(&self, _audio: &AudioTrack) -> Result<Vec<WordSegment>> {
        Ok(self.segments.clone())
    }
}

#[derive(Deserialize)]
struct IntervalsFile {
    intervals: Vec<PhonemeInterval>,
}

/// Replays recorded phoneme intervals: `{"intervals": [{"symbol", "start", "end"}]}`.
#[derive(Debug, Clone)]
pub struct FixturePhonemizer {
    intervals: Vec<PhonemeInterval>,
}

impl FixturePhonemizer {
    pub fn from_file(path: &Path) -> Result<Self> {
        let file: IntervalsFile = read_json(path)?;
        Ok(Self {
            intervals: file.intervals,
        })
    }
}

impl Phonemizer for FixturePhonemizer {
    fn name(&self) -> &str {
        "fixture"
    }

    fn phonemize(&self, _segments: &[WordSegment]) -> Result<Vec<PhonemeInterval>> {
        Ok(self.intervals.clone())
    }
}

/// Grapheme-to-phoneme conversion with each word's duration split evenly
/// over its phonemes. Used when no forced aligner is available.
#[derive(Debug, Clone, Default)]
pub struct ReferencePhonemizer;

impl Phonemizer for ReferencePhonemizer {
    fn name(&self) -> &str {
        "reference"
    }

    fn phonemize(&self, segments: &[WordSegment]) -> Result<Vec<PhonemeInterval>> {
        let mut out = Vec::new();
        for seg in segments {
            if seg.end <= seg.start {
                return Err(PiaError::InvalidInput(format!(
                    "word {:?} ends at {} before it starts at {}",
                    seg.text, seg.end, seg.start
                )));
            }
            let phones = word_to_phonemes(&seg.text);
            let n = phones.len();
            let span = seg.end - seg.start;
            for (j, symbol) in phones.into_iter().enumerate() {
                let start = seg.start + span * j as f64 / n as f64;
                let end = if j + 1 == n {
                    seg.end
                } else {
                    seg.start + span * (j + 1) as f64 / n as f64
                };
                out.push(PhonemeInterval { symbol, start, end });
            }
        }
        Ok(out)
    }
}

#[derive(Deserialize)]
struct LandmarkFrame {
    frame_index: usize,
    detected: bool,
    #[serde(default)]
    points: Vec<[f32; 2]>,
}

#[derive(Deserialize)]
struct LandmarksFile {
    frames: Vec<LandmarkFrame>,
}

/// Replays recorded landmarks keyed by frame index.
#[derive(Debug, Clone)]
pub struct FixtureLandmarkDetector {
    frames: BTreeMap<usize, LandmarkSet>,
}

impl FixtureLandmarkDetector {
    pub fn from_file(path: &Path) -> Result<Self> {
        let file: LandmarksFile = read_json(path)?;
        let mut frames = BTreeMap::new();
        for f in file.frames {
            let set = if f.detected {
                LandmarkSet::detected(f.points)?
            } else {
                LandmarkSet::undetected()
            };
            frames.insert(f.frame_index, set);
        }
        Ok(Self { frames })
    }
}

impl LandmarkDetector for FixtureLandmarkDetector {
    fn name(&self) -> &str {
        "fixture"
    }

    fn detect(&self, frame: &FrameImage) -> Result<LandmarkSet> {
        self.frames.get(&frame.frame_index).cloned().ok_or_else(|| {
            PiaError::Adapter(format!("no fixture landmarks for frame {}", frame.frame_index))
        })
    }
}

/// Replays identity embeddings from a raw little-endian float32 file holding
/// `frame_count x 512` values.
#[derive(Debug, Clone)]
pub struct FixtureEmbedder {
    vectors: Vec<Vec<f32>>,
}

impl FixtureEmbedder {
    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| PiaError::Adapter(format!("fixture {}: {e}", path.display())))?;
        if bytes.len() % (EMBEDDING_DIM * 4) != 0 {
            return Err(PiaError::Adapter(format!(
                "{}: {} bytes is not a whole number of 512-d float32 vectors",
                path.display(),
                bytes.len()
            )));
        }
        let vectors = bytes
            .chunks_exact(EMBEDDING_DIM * 4)
            .map(|chunk| {
                chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect()
            })
            .collect();
        Ok(Self { vectors })
    }

    pub fn write_file(path: &Path, vectors: &[Vec<f32>]) -> Result<()> {
        let bytes: Vec<u8> = vectors.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes)?;
        Ok(())
    }
}

impl IdentityEmbedder for FixtureEmbedder {
    fn name(&self) -> &str {
        "fixture"
    }

    fn embed(&self, frame: &FrameImage) -> Result<IdentityEmbedding> {
        let v = self.vectors.get(frame.frame_index).ok_or_else(|| {
            PiaError::Adapter(format!("no fixture embedding for frame {}", frame.frame_index))
        })?;
        IdentityEmbedding::new(v.clone(), frame.frame_index)
    }
}

// --------------------------------------------------------------- synthetic

/// Measures the rendered mouth of a synthetic frame directly from pixels and
/// lays out the full landmark mesh around it.
#[derive(Debug, Clone, Default)]
pub struct SyntheticLandmarkDetector;

impl LandmarkDetector for SyntheticLandmarkDetector {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn detect(&self, frame: &FrameImage) -> Result<LandmarkSet> {
        match render::measure_mouth(frame) {
            Some(mouth) => LandmarkSet::detected(render::mouth_landmarks(&mouth)),
            None => Ok(LandmarkSet::undetected()),
        }
    }
}

/// Returns the identity vectors planted by the generator, keyed by frame.
#[derive(Debug, Clone)]
pub struct SyntheticEmbedder {
    vectors: BTreeMap<usize, Vec<f32>>,
}

impl SyntheticEmbedder {
    pub fn new(embeddings: &[IdentityEmbedding]) -> Self {
        Self {
            vectors: embeddings
                .iter()
                .map(|e| (e.frame_index, e.vector.clone()))
                .collect(),
        }
    }
}

impl IdentityEmbedder for SyntheticEmbedder {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn embed(&self, frame: &FrameImage) -> Result<IdentityEmbedding> {
        let v = self
            .vectors
            .get(&frame.frame_index)
            .ok_or(PiaError::NoFace(frame.frame_index))?;
        IdentityEmbedding::new(v.clone(), frame.frame_index)
    }
}

// -------------------------------------------------------------------- live

/// Invokes an external program that wraps a real model.
///
/// The program receives the input file path as its last argument and must
/// print JSON on stdout.
#[derive(Debug, Clone)]
struct ExternalProgram {
    program: PathBuf,
    args: Vec<String>,
    work_dir: PathBuf,
}

impl ExternalProgram {
    fn run(&self, input: &Path) -> Result<String> {
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(input)
            .output()
            .map_err(|e| PiaError::Adapter(format!("{}: {e}", self.program.display())))?;
        if !output.status.success() {
            return Err(PiaError::Adapter(format!(
                "{} exited with {}: {}",
                self.program.display(),
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        String::from_utf8(output.stdout)
            .map_err(|e| PiaError::Adapter(format!("{}: non-UTF-8 output: {e}", self.program.display())))
    }

    fn write_frame(&self, frame: &FrameImage) -> Result<PathBuf> {
        let path = self.work_dir.join(format!("frame_{:06}.png", frame.frame_index));
        let img = image::RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.rgb.clone())
            .ok_or_else(|| PiaError::Decode(format!("frame {}", frame.frame_index)))?;
        img.save(&path)
            .map_err(|e| PiaError::Adapter(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Live transcriber. Expects `{"segments": [...]}` on stdout.
#[derive(Debug, Clone)]
pub struct CommandTranscriber(ExternalProgram);

impl CommandTranscriber {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>, work_dir: impl Into<PathBuf>) -> Self {
        Self(ExternalProgram {
            program: program.into(),
            args,
            work_dir: work_dir.into(),
        })
    }
}

impl Transcriber for CommandTranscriber {
    fn name(&self) -> &str {
        "live"
    }

    fn transcribe(&self, audio: &AudioTrack) -> Result<Vec<WordSegment>> {
        let path = self.0.work_dir.join("audio_16k.wav");
        audio::write_wav(&path, audio)?;
        let file: SegmentsFile = serde_json::from_str(&self.0.run(&path)?)
            .map_err(|e| PiaError::Adapter(format!("transcript JSON: {e}")))?;
        Ok(file.segments)
    }
}

/// Live landmark detector. Expects `{"detected": bool, "points": [[x, y], ...]}`.
#[derive(Debug, Clone)]
pub struct CommandLandmarkDetector(ExternalProgram);

impl CommandLandmarkDetector {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>, work_dir: impl Into<PathBuf>) -> Self {
        Self(ExternalProgram {
            program: program.into(),
            args,
            work_dir: work_dir.into(),
        })
    }
}

impl LandmarkDetector for CommandLandmarkDetector {
    fn name(&self) -> &str {
        "live"
    }

    fn detect(&self, frame: &FrameImage) -> Result<LandmarkSet> {
        let path = self.0.write_frame(frame)?;
        let parsed: LandmarkFrame = {
            #[derive(Deserialize)]
            struct Out {
                detected: bool,
                #[serde(default)]
                points: Vec<[f32; 2]>,
            }
            let out: Out = serde_json::from_str(&self.0.run(&path)?)
                .map_err(|e| PiaError::Adapter(format!("landmark JSON: {e}")))?;
            LandmarkFrame {
                frame_index: frame.frame_index,
                detected: out.detected,
                points: out.points,
            }
        };
        if !parsed.detected {
            return Ok(LandmarkSet::undetected());
        }
        if parsed.points.len() != LANDMARK_COUNT {
            return Err(PiaError::Adapter(format!(
                "landmark program returned {} points",
                parsed.points.len()
            )));
        }
        LandmarkSet::detected(parsed.points)
    }
}

/// Live identity embedder, run on the full frame (the wrapped program is
/// responsible for its own face alignment). Expects `{"embedding": [...]}`,
/// or `{"embedding": null}` when no face is found.
#[derive(Debug, Clone)]
pub struct CommandEmbedder(ExternalProgram);

impl CommandEmbedder {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>, work_dir: impl Into<PathBuf>) -> Self {
        Self(ExternalProgram {
            program: program.into(),
            args,
            work_dir: work_dir.into(),
        })
    }
}

impl IdentityEmbedder for CommandEmbedder {
    fn name(&self) -> &str {
        "live"
    }

    fn embed(&self, frame: &FrameImage) -> Result<IdentityEmbedding> {
        #[derive(Deserialize)]
        struct Out {
            embedding: Option<Vec<f32>>,
        }
        let path = self.0.write_frame(frame)?;
        let out: Out = serde_json::from_str(&self.0.run(&path)?)
            .map_err(|e| PiaError::Adapter(format!("embedding JSON: {e}")))?;
        let v = out.embedding.ok_or(PiaError::NoFace(frame.frame_index))?;
        IdentityEmbedding::new(v, frame.frame_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(text: &str, start: f64, end: f64) -> WordSegment {
        WordSegment {
            text: text.into(),
            start,
            end,
        }
    }

    #[test]
    fn reference_split_is_uniform() {
        let out = phonemize(&ReferencePhonemizer, &[seg("map", 0.0, 0.3)]).unwrap();
        let symbols: Vec<_> = out.iter().map(|p| p.symbol.as_str()).collect();
        assert_eq!(symbols, ["m", "æ", "p"]);
        let bounds = [(0.0, 0.1), (0.1, 0.2), (0.2, 0.3)];
        for (iv, (s, e)) in out.iter().zip(bounds) {
            assert!((iv.start - s).abs() < 1e-12 && (iv.end - e).abs() < 1e-12);
        }
        assert_eq!(out[0].start, 0.0);
        assert_eq!(out[2].end, 0.3);
    }

    #[test]
    fn empty_transcript_phonemizes_to_nothing() {
        assert!(phonemize(&ReferencePhonemizer, &[]).unwrap().is_empty());
    }

    #[test]
    fn inverted_segment_is_rejected() {
        let err = ReferencePhonemizer.phonemize(&[seg("map", 0.3, 0.3)]).unwrap_err();
        assert_eq!(err.kind(), "InvalidInput");
        let err = phonemize(&ReferencePhonemizer, &[seg("map", 0.4, 0.3)]).unwrap_err();
        assert_eq!(err.kind(), "InvalidInput");
    }

    #[test]
    fn silent_audio_transcribes_to_nothing() {
        let t = FixtureTranscriber::new(vec![seg("hi", 0.0, 0.5)]);
        let audio = AudioTrack::mono(vec![0.0; 16_000], 16_000);
        assert!(transcribe(&t, &audio).unwrap().is_empty());
    }

    #[test]
    fn transcript_outside_audio_is_an_adapter_error() {
        let t = FixtureTranscriber::new(vec![seg("hi", 0.0, 2.5)]);
        let audio = AudioTrack::mono(vec![0.1; 16_000], 16_000);
        assert_eq!(transcribe(&t, &audio).unwrap_err().kind(), "AdapterError");
    }

    #[test]
    fn black_frame_has_no_face() {
        let frame = FrameImage::new(0, 8, 8, vec![0; 8 * 8 * 3]);
        let set = detect_landmarks(&SyntheticLandmarkDetector, &frame).unwrap();
        assert!(!set.detected);
        assert_eq!(set.points.len(), LANDMARK_COUNT);
        let emb = SyntheticEmbedder::new(&[]);
        assert_eq!(embed_identity(&emb, &frame).unwrap_err().kind(), "NoFaceError");
    }

    #[test]
    fn missing_program_is_an_adapter_error() {
        let dir = tempfile::tempdir().unwrap();
        let t = CommandTranscriber::new("/nonexistent/whisper-wrapper", vec![], dir.path());
        let audio = AudioTrack::mono(vec![0.1; 1600], 16_000);
        assert_eq!(transcribe(&t, &audio).unwrap_err().kind(), "AdapterError");
    }

    #[test]
    fn containment_checker_rejects_escaping_interval() {
        let words = [seg("map", 0.0, 0.3)];
        let ok = [PhonemeInterval::new("m", 0.0, 0.1).unwrap()];
        check_containment(&words, &ok).unwrap();
        let bad = [PhonemeInterval::new("m", 0.25, 0.35).unwrap()];
        assert!(check_containment(&words, &bad).is_err());
    }
}
