use std::f64::consts::PI;
use std::path::Path;

use crate::error::{PiaError, Result};

pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

/// Zero crossings of the sinc kernel on each side of the interpolation point.
const SINC_ZERO_CROSSINGS: f64 = 16.0;

/// Interleaved PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub channels: u16,
}

impl AudioTrack {
    pub fn mono(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
            channels: 1,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.samples.len() / self.channels.max(1) as usize
    }

    pub fn duration(&self) -> f64 {
        self.frame_count() as f64 / self.sample_rate as f64
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|&s| s == 0.0)
    }
}

/// Mixes down to mono and resamples to 16 kHz.
///
/// Channels are averaged; the rate conversion uses a Hann-windowed sinc
/// interpolator whose cutoff follows the lower of the two Nyquist rates.
pub fn canonicalize_audio(raw: &AudioTrack) -> Result<AudioTrack> {
    if raw.channels == 0 || raw.sample_rate == 0 {
        return Err(PiaError::InvalidInput(format!(
            "audio with {} channels at {} Hz",
            raw.channels, raw.sample_rate
        )));
    }
    let channels = raw.channels as usize;
    if raw.samples.is_empty() || raw.samples.len() % channels != 0 {
        return Err(PiaError::InvalidInput(format!(
            "audio has {} samples for {channels} channels",
            raw.samples.len()
        )));
    }

    let mono: Vec<f32> = if channels == 1 {
        raw.samples.clone()
    } else {
        raw.samples
            .chunks_exact(channels)
            .map(|frame| (frame.iter().map(|&s| s as f64).sum::<f64>() / channels as f64) as f32)
            .collect()
    };

    if raw.sample_rate == CANONICAL_SAMPLE_RATE {
        return Ok(AudioTrack::mono(mono, CANONICAL_SAMPLE_RATE));
    }
    Ok(AudioTrack::mono(
        resample(&mono, raw.sample_rate, CANONICAL_SAMPLE_RATE),
        CANONICAL_SAMPLE_RATE,
    ))
}

fn resample(input: &[f32], from: u32, to: u32) -> Vec<f32> {
    let ratio = to as f64 / from as f64;
    let out_len = ((input.len() as f64 * ratio).round() as usize).max(1);
    let cutoff = ratio.min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let step = from as f64 / to as f64;

    (0..out_len)
        .map(|j| {
            let t = j as f64 * step;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(input.len() - 1);
            let mut acc = 0.0;
            for (k, &x) in input.iter().enumerate().take(hi + 1).skip(lo) {
                let u = t - k as f64;
                let window = 0.5 * (1.0 + (PI * u / half_width).cos());
                acc += x as f64 * cutoff * sinc(cutoff * u) * window;
            }
            acc as f32
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Reads a WAV file into floating-point samples in `[-1, 1]`.
pub fn read_wav(path: &Path) -> Result<AudioTrack> {
    let mut reader =
        hound::WavReader::open(path).map_err(|e| PiaError::Decode(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let samples: std::result::Result<Vec<f32>, _> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect(),
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect()
        }
    };
    let samples = samples.map_err(|e| PiaError::Decode(format!("{}: {e}", path.display())))?;
    Ok(AudioTrack {
        samples,
        sample_rate: spec.sample_rate,
        channels: spec.channels,
    })
}

/// Writes 16-bit PCM.
pub fn write_wav(path: &Path, audio: &AudioTrack) -> Result<()> {
    let spec = hound::WavSpec {
        channels: audio.channels,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io_err = |e: hound::Error| PiaError::Io(std::io::Error::other(e.to_string()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(io_err)?;
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        writer.write_sample(v).map_err(io_err)?;
    }
    writer.finalize().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_input_is_returned_unchanged() {
        let raw = AudioTrack::mono(vec![0.1, -0.2, 0.3, 0.0], 16_000);
        assert_eq!(canonicalize_audio(&raw).unwrap(), raw);
    }

    #[test]
    fn downsampling_halves_length() {
        for n in [1usize, 7, 320, 32_001] {
            let samples = (0..n).map(|i| (i as f32 * 0.01).sin()).collect();
            let out = canonicalize_audio(&AudioTrack::mono(samples, 32_000)).unwrap();
            assert_eq!(out.sample_rate, 16_000);
            assert!((out.samples.len() as i64 - (n / 2) as i64).abs() <= 1, "n={n}");
        }
    }

    #[test]
    fn duration_preserved_within_one_period() {
        let samples = vec![0.25; 44_100 + 17];
        let raw = AudioTrack::mono(samples, 44_100);
        let out = canonicalize_audio(&raw).unwrap();
        assert!((out.duration() - raw.duration()).abs() <= 1.0 / 16_000.0);
    }

    #[test]
    fn stereo_is_channel_averaged() {
        let left = [0.5f32, -0.25, 0.75, 0.1];
        let right = [0.1f32, 0.35, -0.75, 0.3];
        let interleaved: Vec<f32> = left.iter().zip(&right).flat_map(|(&l, &r)| [l, r]).collect();
        let raw = AudioTrack {
            samples: interleaved,
            sample_rate: 16_000,
            channels: 2,
        };
        let out = canonicalize_audio(&raw).unwrap();
        assert_eq!(out.channels, 1);
        for i in 0..left.len() {
            let oracle = ((left[i] as f64 + right[i] as f64) / 2.0) as f32;
            assert_eq!(out.samples[i], oracle);
        }
    }

    #[test]
    fn low_frequency_tone_survives_resampling() {
        let tone = |rate: f64, n: usize| -> Vec<f32> {
            (0..n)
                .map(|i| (2.0 * PI * 440.0 * i as f64 / rate).sin() as f32)
                .collect()
        };
        let out = canonicalize_audio(&AudioTrack::mono(tone(48_000.0, 48_000), 48_000)).unwrap();
        let expected = tone(16_000.0, 16_000);
        // interior only; the kernel is truncated at the edges
        for i in 200..15_800 {
            assert!((out.samples[i] - expected[i]).abs() < 2e-3, "sample {i}");
        }
    }

    #[test]
    fn empty_audio_is_rejected() {
        let err = canonicalize_audio(&AudioTrack::mono(vec![], 16_000)).unwrap_err();
        assert_eq!(err.kind(), "InvalidInput");
    }
}
