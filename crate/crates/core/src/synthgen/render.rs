//! Procedural mouth frames.
//!
//! A frame is a 112x112 patch of grainy skin with a lip ellipse and, when
//! the mouth is open, a dark inner ellipse. The outer lip ellipse ends
//! exactly at the mouth corners and the inner one spans exactly the lip
//! opening, so the geometry of a frame can be read back from its pixels.

use serde::{Deserialize, Serialize};

use crate::alignment::FrameRecord;
use crate::extractors::{crop_mouth, FrameImage, LandmarkSet, VisemeCrop, CROP_SIZE, LANDMARK_COUNT};
use crate::geometry::LipLandmarkIndexSet;

/// Horizontal extent of the lip opening relative to the mouth corners.
const INNER_WIDTH_RATIO: f64 = 0.8;
const SKIN: [f64; 3] = [200.0, 160.0, 140.0];
const LIP: [f64; 3] = [175.0, 70.0, 80.0];
const MOUTH: [f64; 3] = [45.0, 20.0, 25.0];
const GRAIN: f64 = 18.0;
/// Colour cast of the blending patch at full strength.
const BLEND_SHIFT: [f64; 3] = [60.0, 10.0, -40.0];

/// Per-video appearance parameters; everything a renderer needs besides the
/// landmarks of each frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    pub texture_seed: u64,
    /// Skin tone offset added to every channel.
    pub tone: f64,
    /// Strength of the generator blending patch around the mouth, 0 for
    /// genuine footage.
    pub blend_strength: f64,
}

/// Mouth placement in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MouthParams {
    pub cx: f64,
    pub cy: f64,
    /// Half the corner-to-corner width.
    pub half_width: f64,
    /// Half the lip opening.
    pub half_height: f64,
    pub lip_thickness: f64,
}

/// Lays the 468-point mesh out around a mouth: the 27 lip points on the lip
/// contours, the rest on a fixed ring.
pub fn mouth_landmarks(m: &MouthParams) -> Vec<[f32; 2]> {
    use std::f64::consts::PI;
    let idx = LipLandmarkIndexSet::default();
    let mut points: Vec<[f32; 2]> = (0..LANDMARK_COUNT)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / LANDMARK_COUNT as f64;
            [(0.5 + 0.46 * th.cos()) as f32, (0.5 + 0.46 * th.sin()) as f32]
        })
        .collect();
    let place = |points: &mut Vec<[f32; 2]>, i: usize, phi: f64, ax: f64, ay: f64| {
        let (s, c) = phi.sin_cos();
        // exact values at the four axis points keep the measured pairs exact
        let c = if (phi.abs() - PI / 2.0).abs() < 1e-12 { 0.0 } else { c };
        let s = if phi.abs() < 1e-12 || (phi.abs() - PI).abs() < 1e-12 { 0.0 } else { s };
        points[i] = [(m.cx + ax * c) as f32, (m.cy - ay * s) as f32];
    };
    let (a, b, t) = (m.half_width, m.half_height, m.lip_thickness);
    // outer: 8 points over the top from left corner to right corner, 5 below
    for (k, &i) in idx.outer.iter().enumerate() {
        let phi = if k <= 7 {
            PI - k as f64 * PI / 7.0
        } else {
            -((k - 7) as f64) * PI / 6.0
        };
        place(&mut points, i, phi, a, b + t);
    }
    // inner: 9 over the top (centre at k = 4), 5 below (centre at k = 11)
    for (k, &i) in idx.inner.iter().enumerate() {
        let phi = if k <= 8 {
            PI - k as f64 * PI / 8.0
        } else {
            -((k - 8) as f64) * PI / 6.0
        };
        place(&mut points, i, phi, INNER_WIDTH_RATIO * a, b);
    }
    points
}

/// Recovers mouth placement from a landmark set laid out by
/// [`mouth_landmarks`].
pub fn params_from_landmarks(lm: &LandmarkSet) -> MouthParams {
    let idx = LipLandmarkIndexSet::default();
    let p = |i: usize| [lm.points[i][0] as f64, lm.points[i][1] as f64];
    let (l, r) = (p(idx.width_pair.0), p(idx.width_pair.1));
    let (top, bottom) = (p(idx.height_pair.0), p(idx.height_pair.1));
    let outer_top = p(idx.outer[4]);
    let cy = (top[1] + bottom[1]) / 2.0;
    let half_height = (bottom[1] - top[1]).abs() / 2.0;
    // outer[4] sits at phi = 3pi/7 on the outer ellipse
    let outer_half = (cy - outer_top[1]) / (3.0 * std::f64::consts::PI / 7.0).sin();
    MouthParams {
        cx: (l[0] + r[0]) / 2.0,
        cy,
        half_width: (r[0] - l[0]).abs() / 2.0,
        half_height,
        lip_thickness: (outer_half - half_height).max(0.0),
    }
}

#[inline]
fn hash(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Uniform in `[-1, 1)`.
#[inline]
fn grain(seed: u64, frame: usize, x: usize, y: usize) -> f64 {
    let h = hash(seed ^ ((frame as u64) << 40) ^ ((y as u64) << 20) ^ x as u64);
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

#[inline]
fn inside(dx: f64, dy: f64, ax: f64, ay: f64) -> bool {
    ax > 0.0 && ay > 0.0 && (dx / ax).powi(2) + (dy / ay).powi(2) <= 1.0
}

/// Renders one frame at crop resolution.
pub fn render_frame(spec: &RenderSpec, m: &MouthParams, frame_index: usize) -> FrameImage {
    let size = CROP_SIZE;
    let mut rgb = vec![0u8; size * size * 3];
    let patch_x = m.half_width + 0.1;
    let patch_y = m.half_height + m.lip_thickness + 0.08;
    for y in 0..size {
        let fy = (y as f64 + 0.5) / size as f64;
        let dy = fy - m.cy;
        for x in 0..size {
            let fx = (x as f64 + 0.5) / size as f64;
            let dx = fx - m.cx;
            let in_patch = spec.blend_strength > 0.0 && dx.abs() < patch_x && dy.abs() < patch_y;
            let mut amp = GRAIN;
            let mut shift = [0.0; 3];
            if in_patch {
                amp *= 1.0 - spec.blend_strength;
                shift = [BLEND_SHIFT[0] * spec.blend_strength, BLEND_SHIFT[1] * spec.blend_strength, BLEND_SHIFT[2] * spec.blend_strength];
            }
            let base = if inside(dx, dy, INNER_WIDTH_RATIO * m.half_width, m.half_height) {
                amp *= 0.3;
                MOUTH
            } else if inside(dx, dy, m.half_width, m.half_height + m.lip_thickness) {
                amp *= 0.5;
                LIP
            } else {
                let shade = 12.0 * (fx - 0.5) - 8.0 * (fy - 0.5);
                [SKIN[0] + shade + spec.tone, SKIN[1] + shade + spec.tone, SKIN[2] + shade + spec.tone]
            };
            let g = amp * grain(spec.texture_seed, frame_index, x, y);
            let i = (y * size + x) * 3;
            for c in 0..3 {
                rgb[i + c] = (base[c] + shift[c] + g).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    FrameImage::new(frame_index, size, size, rgb)
}

/// Reads the mouth back from a rendered frame. `None` when no lip pixels are
/// present.
pub fn measure_mouth(frame: &FrameImage) -> Option<MouthParams> {
    let (w, h) = (frame.width, frame.height);
    let mut lip = (usize::MAX, usize::MAX, 0usize, 0usize);
    let mut dark: Option<(usize, usize)> = None;
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            let [r, g, b] = frame.pixel(x, y);
            let is_dark = r < 90 && g < 90 && b < 90;
            let is_lip = g < 110 && r > 120 && r as i32 - g as i32 > 70;
            if is_lip || is_dark {
                any = true;
                lip = (lip.0.min(x), lip.1.min(y), lip.2.max(x), lip.3.max(y));
            }
            if is_dark {
                dark = Some(match dark {
                    Some((lo, hi)) => (lo.min(y), hi.max(y)),
                    None => (y, y),
                });
            }
        }
    }
    if !any {
        return None;
    }
    let (wf, hf) = (w as f64, h as f64);
    let left = lip.0 as f64 / wf;
    let right = (lip.2 + 1) as f64 / wf;
    let top = lip.1 as f64 / hf;
    let bottom = (lip.3 + 1) as f64 / hf;
    let half_height = dark.map_or(0.0, |(lo, hi)| (hi + 1 - lo) as f64 / hf / 2.0);
    let outer_half = (bottom - top) / 2.0;
    Some(MouthParams {
        cx: (left + right) / 2.0,
        cy: (top + bottom) / 2.0,
        half_width: (right - left) / 2.0,
        half_height,
        lip_thickness: (outer_half - half_height).max(0.0),
    })
}

/// Renders the normalized crop of a cached synthetic frame.
pub fn render_crop(spec: &RenderSpec, frame: &FrameRecord) -> VisemeCrop {
    let lm = frame.landmarks.as_ref().filter(|l| l.detected);
    let image = match lm {
        Some(lm) => render_frame(spec, &params_from_landmarks(lm), frame.frame_index),
        None => FrameImage::new(frame.frame_index, CROP_SIZE, CROP_SIZE, vec![0; CROP_SIZE * CROP_SIZE * 3]),
    };
    crop_mouth(&image, &LandmarkSet::undetected(), &[]).expect("rendered frames are well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compute_geometry, MAR_EPSILON};

    fn params() -> MouthParams {
        MouthParams {
            cx: 0.5,
            cy: 0.55,
            half_width: 0.19,
            half_height: 0.06,
            lip_thickness: 0.035,
        }
    }

    #[test]
    fn landmarks_encode_geometry() {
        let m = params();
        let lm = LandmarkSet::detected(mouth_landmarks(&m)).unwrap();
        let g = compute_geometry(&lm, &LipLandmarkIndexSet::default(), MAR_EPSILON).unwrap();
        assert!((g.lip_height - 0.12).abs() < 1e-6);
        assert!((g.lip_width - 0.38).abs() < 1e-6);
        let back = params_from_landmarks(&lm);
        assert!((back.lip_thickness - m.lip_thickness).abs() < 1e-6);
        assert!((back.cx - m.cx).abs() < 1e-6 && (back.cy - m.cy).abs() < 1e-6);
    }

    #[test]
    fn measurement_is_within_a_pixel() {
        let spec = RenderSpec {
            texture_seed: 9,
            tone: 0.0,
            blend_strength: 0.7,
        };
        for half_height in [0.0, 0.004, 0.03, 0.1] {
            let m = MouthParams { half_height, ..params() };
            let frame = render_frame(&spec, &m, 3);
            let got = measure_mouth(&frame).unwrap();
            let px = 1.0 / CROP_SIZE as f64;
            assert!((got.half_width - m.half_width).abs() * 2.0 <= 1.0 * px + 1e-12, "{got:?}");
            assert!((got.half_height - m.half_height).abs() * 2.0 <= 1.0 * px + 1e-12, "{got:?}");
            assert!((got.cx - m.cx).abs() <= px);
        }
    }

    #[test]
    fn blank_frame_has_no_mouth() {
        let frame = FrameImage::new(0, 16, 16, vec![200; 16 * 16 * 3]);
        assert!(measure_mouth(&frame).is_none());
    }
}
