use super::{FrameImage, LandmarkSet, VisemeCrop, CROP_CHANNELS, CROP_LEN, CROP_SIZE};
use crate::error::{PiaError, Result};

/// Per-channel normalization applied to crop intensities in `[0, 1]`.
pub const CROP_MEAN: f32 = 0.5;
pub const CROP_STD: f32 = 0.5;

/// Margin added around the lip bounding box, as a fraction of its larger side.
const CROP_MARGIN: f32 = 0.35;

/// Cuts a square mouth crop around the given lip landmarks and resizes it to
/// 112x112 with bilinear sampling.
///
/// When `lip_indices` is empty the whole frame is used.
pub fn crop_mouth(frame: &FrameImage, landmarks: &LandmarkSet, lip_indices: &[usize]) -> Result<VisemeCrop> {
    frame.validate()?;
    let (w, h) = (frame.width as f32, frame.height as f32);
    let (x0, y0, x1, y1) = if lip_indices.is_empty() {
        (0.0, 0.0, w, h)
    } else {
        if !landmarks.detected {
            return Err(PiaError::NoFace(frame.frame_index));
        }
        let mut bb = (f32::MAX, f32::MAX, f32::MIN, f32::MIN);
        for &i in lip_indices {
            let p = landmarks.points.get(i).ok_or_else(|| {
                PiaError::InvalidInput(format!("lip landmark index {i} out of range"))
            })?;
            bb = (bb.0.min(p[0] * w), bb.1.min(p[1] * h), bb.2.max(p[0] * w), bb.3.max(p[1] * h));
        }
        let side = (bb.2 - bb.0).max(bb.3 - bb.1).max(1.0) * (1.0 + 2.0 * CROP_MARGIN);
        let (cx, cy) = ((bb.0 + bb.2) / 2.0, (bb.1 + bb.3) / 2.0);
        (cx - side / 2.0, cy - side / 2.0, cx + side / 2.0, cy + side / 2.0)
    };

    let mut pixels = vec![0.0f32; CROP_LEN];
    let plane = CROP_SIZE * CROP_SIZE;
    let sx = (x1 - x0) / CROP_SIZE as f32;
    let sy = (y1 - y0) / CROP_SIZE as f32;
    for oy in 0..CROP_SIZE {
        let fy = y0 + (oy as f32 + 0.5) * sy - 0.5;
        for ox in 0..CROP_SIZE {
            let fx = x0 + (ox as f32 + 0.5) * sx - 0.5;
            let rgb = bilinear(frame, fx, fy);
            for c in 0..CROP_CHANNELS {
                pixels[c * plane + oy * CROP_SIZE + ox] = (rgb[c] / 255.0 - CROP_MEAN) / CROP_STD;
            }
        }
    }
    VisemeCrop::new(frame.frame_index, pixels)
}

fn bilinear(frame: &FrameImage, x: f32, y: f32) -> [f32; 3] {
    let max_x = (frame.width - 1) as f32;
    let max_y = (frame.height - 1) as f32;
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let (xa, ya) = (x.floor() as usize, y.floor() as usize);
    let (xb, yb) = ((xa + 1).min(frame.width - 1), (ya + 1).min(frame.height - 1));
    let (tx, ty) = (x - xa as f32, y - ya as f32);
    let mut out = [0.0; 3];
    let (p00, p10, p01, p11) = (
        frame.pixel(xa, ya),
        frame.pixel(xb, ya),
        frame.pixel(xa, yb),
        frame.pixel(xb, yb),
    );
    for c in 0..3 {
        let top = p00[c] as f32 * (1.0 - tx) + p10[c] as f32 * tx;
        let bottom = p01[c] as f32 * (1.0 - tx) + p11[c] as f32 * tx;
        out[c] = top * (1.0 - ty) + bottom * ty;
    }
    out
}
