//! Lip geometry descriptors from face-mesh landmarks.

use serde::{Deserialize, Serialize};

use crate::alignment::FrameRecord;
use crate::error::{PiaError, Result};
use crate::extractors::{LandmarkSet, LANDMARK_COUNT};

/// Guard added to the lip width before dividing.
pub const MAR_EPSILON: f64 = 1e-6;
/// Aspect ratio at which the closure score reaches zero.
pub const CLOSURE_TAU: f64 = 0.5;

/// Lip opening measurements for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LipGeometry {
    pub lip_height: f64,
    pub lip_width: f64,
    /// Mouth aspect ratio, `height / (width + eps)`.
    pub aspect_ratio: f64,
    /// `clamp(1 - MAR / tau, 0, 1)`; 1 for closed lips.
    pub closure_score: f64,
}

impl LipGeometry {
    pub fn from_measurements(lip_height: f64, lip_width: f64, eps: f64) -> Self {
        let aspect_ratio = lip_height / (lip_width + eps);
        Self {
            lip_height,
            lip_width,
            aspect_ratio,
            closure_score: closure_score(aspect_ratio),
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.lip_height, self.lip_width, self.aspect_ratio, self.closure_score]
    }
}

pub fn closure_score(aspect_ratio: f64) -> f64 {
    (1.0 - aspect_ratio / CLOSURE_TAU).clamp(0.0, 1.0)
}

/// The 27 lip points used out of the 468-point mesh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LipLandmarkIndexSet {
    pub outer: Vec<usize>,
    pub inner: Vec<usize>,
    /// Upper and lower central points of the inner contour.
    pub height_pair: (usize, usize),
    /// Left and right mouth corners on the outer contour.
    pub width_pair: (usize, usize),
}

impl Default for LipLandmarkIndexSet {
    /// Face-mesh lip contour indices: 13 outer points, 14 inner points.
    fn default() -> Self {
        Self {
            outer: vec![61, 185, 40, 37, 0, 267, 270, 291, 321, 314, 17, 84, 91],
            inner: vec![78, 191, 81, 82, 13, 312, 311, 415, 308, 324, 402, 14, 178, 95],
            height_pair: (13, 14),
            width_pair: (61, 291),
        }
    }
}

impl LipLandmarkIndexSet {
    pub fn all(&self) -> Vec<usize> {
        self.outer.iter().chain(&self.inner).copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.all();
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if all.len() != 27 || sorted.len() != 27 {
            return Err(PiaError::InvalidConfig(format!(
                "lip index set needs 27 distinct indices, has {} ({} distinct)",
                all.len(),
                sorted.len()
            )));
        }
        if let Some(&i) = all.iter().find(|&&i| i >= LANDMARK_COUNT) {
            return Err(PiaError::InvalidConfig(format!("lip index {i} out of range")));
        }
        for i in [self.height_pair.0, self.height_pair.1, self.width_pair.0, self.width_pair.1] {
            if !all.contains(&i) {
                return Err(PiaError::InvalidConfig(format!(
                    "measurement index {i} is not one of the lip landmarks"
                )));
            }
        }
        Ok(())
    }
}

fn distance(a: [f32; 2], b: [f32; 2]) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    dx.hypot(dy)
}

/// Lip height, width, aspect ratio and closure score for a detected face.
pub fn compute_geometry(landmarks: &LandmarkSet, indices: &LipLandmarkIndexSet, eps: f64) -> Result<LipGeometry> {
    if !landmarks.detected {
        return Err(PiaError::NoFace(0));
    }
    let point = |i: usize| {
        landmarks
            .points
            .get(i)
            .copied()
            .ok_or_else(|| PiaError::InvalidInput(format!("landmark {i} missing")))
    };
    let height = distance(point(indices.height_pair.0)?, point(indices.height_pair.1)?);
    let width = distance(point(indices.width_pair.0)?, point(indices.width_pair.1)?);
    Ok(LipGeometry::from_measurements(height, width, eps))
}

/// Per-frame geometry vector `(height, width, MAR, closure)` with a validity
/// bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryFrame {
    pub values: [f64; 4],
    pub valid: bool,
}

/// Geometry for every frame; frames without a detected face yield zeros.
pub fn geometry_series(frames: &[FrameRecord], indices: &LipLandmarkIndexSet) -> Vec<GeometryFrame> {
    frames
        .iter()
        .map(|f| match f.landmarks.as_ref().filter(|l| l.detected) {
            Some(lm) => match compute_geometry(lm, indices, MAR_EPSILON) {
                Ok(g) => GeometryFrame {
                    values: g.to_array(),
                    valid: true,
                },
                Err(_) => GeometryFrame {
                    values: [0.0; 4],
                    valid: false,
                },
            },
            None => GeometryFrame {
                values: [0.0; 4],
                valid: false,
            },
        })
        .collect()
}
