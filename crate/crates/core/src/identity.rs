//! Frame-to-frame identity drift.
//!
//! Consecutive identity embeddings of a genuine speaker move slowly; face
//! swaps show up as isolated large jumps. [`drift_series`] measures each
//! consecutive pair, [`drift_stats`] summarises the pairs that are valid under
//! the frame mask.

use serde::{Deserialize, Serialize};

use crate::error::{PiaError, Result};

/// Default spike threshold on consecutive L2 distance, for embeddings on the
/// un-normalized scale where genuine drift sits around 2 to 6.
pub const DEFAULT_SPIKE_THRESHOLD: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSeries {
    /// `|a_t - a_{t+1}|`.
    pub l2: Vec<f64>,
    /// Cosine similarity of each pair; 0 where either vector has zero norm.
    pub cosine: Vec<f64>,
    /// `m_t * m_{t+1}`, cleared for zero-norm pairs.
    pub mask: Vec<bool>,
    /// Pairs dropped because one of the vectors had zero norm.
    pub zero_norm_pairs: Vec<usize>,
}

impl DriftSeries {
    pub fn len(&self) -> usize {
        self.l2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l2.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftStats {
    pub mean_l2: f64,
    pub max_l2: f64,
    pub spike_count: usize,
    /// Pairs whose mask bit is set; the statistics cover these only.
    pub masked_pair_count: usize,
}

pub fn drift_series<V: AsRef<[f32]>>(embeddings: &[V], mask: &[bool]) -> Result<DriftSeries> {
    if embeddings.len() < 2 {
        return Err(PiaError::InvalidInput(format!(
            "drift needs at least two embeddings, got {}",
            embeddings.len()
        )));
    }
    if mask.len() != embeddings.len() {
        return Err(PiaError::InvalidInput(format!(
            "mask has {} entries for {} embeddings",
            mask.len(),
            embeddings.len()
        )));
    }
    let dim = embeddings[0].as_ref().len();
    if let Some(bad) = embeddings.iter().position(|e| e.as_ref().len() != dim) {
        return Err(PiaError::Shape(format!("embedding {bad} has a different dimension")));
    }

    let pairs = embeddings.len() - 1;
    let mut series = DriftSeries {
        l2: Vec::with_capacity(pairs),
        cosine: Vec::with_capacity(pairs),
        mask: Vec::with_capacity(pairs),
        zero_norm_pairs: Vec::new(),
    };
    for t in 0..pairs {
        let (a, b) = (embeddings[t].as_ref(), embeddings[t + 1].as_ref());
        let (mut dot, mut na, mut nb, mut diff) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in a.iter().zip(b) {
            let (x, y) = (x as f64, y as f64);
            dot += x * y;
            na += x * x;
            nb += y * y;
            diff += (x - y) * (x - y);
        }
        series.l2.push(diff.sqrt());
        let mut valid = mask[t] && mask[t + 1];
        if na == 0.0 || nb == 0.0 {
            log::warn!("ZeroNormWarning: pair {t} has a zero-norm embedding, masked out");
            series.zero_norm_pairs.push(t);
            series.cosine.push(0.0);
            valid = false;
        } else {
            series.cosine.push((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0));
        }
        series.mask.push(valid);
    }
    Ok(series)
}

/// Mean/max L2 and spike count over the unmasked pairs.
pub fn drift_stats(series: &DriftSeries, spike_threshold: f64) -> Result<DriftStats> {
    let kept: Vec<f64> = series
        .l2
        .iter()
        .zip(&series.mask)
        .filter(|(_, &m)| m)
        .map(|(&d, _)| d)
        .collect();
    if kept.is_empty() {
        return Err(PiaError::EmptySeries("no unmasked embedding pairs".into()));
    }
    Ok(DriftStats {
        mean_l2: kept.iter().sum::<f64>() / kept.len() as f64,
        max_l2: kept.iter().copied().fold(f64::MIN, f64::max),
        spike_count: kept.iter().filter(|&&d| d > spike_threshold).count(),
        masked_pair_count: kept.len(),
    })
}
