use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{global_avg_pool, global_avg_pool_backward, silu, silu_backward, Conv2d, Dims, Linear, Param, TEMPORAL_TAPS};
use super::{GroupInput, ModelConfig, CROP_DIMS};
use crate::error::{PiaError, Result};
use crate::scalar::Real;

/// Crops-only baseline: each group's mean crop goes through three stride-2
/// convolution blocks and global pooling; features are averaged over the
/// video's groups and classified linearly.
#[derive(Debug, Clone)]
pub struct PlainCnn<T> {
    pub config: ModelConfig,
    pub blocks: Vec<Conv2d<T>>,
    pub head: Linear<T>,
}

#[derive(Debug)]
struct GroupCache<T> {
    inputs: Vec<(Vec<T>, Dims)>,
    pres: Vec<Vec<T>>,
    last_dims: Dims,
}

#[derive(Debug)]
pub struct PlainCache<T> {
    groups: Vec<Option<GroupCache<T>>>,
    pooled: Vec<T>,
    count: usize,
}

/// The all-frame mean crop is the middle temporal tap of the stacked input.
fn mean_crop<T: Real>(visual: &[f32]) -> Vec<T> {
    let plane = CROP_DIMS.height * CROP_DIMS.width;
    (0..CROP_DIMS.channels)
        .flat_map(|c| {
            let start = (c * TEMPORAL_TAPS + 1) * plane;
            visual[start..start + plane].iter().map(|&v| T::of(v as f64))
        })
        .collect()
}

impl<T: Real> PlainCnn<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = [CROP_DIMS.channels, config.channels[1], config.channels[2], config.channels[3]];
        let blocks = (0..3)
            .map(|i| Conv2d::new(&format!("plain.block{i}"), ch[i], ch[i + 1], 3, 2, 1, &mut rng))
            .collect();
        let head = Linear::new("plain.head", ch[3], config.classes, 1.0, &mut rng);
        Self { config, blocks, head }
    }

    pub fn forward(&self, groups: &[GroupInput], mask: &[bool]) -> Result<(Vec<T>, PlainCache<T>)> {
        if mask.len() != groups.len() {
            return Err(PiaError::Shape(format!("{} groups with {} mask bits", groups.len(), mask.len())));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(PiaError::EmptySequence("video has no unmasked phoneme groups".into()));
        }
        let width = self.head.in_dim;
        let mut pooled = vec![T::zero(); width];
        let inv = T::of(1.0 / count as f64);
        let mut caches = Vec::with_capacity(groups.len());
        for (g, &m) in groups.iter().zip(mask) {
            if !m {
                caches.push(None);
                continue;
            }
            g.validate(&self.config)?;
            let mut dims = CROP_DIMS;
            let mut x = mean_crop::<T>(&g.visual);
            let mut inputs = Vec::new();
            let mut pres = Vec::new();
            for block in &self.blocks {
                let (pre, od) = block.forward(&x, dims);
                inputs.push((std::mem::replace(&mut x, silu(&pre)), dims));
                pres.push(pre);
                dims = od;
            }
            for (p, v) in pooled.iter_mut().zip(global_avg_pool(&x, dims)) {
                *p += v * inv;
            }
            caches.push(Some(GroupCache {
                inputs,
                pres,
                last_dims: dims,
            }));
        }
        let logits = self.head.forward(&pooled);
        Ok((
            logits,
            PlainCache {
                groups: caches,
                pooled,
                count,
            },
        ))
    }

    pub fn backward(&mut self, _groups: &[GroupInput], cache: &PlainCache<T>, dlogits: &[T]) {
        let inv = T::of(1.0 / cache.count as f64);
        let dp: Vec<T> = self.head.backward(&cache.pooled, dlogits).into_iter().map(|g| g * inv).collect();
        for gc in cache.groups.iter().flatten() {
            let mut g = global_avg_pool_backward(&dp, gc.last_dims);
            for (i, block) in self.blocks.iter_mut().enumerate().rev() {
                silu_backward(&gc.pres[i], &mut g);
                let (x, dims) = &gc.inputs[i];
                // the crop itself needs no gradient
                if let Some(dx) = block.backward(x, *dims, &g, i > 0) {
                    g = dx;
                }
            }
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.blocks.iter().flat_map(|b| b.params()).collect();
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        v.extend(self.head.params_mut());
        v
    }
}
