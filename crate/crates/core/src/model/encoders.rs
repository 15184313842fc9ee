//! Per-group stream encoders.

use rand_chacha::ChaCha8Rng;

use super::layers::{
    global_avg_pool, global_avg_pool_backward, silu, silu_backward, Conv2d, Dims, Linear, Param, TemporalConv, SILU_GAIN,
};
use super::CROP_DIMS;
use crate::scalar::Real;

/// `Linear -> SiLU -> Linear`.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub hidden: Linear<T>,
    pub out: Linear<T>,
}

#[derive(Debug)]
pub struct MlpCache<T> {
    pre: Vec<T>,
    act: Vec<T>,
}

impl<T: Real> Mlp<T> {
    pub fn new(name: &str, input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            hidden: Linear::new(&format!("{name}.0"), input, hidden, 1.0, rng),
            out: Linear::new(&format!("{name}.1"), hidden, output, SILU_GAIN, rng),
        }
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, MlpCache<T>) {
        let pre = self.hidden.forward(x);
        let act = silu(&pre);
        (self.out.forward(&act), MlpCache { pre, act })
    }

    pub fn backward(&mut self, x: &[T], cache: &MlpCache<T>, dy: &[T]) -> Vec<T> {
        let mut da = self.out.backward(&cache.act, dy);
        silu_backward(&cache.pre, &mut da);
        self.hidden.backward(x, &da)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.hidden.params().into_iter().chain(self.out.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.hidden.params_mut().into_iter().chain(self.out.params_mut()).collect()
    }
}

/// Temporal convolution over the group's crops, then three stride-2
/// convolution blocks, global average pooling and a linear projection.
#[derive(Debug, Clone)]
pub struct VisualEncoder<T> {
    pub temporal: TemporalConv<T>,
    pub blocks: Vec<Conv2d<T>>,
    pub proj: Linear<T>,
}

#[derive(Debug)]
pub struct VisualCache<T> {
    /// Input and pre-activation of each backbone block; `inputs[0]` is the
    /// activated temporal convolution output.
    inputs: Vec<(Vec<T>, Dims)>,
    pres: Vec<Vec<T>>,
    pooled: Vec<T>,
    last_dims: Dims,
}

impl<T: Real> VisualEncoder<T> {
    pub fn new(channels: [usize; 4], d: usize, frozen: bool, rng: &mut ChaCha8Rng) -> Self {
        let temporal = TemporalConv::new("visual.temporal", CROP_DIMS.channels, channels[0], rng);
        let blocks = (0..3)
            .map(|i| {
                let mut c = Conv2d::new(&format!("visual.block{i}"), channels[i], channels[i + 1], 3, 2, 1, rng);
                c.set_trainable(!frozen);
                c
            })
            .collect();
        Self {
            temporal,
            blocks,
            proj: Linear::new("visual.proj", channels[3], d, SILU_GAIN, rng),
        }
    }

    /// `stacked` is the output of [`TemporalConv::shifted_means`] for the
    /// group's crops.
    pub fn forward(&self, stacked: &[T]) -> (Vec<T>, VisualCache<T>) {
        let (pre0, mut dims) = self.temporal.forward(stacked, CROP_DIMS);
        let mut pres = vec![];
        let mut inputs = vec![];
        let mut x = silu(&pre0);
        pres.push(pre0);
        for block in &self.blocks {
            let (pre, od) = block.forward(&x, dims);
            inputs.push((std::mem::replace(&mut x, silu(&pre)), dims));
            pres.push(pre);
            dims = od;
        }
        let pooled = global_avg_pool(&x, dims);
        let y = self.proj.forward(&pooled);
        (
            y,
            VisualCache {
                inputs,
                pres,
                pooled,
                last_dims: dims,
            },
        )
    }

    pub fn backward(&mut self, stacked: &[T], cache: &VisualCache<T>, dy: &[T]) {
        let dp = self.proj.backward(&cache.pooled, dy);
        let mut g = global_avg_pool_backward(&dp, cache.last_dims);
        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            silu_backward(&cache.pres[i + 1], &mut g);
            let (x, dims) = &cache.inputs[i];
            g = block.backward(x, *dims, &g, true).expect("input gradient requested");
        }
        silu_backward(&cache.pres[0], &mut g);
        self.temporal.backward(stacked, CROP_DIMS, &g);
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.temporal.conv.params().into();
        v.extend(self.blocks.iter().flat_map(|b| b.params()));
        v.extend(self.proj.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.temporal.conv.params_mut().into();
        v.extend(self.blocks.iter_mut().flat_map(|b| b.params_mut()));
        v.extend(self.proj.params_mut());
        v
    }
}
