//! Dense and convolutional building blocks with explicit backward passes.
//!
//! Tensors are flat slices in channel-major (`C x H x W`) order. Every
//! `backward` accumulates into the parameter gradients and returns the
//! gradient with respect to the layer input.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

/// A named weight tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub trainable: bool,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
            trainable: true,
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(name: impl Into<String>, shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(name, shape);
        for v in &mut p.value {
            *v = T::of(rng.gen_range(-bound..=bound));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `x * sigmoid(x)`.
pub fn silu<T: Real>(pre: &[T]) -> Vec<T> {
    pre.iter().map(|&x| x * sigmoid(x)).collect()
}

/// Multiplies `grad` by the SiLU derivative at `pre`, in place.
pub fn silu_backward<T: Real>(pre: &[T], grad: &mut [T]) {
    for (g, &x) in grad.iter_mut().zip(pre) {
        let s = sigmoid(x);
        *g *= s * (T::one() + x * (T::one() - s));
    }
}

/// Fully connected layer, weight stored `out x in`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let bound = gain / (in_dim as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), vec![out_dim, in_dim], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), vec![out_dim], bound, rng),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .value
            .chunks_exact(self.in_dim)
            .zip(&self.bias.value)
            .map(|(row, &b)| b + row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>())
            .collect()
    }

    pub fn backward(&mut self, x: &[T], dy: &[T]) -> Vec<T> {
        let mut dx = vec![T::zero(); self.in_dim];
        let train = self.weight.trainable;
        for (o, &g) in dy.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            let row = &self.weight.value[o * self.in_dim..(o + 1) * self.in_dim];
            for (d, &w) in dx.iter_mut().zip(row) {
                *d += g * w;
            }
            if train {
                self.bias.grad[o] += g;
                let grow = &mut self.weight.grad[o * self.in_dim..(o + 1) * self.in_dim];
                for (gw, &v) in grow.iter_mut().zip(x) {
                    *gw += g * v;
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }
}

/// Spatial shape of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `1 / sqrt(E[silu(x)^2])` for standard normal `x`. Weights feeding into or
/// out of SiLU layers are scaled by it so activation variance holds steady
/// with depth instead of shrinking by about 0.36 per layer.
pub const SILU_GAIN: f64 = 1.6765;

/// Square-kernel 2D convolution with zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Output index range `[lo, hi)` whose input tap `o * stride + k - pad`
/// falls inside `[0, n)`.
#[inline]
fn valid_range(out_len: usize, n: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let (k, pad, s, n) = (k as isize, pad as isize, stride as isize, n as isize);
    let lo = if pad - k > 0 { (pad - k + s - 1) / s } else { 0 };
    let hi = ((n - 1 + pad - k) / s + 1).clamp(0, out_len as isize);
    (lo as usize, (hi.max(lo)) as usize)
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = SILU_GAIN * (3.0 / fan_in as f64).sqrt();
        Self {
            weight: Param::uniform(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel, kernel],
                bound,
                rng,
            ),
            bias: Param::uniform(format!("{name}.bias"), vec![out_channels], 1.0 / (fan_in as f64).sqrt(), rng),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_dims(&self, input: Dims) -> Dims {
        let o = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        Dims {
            channels: self.out_channels,
            height: o(input.height),
            width: o(input.width),
        }
    }

    pub fn forward(&self, x: &[T], input: Dims) -> (Vec<T>, Dims) {
        debug_assert_eq!(x.len(), input.len());
        debug_assert_eq!(input.channels, self.in_channels);
        let od = self.out_dims(input);
        let (h, w, ho, wo) = (input.height, input.width, od.height, od.width);
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let mut y = vec![T::zero(); od.len()];
        for co in 0..self.out_channels {
            let out = &mut y[co * ho * wo..(co + 1) * ho * wo];
            out.iter_mut().for_each(|v| *v = self.bias.value[co]);
            for ci in 0..self.in_channels {
                let inp = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_range(ho, h, ky, s, p);
                    for kx in 0..k {
                        let wv = self.weight.value[((co * self.in_channels + ci) * k + ky) * k + kx];
                        let (ox_lo, ox_hi) = valid_range(wo, w, kx, s, p);
                        if ox_hi <= ox_lo {
                            continue;
                        }
                        let n = ox_hi - ox_lo;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let orow = &mut out[oy * wo + ox_lo..oy * wo + ox_hi];
                            let start = iy * w + ox_lo * s + kx - p;
                            if s == 1 {
                                for (o, &i) in orow.iter_mut().zip(&inp[start..start + n]) {
                                    *o += wv * i;
                                }
                            } else {
                                for (o, &i) in orow.iter_mut().zip(inp[start..].iter().step_by(s)) {
                                    *o += wv * i;
                                }
                            }
                        }
                    }
                }
            }
        }
        (y, od)
    }

    /// Accumulates parameter gradients (when trainable) and returns the input
    /// gradient if `need_dx`.
    pub fn backward(&mut self, x: &[T], input: Dims, dy: &[T], need_dx: bool) -> Option<Vec<T>> {
        let od = self.out_dims(input);
        let (h, w, ho, wo) = (input.height, input.width, od.height, od.width);
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let train = self.weight.trainable;
        let mut dx = if need_dx { vec![T::zero(); input.len()] } else { Vec::new() };
        for co in 0..self.out_channels {
            let gout = &dy[co * ho * wo..(co + 1) * ho * wo];
            if train {
                self.bias.grad[co] += gout.iter().copied().sum::<T>();
            }
            for ci in 0..self.in_channels {
                let inp = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_range(ho, h, ky, s, p);
                    for kx in 0..k {
                        let widx = ((co * self.in_channels + ci) * k + ky) * k + kx;
                        let wv = self.weight.value[widx];
                        let (ox_lo, ox_hi) = valid_range(wo, w, kx, s, p);
                        if ox_hi <= ox_lo {
                            continue;
                        }
                        let n = ox_hi - ox_lo;
                        let mut gw = T::zero();
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let grow = &gout[oy * wo + ox_lo..oy * wo + ox_hi];
                            let start = iy * w + ox_lo * s + kx - p;
                            if s == 1 {
                                if train {
                                    gw += grow.iter().zip(&inp[start..start + n]).map(|(&g, &i)| g * i).sum::<T>();
                                }
                                if need_dx {
                                    let drow = &mut dx[ci * h * w + start..ci * h * w + start + n];
                                    for (d, &g) in drow.iter_mut().zip(grow) {
                                        *d += wv * g;
                                    }
                                }
                            } else {
                                if train {
                                    gw += grow
                                        .iter()
                                        .zip(inp[start..].iter().step_by(s))
                                        .map(|(&g, &i)| g * i)
                                        .sum::<T>();
                                }
                                if need_dx {
                                    let base = ci * h * w + start;
                                    for (j, &g) in grow.iter().enumerate() {
                                        dx[base + j * s] += wv * g;
                                    }
                                }
                            }
                        }
                        if train {
                            self.weight.grad[widx] += gw;
                        }
                    }
                }
            }
        }
        need_dx.then_some(dx)
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.weight.trainable = trainable;
        self.bias.trainable = trainable;
    }
}

/// Mean over each channel's spatial plane.
pub fn global_avg_pool<T: Real>(x: &[T], dims: Dims) -> Vec<T> {
    let plane = dims.height * dims.width;
    let inv = T::of(1.0 / plane as f64);
    x.chunks_exact(plane).map(|c| c.iter().copied().sum::<T>() * inv).collect()
}

pub fn global_avg_pool_backward<T: Real>(dy: &[T], dims: Dims) -> Vec<T> {
    let plane = dims.height * dims.width;
    let inv = T::of(1.0 / plane as f64);
    dy.iter().flat_map(|&g| std::iter::repeat(g * inv).take(plane)).collect()
}

/// 3x3x3 convolution over a stack of frames (stride 1, spatial zero padding
/// 1, temporal replicate padding 1) followed by the mean over time.
///
/// Both steps are linear, so the mean of the per-frame outputs equals a 2D
/// convolution of three temporally shifted frame means, one per temporal
/// tap. The weight is stored `out x in x 3 x 3 x 3` (time, row, column), which
/// is exactly the layout of a 2D kernel over `in * 3` stacked channels.
#[derive(Debug, Clone)]
pub struct TemporalConv<T> {
    pub conv: Conv2d<T>,
    pub in_channels: usize,
}

pub const TEMPORAL_TAPS: usize = 3;

impl<T: Real> TemporalConv<T> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut conv = Conv2d::new(name, in_channels * TEMPORAL_TAPS, out_channels, 3, 1, 1, rng);
        conv.weight.shape = vec![out_channels, in_channels, TEMPORAL_TAPS, 3, 3];
        Self { conv, in_channels }
    }

    /// Stacks `(1/T) sum_t x[t + tap - 1]` for each tap, channel index
    /// `ci * 3 + tap`. Frames are `C x H x W` each.
    pub fn shifted_means(frames: &[&[f32]], frame_dims: Dims) -> Vec<T> {
        let t_len = frames.len();
        let plane = frame_dims.height * frame_dims.width;
        let c = frame_dims.channels;
        let inv = 1.0 / t_len as f64;
        let mut out = vec![T::zero(); c * TEMPORAL_TAPS * plane];
        let mut acc = vec![0.0f64; plane];
        for ci in 0..c {
            for tap in 0..TEMPORAL_TAPS {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for t in 0..t_len {
                    let src = (t + tap).saturating_sub(1).min(t_len - 1);
                    let f = &frames[src][ci * plane..(ci + 1) * plane];
                    for (a, &v) in acc.iter_mut().zip(f) {
                        *a += v as f64;
                    }
                }
                let dst = &mut out[(ci * TEMPORAL_TAPS + tap) * plane..(ci * TEMPORAL_TAPS + tap + 1) * plane];
                for (d, &a) in dst.iter_mut().zip(&acc) {
                    *d = T::of(a * inv);
                }
            }
        }
        out
    }

    pub fn stacked_dims(&self, frame_dims: Dims) -> Dims {
        Dims {
            channels: frame_dims.channels * TEMPORAL_TAPS,
            ..frame_dims
        }
    }

    pub fn forward(&self, stacked: &[T], frame_dims: Dims) -> (Vec<T>, Dims) {
        self.conv.forward(stacked, self.stacked_dims(frame_dims))
    }

    pub fn backward(&mut self, stacked: &[T], frame_dims: Dims, dy: &[T]) {
        let dims = self.stacked_dims(frame_dims);
        self.conv.backward(stacked, dims, dy, false);
    }
}
