//! Multi-head attention pooling with learned queries.
//!
//! Keys come from one shared projection split into `H` heads of width
//! `d / H`; values from a second shared projection split into `H` heads of
//! width `d`. Head `h` scores position `t` with `q_h . k_{h,t} / sqrt(d/H)`,
//! masked positions are excluded from the softmax, and the pooled vector is
//! the mean over heads of the attention-weighted values.

use rand_chacha::ChaCha8Rng;

use super::layers::{Linear, Param};
use crate::error::{PiaError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct AttentionPool<T> {
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub queries: Param<T>,
    pub heads: usize,
    pub key_dim: usize,
    pub value_dim: usize,
}

#[derive(Debug)]
pub struct AttentionCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    /// `heads x T`; exactly zero at masked positions.
    pub alpha: Vec<Vec<T>>,
    mask: Vec<bool>,
}

impl<T: Real> AttentionPool<T> {
    pub fn new(input: usize, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let key_dim = d / heads;
        Self {
            key: Linear::new("pool.key", input, heads * key_dim, 1.0, rng),
            value: Linear::new("pool.value", input, heads * d, 1.0, rng),
            queries: Param::uniform("pool.queries", vec![heads, key_dim], 1.0, rng),
            heads,
            key_dim,
            value_dim: d,
        }
    }

    pub fn forward(&self, f: &[Vec<T>], mask: &[bool]) -> Result<(Vec<T>, AttentionCache<T>)> {
        if f.len() != mask.len() {
            return Err(PiaError::Shape(format!("{} positions with {} mask bits", f.len(), mask.len())));
        }
        if !mask.iter().any(|&m| m) {
            return Err(PiaError::EmptySequence("every position is masked".into()));
        }
        let keys: Vec<Vec<T>> = f.iter().map(|x| self.key.forward(x)).collect();
        let values: Vec<Vec<T>> = f.iter().map(|x| self.value.forward(x)).collect();
        let scale = T::of(1.0 / (self.key_dim as f64).sqrt());
        let inv_h = T::of(1.0 / self.heads as f64);
        let mut z = vec![T::zero(); self.value_dim];
        let mut alpha = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = &self.queries.value[h * self.key_dim..(h + 1) * self.key_dim];
            let scores: Vec<T> = keys
                .iter()
                .map(|k| {
                    q.iter()
                        .zip(&k[h * self.key_dim..(h + 1) * self.key_dim])
                        .map(|(&a, &b)| a * b)
                        .sum::<T>()
                        * scale
                })
                .collect();
            let max = scores
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&s, _)| s)
                .fold(T::neg_infinity(), T::max);
            let mut a: Vec<T> = scores
                .iter()
                .zip(mask)
                .map(|(&s, &m)| if m { (s - max).exp() } else { T::zero() })
                .collect();
            let total = a.iter().copied().sum::<T>();
            a.iter_mut().for_each(|x| *x /= total);
            for (t, &w) in a.iter().enumerate() {
                if w == T::zero() {
                    continue;
                }
                let v = &values[t][h * self.value_dim..(h + 1) * self.value_dim];
                for (zi, &vi) in z.iter_mut().zip(v) {
                    *zi += w * vi * inv_h;
                }
            }
            alpha.push(a);
        }
        Ok((
            z,
            AttentionCache {
                keys,
                values,
                alpha,
                mask: mask.to_vec(),
            },
        ))
    }

    /// Returns the gradient for every input position (zero where masked).
    pub fn backward(&mut self, f: &[Vec<T>], cache: &AttentionCache<T>, dz: &[T]) -> Vec<Vec<T>> {
        let n = f.len();
        let (kd, vd) = (self.key_dim, self.value_dim);
        let scale = T::of(1.0 / (kd as f64).sqrt());
        let inv_h = T::of(1.0 / self.heads as f64);
        let mut dkeys = vec![vec![T::zero(); self.heads * kd]; n];
        let mut dvalues = vec![vec![T::zero(); self.heads * vd]; n];
        for h in 0..self.heads {
            let a = &cache.alpha[h];
            let dalpha: Vec<T> = (0..n)
                .map(|t| {
                    let v = &cache.values[t][h * vd..(h + 1) * vd];
                    v.iter().zip(dz).map(|(&x, &g)| x * g).sum::<T>() * inv_h
                })
                .collect();
            let mean = a.iter().zip(&dalpha).map(|(&x, &g)| x * g).sum::<T>();
            for t in 0..n {
                if !cache.mask[t] {
                    continue;
                }
                for (dv, &g) in dvalues[t][h * vd..(h + 1) * vd].iter_mut().zip(dz) {
                    *dv += a[t] * g * inv_h;
                }
                let ds = a[t] * (dalpha[t] - mean) * scale;
                let k = &cache.keys[t][h * kd..(h + 1) * kd];
                let qrange = h * kd..(h + 1) * kd;
                for (j, i) in qrange.enumerate() {
                    self.queries.grad[i] += ds * k[j];
                    dkeys[t][h * kd + j] += ds * self.queries.value[i];
                }
            }
        }
        (0..n)
            .map(|t| {
                if !cache.mask[t] {
                    return vec![T::zero(); f[t].len()];
                }
                let mut df = self.key.backward(&f[t], &dkeys[t]);
                for (a, b) in df.iter_mut().zip(self.value.backward(&f[t], &dvalues[t])) {
                    *a += b;
                }
                df
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.key.params().into();
        v.extend(self.value.params());
        v.push(&self.queries);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.key.params_mut().into();
        v.extend(self.value.params_mut());
        v.push(&mut self.queries);
        v
    }
}
