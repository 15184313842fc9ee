use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{AttentionCache, AttentionPool};
use super::encoders::{Mlp, MlpCache, VisualCache, VisualEncoder};
use super::layers::{silu, silu_backward, Linear, Param};
use super::{fuse, phoneme_one_hot, Backbone, GroupInput, IdentityEncoding, ModelConfig, GEOMETRY_FEATURES};
use crate::alignment::GROUP_SIZE;
use crate::error::{PiaError, Result};
use crate::extractors::EMBEDDING_DIM;
use crate::scalar::Real;

/// Scale of the final layer's initial weights, keeping untrained outputs
/// near even odds.
const HEAD_OUTPUT_GAIN: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct PiaNet<T> {
    pub config: ModelConfig,
    pub geometry: Option<Mlp<T>>,
    pub visual: Option<VisualEncoder<T>>,
    pub identity: Option<Mlp<T>>,
    pub pool: AttentionPool<T>,
    pub head_hidden: Linear<T>,
    pub head_out: Linear<T>,
}

#[derive(Debug)]
struct GroupCache<T> {
    geometry: Option<MlpCache<T>>,
    visual: Option<VisualCache<T>>,
    identity: Option<MlpCache<T>>,
}

#[derive(Debug)]
pub struct PiaCache<T> {
    groups: Vec<Option<GroupCache<T>>>,
    fused: Vec<Vec<T>>,
    pub attention: AttentionCache<T>,
    z: Vec<T>,
    head_pre: Vec<T>,
    head_act: Vec<T>,
}

fn cast<T: Real>(x: &[f32]) -> Vec<T> {
    x.iter().map(|&v| T::of(v as f64)).collect()
}

/// Identity encoder input for one group, see [`IdentityEncoding`].
pub fn identity_features<T: Real>(identity: &[f32], encoding: IdentityEncoding) -> Vec<T> {
    let mut m = vec![0.0f64; EMBEDDING_DIM];
    match encoding {
        IdentityEncoding::Mean => {
            for f in identity.chunks_exact(EMBEDDING_DIM) {
                m.iter_mut().zip(f).for_each(|(a, &v)| *a += v as f64);
            }
            m.iter().map(|&v| T::of(v / GROUP_SIZE as f64)).collect()
        }
        IdentityEncoding::Drift => {
            let scale = (EMBEDDING_DIM as f64).sqrt();
            let frames: Vec<Vec<f64>> = identity
                .chunks_exact(EMBEDDING_DIM)
                .filter_map(|f| {
                    let norm = f.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
                    (norm > 0.0).then(|| f.iter().map(|&v| v as f64 / norm * scale).collect())
                })
                .collect();
            for w in frames.windows(2) {
                m.iter_mut().zip(w[0].iter().zip(&w[1])).for_each(|(a, (x, y))| *a += (y - x).abs());
            }
            let n = frames.len().saturating_sub(1).max(1) as f64;
            m.iter().map(|&v| T::of(v / n)).collect()
        }
    }
}

impl<T: Real> PiaNet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d;
        let s = config.streams;
        let geometry = s
            .geometry
            .then(|| Mlp::new("geometry", GROUP_SIZE * GEOMETRY_FEATURES, config.geometry_hidden, d, &mut rng));
        let visual = s
            .viseme
            .then(|| VisualEncoder::new(config.channels, d, config.backbone == Backbone::Frozen, &mut rng));
        let identity = s
            .identity
            .then(|| Mlp::new("identity", EMBEDDING_DIM, config.identity_hidden, d, &mut rng));
        let pool = AttentionPool::new(config.fused_dim(), d, config.heads, &mut rng);
        let head_hidden = Linear::new("head.0", d, config.head_hidden, 1.0, &mut rng);
        let head_out = Linear::new("head.1", config.head_hidden, config.classes, HEAD_OUTPUT_GAIN, &mut rng);
        Self {
            config,
            geometry,
            visual,
            identity,
            pool,
            head_hidden,
            head_out,
        }
    }

    fn encode_group(&self, g: &GroupInput) -> Result<(Vec<T>, GroupCache<T>)> {
        g.validate(&self.config)?;
        let d = self.config.d;
        let geometry = self.geometry.as_ref().map(|m| m.forward(&cast(&g.geometry)));
        let visual = self.visual.as_ref().map(|v| v.forward(&cast(&g.visual)));
        let identity = self.identity.as_ref().map(|m| m.forward(&identity_features(&g.identity, self.config.identity_encoding)));
        let zeros = vec![T::zero(); d];
        let mut f = fuse(
            geometry.as_ref().map_or(&zeros, |x| &x.0),
            visual.as_ref().map_or(&zeros, |x| &x.0),
            identity.as_ref().map_or(&zeros, |x| &x.0),
        )?;
        if self.config.phoneme_one_hot {
            f.extend(phoneme_one_hot(&g.symbol)?.into_iter().map(|v| T::of(v as f64)));
        }
        let cache = GroupCache {
            geometry: geometry.map(|(_, c)| c),
            visual: visual.map(|(_, c)| c),
            identity: identity.map(|(_, c)| c),
        };
        Ok((f, cache))
    }

    pub fn forward(&self, groups: &[GroupInput], mask: &[bool]) -> Result<(Vec<T>, PiaCache<T>)> {
        if groups.is_empty() {
            return Err(PiaError::EmptySequence("video has no phoneme groups".into()));
        }
        if mask.len() != groups.len() {
            return Err(PiaError::Shape(format!("{} groups with {} mask bits", groups.len(), mask.len())));
        }
        let mut fused = Vec::with_capacity(groups.len());
        let mut caches = Vec::with_capacity(groups.len());
        for (g, &m) in groups.iter().zip(mask) {
            if m {
                let (f, c) = self.encode_group(g)?;
                fused.push(f);
                caches.push(Some(c));
            } else {
                fused.push(vec![T::zero(); self.config.fused_dim()]);
                caches.push(None);
            }
        }
        let (z, attention) = self.pool.forward(&fused, mask)?;
        let head_pre = self.head_hidden.forward(&z);
        let head_act = silu(&head_pre);
        let logits = self.head_out.forward(&head_act);
        Ok((
            logits,
            PiaCache {
                groups: caches,
                fused,
                attention,
                z,
                head_pre,
                head_act,
            },
        ))
    }

    pub fn backward(&mut self, groups: &[GroupInput], cache: &PiaCache<T>, dlogits: &[T]) {
        let mut dh = self.head_out.backward(&cache.head_act, dlogits);
        silu_backward(&cache.head_pre, &mut dh);
        let dz = self.head_hidden.backward(&cache.z, &dh);
        let df = self.pool.backward(&cache.fused, &cache.attention, &dz);
        let d = self.config.d;
        for ((g, gc), dft) in groups.iter().zip(&cache.groups).zip(&df) {
            let Some(gc) = gc else { continue };
            if let (Some(m), Some(c)) = (self.geometry.as_mut(), gc.geometry.as_ref()) {
                m.backward(&cast(&g.geometry), c, &dft[..d]);
            }
            if let (Some(v), Some(c)) = (self.visual.as_mut(), gc.visual.as_ref()) {
                v.backward(&cast(&g.visual), c, &dft[d..2 * d]);
            }
            if let (Some(m), Some(c)) = (self.identity.as_mut(), gc.identity.as_ref()) {
                m.backward(&identity_features(&g.identity, self.config.identity_encoding), c, &dft[2 * d..3 * d]);
            }
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        if let Some(m) = &self.geometry {
            v.extend(m.params());
        }
        if let Some(m) = &self.visual {
            v.extend(m.params());
        }
        if let Some(m) = &self.identity {
            v.extend(m.params());
        }
        v.extend(self.pool.params());
        v.extend(self.head_hidden.params());
        v.extend(self.head_out.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        if let Some(m) = &mut self.geometry {
            v.extend(m.params_mut());
        }
        if let Some(m) = &mut self.visual {
            v.extend(m.params_mut());
        }
        if let Some(m) = &mut self.identity {
            v.extend(m.params_mut());
        }
        v.extend(self.pool.params_mut());
        v.extend(self.head_hidden.params_mut());
        v.extend(self.head_out.params_mut());
        v
    }
}
