//! Event feature encoder: per-pixel temporal self-attention over the voxel
//! grid, then per scale a chain of temporal absPooling, SmoothNet, and
//! spatial absPooling producing three feature maps at scales 1, 1/2, 1/4.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::params::{ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub n_heads: usize,
    pub embed_dim: usize,
    /// SmoothNet output widths for the three chain stages.
    pub channels: [usize; 3],
    pub n_time_bins: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_heads: 2,
            embed_dim: 8,
            channels: [6, 8, 12],
            n_time_bins: crate::voxelizer::DEFAULT_TIME_BINS,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.n_time_bins % 4 != 0 || self.n_time_bins == 0 {
            return Err(Error::Config(format!(
                "n_time_bins must be a positive multiple of 4, got {}",
                self.n_time_bins
            )));
        }
        Ok(())
    }

    /// Channel widths of the three produced feature maps.
    pub fn map_channels(&self) -> [usize; 3] {
        let t = self.n_time_bins;
        [
            self.channels[0] * t / 2,
            self.channels[1] * t / 4,
            self.channels[2] * t / 4,
        ]
    }
}

/// Multi-head self-attention over the 4·N_TB temporal slices of each pixel.
#[derive(Debug)]
pub struct Mhsa {
    w_embed: ParamId,
    b_embed: ParamId,
    w_q: ParamId,
    b_q: ParamId,
    w_k: ParamId,
    b_k: ParamId,
    w_v: ParamId,
    b_v: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    w_out: ParamId,
    b_out: ParamId,
    n_heads: usize,
    embed_dim: usize,
}

impl Mhsa {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        n_heads: usize,
        embed_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let e = embed_dim;
        let proj = |store: &mut ParamStore, name: String, rng: &mut dyn rand::RngCore| {
            store.register_uniform(name, &[e, e], e, &mut &mut *rng)
        };
        Mhsa {
            w_embed: store.register_uniform(format!("{prefix}.embed.w"), &[1, e], 1, rng),
            b_embed: store.register_zeros(format!("{prefix}.embed.b"), &[e]),
            w_q: proj(store, format!("{prefix}.q.w"), rng),
            b_q: store.register_zeros(format!("{prefix}.q.b"), &[e]),
            w_k: proj(store, format!("{prefix}.k.w"), rng),
            b_k: store.register_zeros(format!("{prefix}.k.b"), &[e]),
            w_v: proj(store, format!("{prefix}.v.w"), rng),
            b_v: store.register_zeros(format!("{prefix}.v.b"), &[e]),
            w_o: proj(store, format!("{prefix}.o.w"), rng),
            b_o: store.register_zeros(format!("{prefix}.o.b"), &[e]),
            w_out: store.register_uniform(format!("{prefix}.out.w"), &[e, 1], e, rng),
            b_out: store.register_zeros(format!("{prefix}.out.b"), &[1]),
            n_heads,
            embed_dim,
        }
    }

    /// Input/output `[4, N_TB, H, W]`; residual added to the input.
    pub fn forward(&self, g: &mut Graph, voxels: NodeId) -> Result<NodeId> {
        let [four, t, h, w] = g.shape(voxels) else {
            return Err(Error::ShapeMismatch {
                op: "mhsa",
                detail: format!("expected [4,N_TB,H,W], got {:?}", g.shape(voxels)),
            });
        };
        let (four, t, h, w) = (*four, *t, *h, *w);
        let s = four * t; // tokens per pixel
        let p = h * w;
        let e = self.embed_dim;
        let nh = self.n_heads;
        let dh = e / nh;

        // [4,T,H,W] -> [P,S,1] token layout
        let x = g.reshape(voxels, &[s, h, w])?;
        let x = g.permute(x, &[1, 2, 0])?;
        let x = g.reshape(x, &[p, s, 1])?;

        let (we, be) = (g.param(self.w_embed)?, g.param(self.b_embed)?);
        let x = g.linear(x, we, be)?; // [P,S,E]

        let heads = |g: &mut Graph, y: NodeId| -> Result<NodeId> {
            let y = g.reshape(y, &[p, s, nh, dh])?;
            let y = g.permute(y, &[0, 2, 1, 3])?;
            g.reshape(y, &[p * nh, s, dh])
        };
        let (wq, bq) = (g.param(self.w_q)?, g.param(self.b_q)?);
        let (wk, bk) = (g.param(self.w_k)?, g.param(self.b_k)?);
        let (wv, bv) = (g.param(self.w_v)?, g.param(self.b_v)?);
        let q = g.linear(x, wq, bq)?;
        let q = heads(g, q)?;
        let k = g.linear(x, wk, bk)?;
        let k = heads(g, k)?;
        let v = g.linear(x, wv, bv)?;
        let v = heads(g, v)?;

        let kt = g.permute(k, &[0, 2, 1])?; // [P*nh, Dh, S]
        let scores = g.matmul_bb(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let att = g.softmax(scores, 2)?; // [P*nh, S, S]
        let ctx = g.matmul_bb(att, v)?; // [P*nh, S, Dh]

        let ctx = g.reshape(ctx, &[p, nh, s, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[p, s, e])?;
        let (wo, bo) = (g.param(self.w_o)?, g.param(self.b_o)?);
        let ctx = g.linear(ctx, wo, bo)?;
        let (wout, bout) = (g.param(self.w_out)?, g.param(self.b_out)?);
        let out = g.linear(ctx, wout, bout)?; // [P,S,1]

        // back to [4,T,H,W], plus residual
        let out = g.reshape(out, &[h, w, s])?;
        let out = g.permute(out, &[2, 0, 1])?;
        let out = g.reshape(out, &[four, t, h, w])?;
        g.add(out, voxels)
    }

    /// Attention weights for inspection/testing: `[P*heads, S, S]` rows sum
    /// to one.
    pub fn attention_weights(&self, g: &mut Graph, voxels: NodeId) -> Result<NodeId> {
        let [four, t, h, w] = g.shape(voxels) else {
            return Err(Error::ShapeMismatch {
                op: "mhsa",
                detail: format!("expected [4,N_TB,H,W], got {:?}", g.shape(voxels)),
            });
        };
        let (four, t, h, w) = (*four, *t, *h, *w);
        let s = four * t;
        let p = h * w;
        let e = self.embed_dim;
        let nh = self.n_heads;
        let dh = e / nh;
        let x = g.reshape(voxels, &[s, h, w])?;
        let x = g.permute(x, &[1, 2, 0])?;
        let x = g.reshape(x, &[p, s, 1])?;
        let (we, be) = (g.param(self.w_embed)?, g.param(self.b_embed)?);
        let x = g.linear(x, we, be)?;
        let heads = |g: &mut Graph, y: NodeId| -> Result<NodeId> {
            let y = g.reshape(y, &[p, s, nh, dh])?;
            let y = g.permute(y, &[0, 2, 1, 3])?;
            g.reshape(y, &[p * nh, s, dh])
        };
        let (wq, bq) = (g.param(self.w_q)?, g.param(self.b_q)?);
        let (wk, bk) = (g.param(self.w_k)?, g.param(self.b_k)?);
        let q = g.linear(x, wq, bq)?;
        let q = heads(g, q)?;
        let k = g.linear(x, wk, bk)?;
        let k = heads(g, k)?;
        let kt = g.permute(k, &[0, 2, 1])?;
        let scores = g.matmul_bb(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        g.softmax(scores, 2)
    }
}

/// One 3×3×3 conv followed by a two-conv residual block with leaky ReLU.
#[derive(Debug)]
pub struct SmoothNet {
    w_in: ParamId,
    b_in: ParamId,
    w_a: ParamId,
    b_a: ParamId,
    w_b: ParamId,
    b_b: ParamId,
}

pub const LEAKY_SLOPE: f64 = 0.1;

impl SmoothNet {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * 27;
        let fan_mid = c_out * 27;
        SmoothNet {
            w_in: store.register_uniform(format!("{prefix}.in.w"), &[c_out, c_in, 3, 3, 3], fan_in, rng),
            b_in: store.register_zeros(format!("{prefix}.in.b"), &[c_out]),
            w_a: store.register_uniform(format!("{prefix}.a.w"), &[c_out, c_out, 3, 3, 3], fan_mid, rng),
            b_a: store.register_zeros(format!("{prefix}.a.b"), &[c_out]),
            w_b: store.register_uniform(format!("{prefix}.b.w"), &[c_out, c_out, 3, 3, 3], fan_mid, rng),
            b_b: store.register_zeros(format!("{prefix}.b.b"), &[c_out]),
        }
    }

    /// `[C,T,H,W] -> [C',T,H,W]`.
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let (w_in, b_in) = (g.param(self.w_in)?, g.param(self.b_in)?);
        let y = g.conv3d(x, w_in, b_in, 1, 1)?;
        let (w_a, b_a) = (g.param(self.w_a)?, g.param(self.b_a)?);
        let h = g.conv3d(y, w_a, b_a, 1, 1)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE)?;
        let (w_b, b_b) = (g.param(self.w_b)?, g.param(self.b_b)?);
        let h = g.conv3d(h, w_b, b_b, 1, 1)?;
        g.add(y, h)
    }
}

/// The three feature maps at scales 1, 1/2, 1/4.
pub struct FeatureMaps {
    pub full: NodeId,
    pub half: NodeId,
    pub quarter: NodeId,
}

/// Full encoder: MHSA plus three chain stages.
#[derive(Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    mhsa: Mhsa,
    stage_a: SmoothNet,
    stage_b: SmoothNet,
    stage_c: SmoothNet,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let [c0, c1, c2] = config.channels;
        Ok(Encoder {
            mhsa: Mhsa::new(store, "encoder.mhsa", config.n_heads, config.embed_dim, rng),
            stage_a: SmoothNet::new(store, "encoder.stage_a", 4, c0, rng),
            stage_b: SmoothNet::new(store, "encoder.stage_b", c0, c1, rng),
            stage_c: SmoothNet::new(store, "encoder.stage_c", c1, c2, rng),
            config,
        })
    }

    pub fn mhsa(&self) -> &Mhsa {
        &self.mhsa
    }

    /// `[4, N_TB, H, W]` voxels to three feature maps; remaining temporal
    /// bins are folded into channels.
    pub fn encode(&self, g: &mut Graph, voxels: NodeId) -> Result<FeatureMaps> {
        let [_, t, h, w] = g.shape(voxels) else {
            return Err(Error::ShapeMismatch {
                op: "encode",
                detail: format!("expected [4,N_TB,H,W], got {:?}", g.shape(voxels)),
            });
        };
        let (t, h, w) = (*t, *h, *w);
        if t != self.config.n_time_bins {
            return Err(Error::ShapeMismatch {
                op: "encode",
                detail: format!("grid has {t} time bins, encoder expects {}", self.config.n_time_bins),
            });
        }
        let [c0, c1, c2] = self.config.channels;
        let x = self.mhsa.forward(g, voxels)?;

        // stage A: temporal pool, smooth; full-scale map
        let x = g.abs_pool_axis(x, 1, 2)?; // [4, T/2, H, W]
        let s1 = self.stage_a.forward(g, x)?; // [c0, T/2, H, W]
        let full = g.reshape(s1, &[c0 * t / 2, h, w])?;

        // stage B: spatial pool, temporal pool, smooth; half-scale map
        let x = g.abs_pool2(s1)?; // [c0, T/2, H/2, W/2]
        let x = g.abs_pool_axis(x, 1, 2)?; // [c0, T/4, H/2, W/2]
        let s2 = self.stage_b.forward(g, x)?; // [c1, T/4, H/2, W/2]
        let half = g.reshape(s2, &[c1 * t / 4, h / 2, w / 2])?;

        // stage C: spatial pool, smooth; quarter-scale map
        let x = g.abs_pool2(s2)?; // [c1, T/4, H/4, W/4]
        let s3 = self.stage_c.forward(g, x)?; // [c2, T/4, H/4, W/4]
        let quarter = g.reshape(s3, &[c2 * t / 4, h / 4, w / 4])?;

        Ok(FeatureMaps {
            full,
            half,
            quarter,
        })
    }
}
