//! Deformable kernel synthesis: per-scale SynBlocks predict convex tap
//! weights and sub-pixel offsets over the four input frames, the three
//! scales are fused by upsampled addition, and two sister branches (plain
//! and motion-filtered frames) are averaged into the final frame.

use rand::Rng;

use crate::encoder::{Encoder, EncoderConfig, FeatureMaps, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::motion_filter::{apply_filter, RegionFilter};
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Tap grid side length; F = taps_per_side².
    pub taps_per_side: usize,
    /// Max offset magnitude in pixels at full scale; halved per downscale.
    pub offset_radius: f64,
    /// Hidden width of each SynBlock conv head.
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            taps_per_side: 3,
            offset_radius: 8.0,
            head_hidden: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.taps_per_side == 0 || self.head_hidden == 0 || self.offset_radius <= 0.0 {
            return Err(Error::Config(format!(
                "taps_per_side {}, head_hidden {}, offset_radius {} must all be positive",
                self.taps_per_side, self.head_hidden, self.offset_radius
            )));
        }
        Ok(())
    }
}

/// Fixed tap positions: a centered `side × side` integer grid.
pub fn tap_grid(side: usize) -> Vec<(f64, f64)> {
    let c = (side as f64 - 1.0) / 2.0;
    let mut taps = Vec::with_capacity(side * side);
    for dy in 0..side {
        for dx in 0..side {
            taps.push((dy as f64 - c, dx as f64 - c));
        }
    }
    taps
}

/// 2×2 average pooling over the last two axes of a plain tensor.
pub fn avg_pool2(t: &Tensor) -> Result<Tensor> {
    let shape = t.shape();
    if shape.len() < 2 {
        return Err(Error::InvalidArgument {
            op: "avg_pool2",
            detail: format!("need >=2 axes, got {shape:?}"),
        });
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument {
            op: "avg_pool2",
            detail: format!("spatial extent {h}x{w} not divisible by 2"),
        });
    }
    let lead: usize = shape[..shape.len() - 2].iter().product();
    let (oh, ow) = (h / 2, w / 2);
    let mut out_shape = shape.to_vec();
    out_shape[shape.len() - 2] = oh;
    out_shape[shape.len() - 1] = ow;
    let data = t.data();
    let mut out = vec![0.0; lead * oh * ow];
    for l in 0..lead {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        s += data[l * h * w + (2 * oy + dy) * w + 2 * ox + dx];
                    }
                }
                out[l * oh * ow + oy * ow + ox] = s / 4.0;
            }
        }
    }
    Tensor::from_vec(&out_shape, out)
}

/// `[Tensor; 4]` of `[3,H,W]` frames into one `[4,3,H,W]` tensor.
pub fn stack_frames(frames: &[Tensor; 4]) -> Result<Tensor> {
    let shape = frames[0].shape().to_vec();
    let mut data = Vec::with_capacity(4 * frames[0].numel());
    for (i, f) in frames.iter().enumerate() {
        if f.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "stack_frames",
                detail: format!("frame {i} is {:?}, expected {shape:?}", f.shape()),
            });
        }
        data.extend_from_slice(f.data());
    }
    let mut out_shape = vec![4];
    out_shape.extend_from_slice(&shape);
    Tensor::from_vec(&out_shape, data)
}

/// Predicted kernel pieces of one SynBlock, kept around for inspection.
pub struct BlockOutput {
    /// `[C,H,W]` synthesized image at this scale.
    pub image: NodeId,
    /// `[4,F,H,W]`, convex over all 4·F taps per pixel.
    pub weights: NodeId,
    /// `[4,F,2,H,W]` (dy, dx) in pixels.
    pub offsets: NodeId,
}

/// Conv head predicting a deformable kernel for one scale.
#[derive(Debug)]
pub struct SynBlock {
    w_hidden: ParamId,
    b_hidden: ParamId,
    w_out: ParamId,
    b_out: ParamId,
    taps: Vec<(f64, f64)>,
    radius: f64,
}

impl SynBlock {
    /// The prediction head (`out` conv) starts at zero so the initial kernel
    /// is a uniform average with zero offsets.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        hidden: usize,
        taps_per_side: usize,
        radius: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let f = taps_per_side * taps_per_side;
        SynBlock {
            w_hidden: store.register_uniform(
                format!("{prefix}.hidden.w"),
                &[hidden, c_in, 3, 3],
                c_in * 9,
                rng,
            ),
            b_hidden: store.register_zeros(format!("{prefix}.hidden.b"), &[hidden]),
            w_out: store.register_zeros(format!("{prefix}.out.w"), &[12 * f, hidden, 1, 1]),
            b_out: store.register_zeros(format!("{prefix}.out.b"), &[12 * f]),
            taps: tap_grid(taps_per_side),
            radius,
        }
    }

    /// `features: [C_f,H,W]`, `frames: [4,C,H,W]` at the same scale.
    pub fn forward(&self, g: &mut Graph, features: NodeId, frames: NodeId) -> Result<BlockOutput> {
        let [h, w] = match g.shape(features) {
            [_, h, w] => [*h, *w],
            s => {
                return Err(Error::ShapeMismatch {
                    op: "syn_block",
                    detail: format!("features must be [C,H,W], got {s:?}"),
                })
            }
        };
        let f = self.taps.len();
        let (wh, bh) = (g.param(self.w_hidden)?, g.param(self.b_hidden)?);
        let hid = g.conv2d(features, wh, bh, 1, 1)?;
        let hid = g.leaky_relu(hid, LEAKY_SLOPE)?;
        let (wo, bo) = (g.param(self.w_out)?, g.param(self.b_out)?);
        let raw = g.conv2d(hid, wo, bo, 1, 0)?; // [12F, H, W]

        let logits = g.slice_axis0(raw, 0, 4 * f)?;
        let weights = g.softmax(logits, 0)?; // convex over all 4F taps
        let weights = g.reshape(weights, &[4, f, h, w])?;

        let off = g.slice_axis0(raw, 4 * f, 12 * f)?;
        let off = g.tanh(off)?;
        let off = g.scale(off, self.radius)?;
        let offsets = g.reshape(off, &[4, f, 2, h, w])?;

        let image = g.deform_synth(frames, weights, offsets, &self.taps)?;
        Ok(BlockOutput {
            image,
            weights,
            offsets,
        })
    }
}

/// One branch: three SynBlocks plus upsampled-addition fusion.
#[derive(Debug)]
pub struct Branch {
    pub full: SynBlock,
    pub half: SynBlock,
    pub quarter: SynBlock,
}

/// Outputs of one branch, finest scale last fused.
pub struct BranchOutput {
    pub full: BlockOutput,
    pub half: BlockOutput,
    pub quarter: BlockOutput,
    /// `[C,H,W]` sum of the full-scale image and the upsampled coarser ones.
    pub fused: NodeId,
}

impl Branch {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        config: &ModelConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let [c1, c2, c3] = config.encoder.map_channels();
        let (t, h, r) = (config.taps_per_side, config.head_hidden, config.offset_radius);
        Branch {
            full: SynBlock::new(store, &format!("{prefix}.full"), c1, h, t, r, rng),
            half: SynBlock::new(store, &format!("{prefix}.half"), c2, h, t, r / 2.0, rng),
            quarter: SynBlock::new(store, &format!("{prefix}.quarter"), c3, h, t, r / 4.0, rng),
        }
    }

    /// `frames` are `[4,C,H,W]` nodes at scales 1, 1/2, 1/4.
    pub fn forward(
        &self,
        g: &mut Graph,
        maps: &FeatureMaps,
        frames: [NodeId; 3],
    ) -> Result<BranchOutput> {
        let full = self.full.forward(g, maps.full, frames[0])?;
        let half = self.half.forward(g, maps.half, frames[1])?;
        let quarter = self.quarter.forward(g, maps.quarter, frames[2])?;
        let up_half = g.bilinear_upsample(half.image, 2)?;
        let up_quarter = g.bilinear_upsample(quarter.image, 4)?;
        let fused = g.add(full.image, up_half)?;
        let fused = g.add(fused, up_quarter)?;
        Ok(BranchOutput {
            full,
            half,
            quarter,
            fused,
        })
    }
}

/// Full interpolation model: shared encoder, two sister branches.
#[derive(Debug)]
pub struct InterpolationModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub standard: Branch,
    pub filtered: Branch,
}

/// Forward results; `final_frame` is the only clamped node.
pub struct ModelOutput {
    pub standard: BranchOutput,
    pub filtered: BranchOutput,
    pub final_frame: NodeId,
}

impl InterpolationModel {
    pub fn new(store: &mut ParamStore, config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        Ok(InterpolationModel {
            encoder: Encoder::new(store, config.encoder.clone(), rng)?,
            standard: Branch::new(store, "standard", &config, rng),
            filtered: Branch::new(store, "filtered", &config, rng),
            config,
        })
    }

    /// Builds the full graph for one sample. `frames` are the four key
    /// frames, `voxels` the `[4,N_TB,H,W]` grid, `filter` the moving-region
    /// filter derived from the same grid.
    pub fn forward(
        &self,
        g: &mut Graph,
        frames: &[Tensor; 4],
        voxels: &Tensor,
        filter: &RegionFilter,
    ) -> Result<ModelOutput> {
        let vox = g.leaf(voxels)?;
        let maps = self.encoder.encode(g, vox)?;

        let plain = stack_frames(frames)?;
        let filt = stack_frames(&apply_filter(frames, filter)?)?;
        let pyramid = |g: &mut Graph, t: Tensor| -> Result<[NodeId; 3]> {
            let s1 = avg_pool2(&t)?;
            let s2 = avg_pool2(&s1)?;
            Ok([g.leaf(&t)?, g.leaf(&s1)?, g.leaf(&s2)?])
        };
        let plain_pyr = pyramid(g, plain)?;
        let filt_pyr = pyramid(g, filt)?;

        let standard = self.standard.forward(g, &maps, plain_pyr)?;
        let filtered = self.filtered.forward(g, &maps, filt_pyr)?;
        let sum = g.add(standard.fused, filtered.fused)?;
        let mean = g.scale(sum, 0.5)?;
        let final_frame = g.clamp(mean, 0.0, 1.0)?;
        Ok(ModelOutput {
            standard,
            filtered,
            final_frame,
        })
    }
}
