//! AdaMax training loop with LR decay, deterministic seeding, and binary
//! checkpoints that round-trip bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event_io::SequenceSample;
use crate::loss_metrics::{masked_psnr, motion_aware_loss, psnr, ssim, LossConfig};
use crate::motion_filter::{loss_filter, region_filter, LossFilter, RegionFilter, DEFAULT_SIGMAS};
use crate::synthesis::InterpolationModel;
use crate::tensor::graph::Graph;
use crate::tensor::params::ParamStore;
use crate::tensor::Tensor;
use crate::voxelizer::{voxelize_sample, VoxelGrid};

pub const ADAMAX_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplicative LR decay applied once per epoch.
    pub lr_decay: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.0016,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 2,
            epochs: 60,
            lr_decay: 0.95,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::Config(format!(
                "lr0 {} must be > 0 and betas ({}, {}) in [0,1)",
                self.lr0, self.beta1, self.beta2
            )));
        }
        if self.batch_size == 0 || self.lr_decay <= 0.0 || self.lr_decay > 1.0 {
            return Err(Error::Config(format!(
                "batch_size {} must be >= 1, lr_decay {} in (0,1]",
                self.batch_size, self.lr_decay
            )));
        }
        self.loss.validate()
    }
}

/// Per-parameter first moment `m` and infinity norm `u`, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamaxState {
    pub m: Vec<Tensor>,
    pub u: Vec<Tensor>,
    pub t: u64,
}

impl AdamaxState {
    pub fn new(store: &ParamStore) -> Self {
        AdamaxState {
            m: store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect(),
            u: store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect(),
            t: 0,
        }
    }
}

/// One AdaMax update on a flat buffer:
/// `m ← β1·m + (1−β1)·g`, `u ← max(β2·u, |g|)`,
/// `θ ← θ − lr·m / ((1−β1ᵗ)·(u + ε))`.
pub fn adamax_step(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    u: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    t: u64,
) {
    debug_assert!(t >= 1);
    let bias = 1.0 - beta1.powi(t as i32);
    for i in 0..param.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        u[i] = (beta2 * u[i]).max(grad[i].abs());
        param[i] -= lr * m[i] / (bias * (u[i] + ADAMAX_EPS));
    }
}

/// Precomputed per-sample inputs: voxels, region filter, loss filter.
pub struct PreparedSample {
    pub frames: [Tensor; 4],
    pub ground_truth: Tensor,
    pub grid: VoxelGrid,
    pub region: RegionFilter,
    pub lf: LossFilter,
}

pub fn prepare_sample(sample: &SequenceSample, n_time_bins: usize) -> Result<PreparedSample> {
    let gt = sample.ground_truth.clone().ok_or_else(|| Error::InvalidArgument {
        op: "prepare_sample",
        detail: "sample has no ground-truth middle frame".into(),
    })?;
    let grid = voxelize_sample(sample, n_time_bins)?;
    let region = region_filter(&grid, &DEFAULT_SIGMAS)?;
    let lf = loss_filter(&region);
    Ok(PreparedSample {
        frames: sample.frames.clone(),
        ground_truth: gt,
        grid,
        region,
        lf,
    })
}

/// Forward one sample and return the loss plus accumulated parameter grads.
fn step_grads(
    model: &InterpolationModel,
    store: &ParamStore,
    s: &PreparedSample,
    loss_cfg: LossConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new(store);
    let out = model.forward(&mut g, &s.frames, &s.grid.data, &s.region)?;
    let gt = g.leaf(&s.ground_truth)?;
    let loss = motion_aware_loss(&mut g, out.final_frame, gt, &s.lf, loss_cfg)?;
    g.backward(loss)?;
    let grads = store.ids().map(|id| g.param_grad(id)).collect();
    Ok((g.value(loss).data()[0], grads))
}

/// Names the first parameter holding a non-finite value or gradient, for
/// divergence diagnostics.
fn first_bad_param(store: &ParamStore, grads: Option<&[Tensor]>) -> String {
    for id in store.ids() {
        if !store.get(id).is_finite() {
            return store.name(id).to_string();
        }
        if let Some(gs) = grads {
            if !gs[id.index()].is_finite() {
                return format!("grad of {}", store.name(id));
            }
        }
    }
    "<none identified>".into()
}

#[derive(Debug)]
pub struct TrainResult {
    /// Mean batch loss per optimizer step.
    pub loss_curve: Vec<f64>,
    pub state: AdamaxState,
    pub epochs_run: usize,
}

/// Full training loop: per epoch shuffle, per batch accumulate mean grads,
/// one AdaMax step per batch. Deterministic given the seed.
pub fn train(
    model: &InterpolationModel,
    store: &mut ParamStore,
    samples: &[SequenceSample],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument {
            op: "train",
            detail: "dataset is empty".into(),
        });
    }
    let n_tb = model.config.encoder.n_time_bins;
    let prepared: Vec<PreparedSample> = samples
        .iter()
        .map(|s| prepare_sample(s, n_tb))
        .collect::<Result<_>>()?;
    let mut state = AdamaxState::new(store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr0 * cfg.lr_decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let step = curve.len();
            let mut acc: Vec<Tensor> = store
                .ids()
                .map(|id| Tensor::zeros(store.get(id).shape()))
                .collect();
            let mut batch_loss = 0.0;
            // forwards run sample-parallel; the summation below is
            // sequential in batch order, so results stay deterministic
            let results: Vec<(f64, Vec<Tensor>)> = batch
                .par_iter()
                .map(|&si| step_grads(model, store, &prepared[si], cfg.loss))
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFiniteLoss {
                        step,
                        param: first_bad_param(store, None),
                    },
                    other => other,
                })?;
            for (loss, grads) in &results {
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step,
                        param: first_bad_param(store, Some(grads)),
                    });
                }
                batch_loss += loss;
                for (a, g) in acc.iter_mut().zip(grads) {
                    for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                        *av += gv;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            state.t += 1;
            for (i, id) in store.ids().enumerate() {
                for v in acc[i].data_mut() {
                    *v *= inv;
                }
                if !acc[i].is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step,
                        param: format!("grad of {}", store.name(id)),
                    });
                }
                adamax_step(
                    store.get_mut(id).data_mut(),
                    acc[i].data(),
                    state.m[i].data_mut(),
                    state.u[i].data_mut(),
                    lr,
                    cfg.beta1,
                    cfg.beta2,
                    state.t,
                );
            }
            curve.push(batch_loss * inv);
        }
    }
    Ok(TrainResult {
        loss_curve: curve,
        state,
        epochs_run: cfg.epochs,
    })
}

/// One evaluation row: metrics of the predicted middle frame.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub psnr: f64,
    pub ssim: f64,
    pub masked_psnr: f64,
}

/// Runs the model on one prepared sample and returns the predicted frame.
pub fn infer(
    model: &InterpolationModel,
    store: &ParamStore,
    s: &PreparedSample,
) -> Result<Tensor> {
    let mut g = Graph::new(store);
    let out = model.forward(&mut g, &s.frames, &s.grid.data, &s.region)?;
    Ok(g.value(out.final_frame).clone())
}

pub fn evaluate_sample(
    model: &InterpolationModel,
    store: &ParamStore,
    s: &PreparedSample,
) -> Result<EvalRow> {
    let pred = infer(model, store, s)?;
    Ok(EvalRow {
        psnr: psnr(&pred, &s.ground_truth, 1.0)?,
        ssim: ssim(&pred, &s.ground_truth, 1.0)?,
        masked_psnr: masked_psnr(&pred, &s.ground_truth, &s.lf, 1.0)?,
    })
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MAEVICK\x01";

/// Binary checkpoint: magic+version header, epoch, step count, then per
/// parameter its name, dims, values, and optimizer `m`/`u`. All integers and
/// floats little-endian.
pub fn save_checkpoint(
    path: &Path,
    store: &ParamStore,
    state: &AdamaxState,
    epoch: usize,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(epoch as u64).to_le_bytes());
    buf.extend_from_slice(&state.t.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (i, id) in store.ids().enumerate() {
        let name = store.name(id).as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        let t = store.get(id);
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in state.m[i].data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in state.u[i].data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint into a store with matching parameter names and shapes
/// (i.e. one built from the same model config). Returns optimizer state and
/// the stored epoch.
pub fn load_checkpoint(path: &Path, store: &mut ParamStore) -> Result<(AdamaxState, usize)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |detail: String| Error::DataFormat {
        path: path.to_path_buf(),
        detail,
    };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(bad(format!("truncated at byte {pos}")));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let u32_of = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap()) as usize;
    let u64_of = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
    let f64_of = |s: &[u8]| f64::from_le_bytes(s.try_into().unwrap());

    if take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic header (not a checkpoint, or wrong version)".into()));
    }
    let epoch = u64_of(take(8)?) as usize;
    let t = u64_of(take(8)?);
    let n_params = u32_of(take(4)?);
    if n_params != store.len() {
        return Err(bad(format!(
            "checkpoint has {n_params} parameters, model has {}",
            store.len()
        )));
    }
    let mut state = AdamaxState::new(store);
    state.t = t;
    for (i, id) in store.ids().enumerate() {
        let name_len = u32_of(take(4)?);
        let name = std::str::from_utf8(take(name_len)?)
            .map_err(|_| bad("parameter name is not UTF-8".into()))?
            .to_string();
        if name != store.name(id) {
            return Err(bad(format!(
                "parameter {i} is {name:?}, model expects {:?}",
                store.name(id)
            )));
        }
        let ndims = u32_of(take(4)?);
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(u32_of(take(4)?));
        }
        if dims != store.get(id).shape() {
            return Err(bad(format!(
                "parameter {name:?} has dims {dims:?}, model expects {:?}",
                store.get(id).shape()
            )));
        }
        let n = store.get(id).numel();
        for slot in 0..3 {
            let raw = take(8 * n)?;
            let vals: Vec<f64> = raw.chunks_exact(8).map(f64_of).collect();
            match slot {
                0 => store.get_mut(id).data_mut().copy_from_slice(&vals),
                1 => state.m[i].data_mut().copy_from_slice(&vals),
                _ => state.u[i].data_mut().copy_from_slice(&vals),
            }
        }
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok((state, epoch))
}

/// Tab-separated loss curve, one `step<TAB>loss` row per optimizer step.
pub fn write_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut out = String::from("step\tloss\n");
    for (i, l) in curve.iter().enumerate() {
        out.push_str(&format!("{i}\t{l:.12}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
