//! Moving-region filter: per-interval event activity, normalized, dilated by
//! a Gaussian cascade, used to weight frames and the training loss.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::voxelizer::VoxelGrid;

/// Normalization guard; an all-zero plane stays zero.
pub const NORM_EPS: f64 = 1e-8;

/// Default cascade widths.
pub const DEFAULT_SIGMAS: [f64; 2] = [1.0, 2.0];

/// Per-frame `[4,H,W]` weights in `[0,1]` localizing moving pixels.
/// Channel `i` weights frame `i` (the interval nearest that frame in time).
#[derive(Debug, Clone)]
pub struct RegionFilter {
    pub weights: Tensor,
    pub sigmas: Vec<f64>,
}

/// `[H,W]` weights in `[0,1]` used to reweight the loss toward motion.
#[derive(Debug, Clone)]
pub struct LossFilter {
    pub weights: Tensor,
}

/// Absolute sum over the temporal bins: `A[i,y,x] = Σ_b |V[i,b,y,x]|`.
pub fn activity(grid: &VoxelGrid) -> Tensor {
    let [_, n_tb, h, w] = grid.data.shape() else {
        unreachable!("voxel grid is always [4,N_TB,H,W]");
    };
    let (n_tb, h, w) = (*n_tb, *h, *w);
    let hw = h * w;
    let mut out = vec![0.0; 4 * hw];
    let d = grid.data.data();
    for i in 0..4 {
        for b in 0..n_tb {
            let plane = &d[(i * n_tb + b) * hw..(i * n_tb + b + 1) * hw];
            let acc = &mut out[i * hw..(i + 1) * hw];
            for (a, &v) in acc.iter_mut().zip(plane) {
                *a += v.abs();
            }
        }
    }
    Tensor::from_vec(&[4, h, w], out).expect("activity shape")
}

/// Per-interval max normalization: each `[H,W]` plane is divided by its
/// maximum plus [`NORM_EPS`], keeping values in `[0,1]`.
pub fn normalize(activity: &Tensor) -> Tensor {
    let [n, h, w] = activity.shape() else {
        panic!("normalize expects [N,H,W], got {:?}", activity.shape());
    };
    let (n, hw) = (*n, h * w);
    let mut out = activity.data().to_vec();
    for i in 0..n {
        let plane = &mut out[i * hw..(i + 1) * hw];
        let max = plane.iter().fold(0.0f64, |m, &v| m.max(v));
        for v in plane.iter_mut() {
            *v /= max + NORM_EPS;
        }
    }
    Tensor::from_vec(activity.shape(), out).expect("normalize shape")
}

/// Symmetric-reflect index into `[0, n)`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// 1-D Gaussian kernel, radius `ceil(3σ)`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable 2-D convolution of one `[H,W]` plane with a 1-D kernel,
/// reflect border.
pub fn blur_plane(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sx = reflect(x as isize + ki as isize - r, w);
                acc += kv * plane[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sy = reflect(y as isize + ki as isize - r, h);
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Sequential Gaussian blurs, then per-interval re-normalization to peak 1
/// (same epsilon rule) and a clamp to `[0,1]`.
pub fn gaussian_cascade(normalized: &Tensor, sigmas: &[f64]) -> Result<RegionFilter> {
    if sigmas.is_empty() || sigmas.iter().any(|&s| s <= 0.0) {
        return Err(Error::InvalidArgument {
            op: "gaussian_cascade",
            detail: format!("sigmas must be non-empty and positive, got {sigmas:?}"),
        });
    }
    let [n, h, w] = normalized.shape() else {
        return Err(Error::ShapeMismatch {
            op: "gaussian_cascade",
            detail: format!("expected [N,H,W], got {:?}", normalized.shape()),
        });
    };
    let (n, h, w) = (*n, *h, *w);
    let hw = h * w;
    let mut out = normalized.data().to_vec();
    for sigma in sigmas {
        let kernel = gaussian_kernel(*sigma);
        for i in 0..n {
            let blurred = blur_plane(&out[i * hw..(i + 1) * hw], h, w, &kernel);
            out[i * hw..(i + 1) * hw].copy_from_slice(&blurred);
        }
    }
    for i in 0..n {
        let plane = &mut out[i * hw..(i + 1) * hw];
        let max = plane.iter().fold(0.0f64, |m, &v| m.max(v));
        for v in plane.iter_mut() {
            *v = (*v / (max + NORM_EPS)).clamp(0.0, 1.0);
        }
    }
    Ok(RegionFilter {
        weights: Tensor::from_vec(normalized.shape(), out)?,
        sigmas: sigmas.to_vec(),
    })
}

/// Full pipeline from a voxel grid to the region filter.
pub fn region_filter(grid: &VoxelGrid, sigmas: &[f64]) -> Result<RegionFilter> {
    gaussian_cascade(&normalize(&activity(grid)), sigmas)
}

/// Multiplies frame `i` per channel by filter plane `i`.
pub fn apply_filter(frames: &[Tensor; 4], filter: &RegionFilter) -> Result<[Tensor; 4]> {
    let [_, h, w] = filter.weights.shape() else {
        return Err(Error::ShapeMismatch {
            op: "apply_filter",
            detail: format!("filter shape {:?}", filter.weights.shape()),
        });
    };
    let (h, w) = (*h, *w);
    let hw = h * w;
    let mut out: [Tensor; 4] = frames.clone();
    for (i, frame) in out.iter_mut().enumerate() {
        if frame.shape() != [3, h, w] {
            return Err(Error::ShapeMismatch {
                op: "apply_filter",
                detail: format!("frame {i} is {:?}, filter is {h}x{w}", frame.shape()),
            });
        }
        let plane = &filter.weights.data()[i * hw..(i + 1) * hw];
        let d = frame.data_mut();
        for c in 0..3 {
            for (v, &wgt) in d[c * hw..(c + 1) * hw].iter_mut().zip(plane) {
                *v *= wgt;
            }
        }
    }
    Ok(out)
}

/// Average of the two filter planes adjacent to the target frame
/// (intervals E₋₁→₀ and E₀→₁, i.e. channels 1 and 2).
pub fn loss_filter(filter: &RegionFilter) -> LossFilter {
    let [_, h, w] = filter.weights.shape() else {
        panic!("region filter is always [4,H,W]");
    };
    let hw = h * w;
    let d = filter.weights.data();
    let weights: Vec<f64> = (0..hw).map(|p| (d[hw + p] + d[2 * hw + p]) / 2.0).collect();
    LossFilter {
        weights: Tensor::from_vec(&[*h, *w], weights).expect("loss filter shape"),
    }
}
