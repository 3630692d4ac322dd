//! Event-stream to voxel-grid conversion.
//!
//! Each event deposits its polarity into the two temporal bins bracketing its
//! normalized timestamp, bilinearly in time, so per-event mass is conserved.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::event_io::{EventStream, SequenceSample};
use crate::tensor::Tensor;

/// Default number of time bins per interval.
pub const DEFAULT_TIME_BINS: usize = 8;

/// `[4, N_TB, H, W]` signed event volume for one sample.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub data: Tensor,
    pub n_time_bins: usize,
    /// (t_start, t_end) per interval, microseconds.
    pub intervals: [(u64, u64); 4],
}

impl VoxelGrid {
    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }
}

/// Bins one stream into `[n_time_bins, H, W]`.
///
/// Normalized time `t* = (t - t_start)/(t_end - t_start) * (N_TB - 1)`
/// splits polarity between bins `floor(t*)` and `floor(t*)+1` with weights
/// `1 - frac` and `frac`.
pub fn voxelize(stream: &EventStream, n_time_bins: usize) -> Result<Tensor> {
    if n_time_bins == 0 {
        return Err(Error::InvalidArgument {
            op: "voxelize",
            detail: "n_time_bins must be >= 1".into(),
        });
    }
    if stream.t_start >= stream.t_end {
        return Err(Error::InvalidArgument {
            op: "voxelize",
            detail: format!("empty interval [{}, {}]", stream.t_start, stream.t_end),
        });
    }
    let (h, w) = (stream.height as usize, stream.width as usize);
    let hw = h * w;
    let span = (stream.t_end - stream.t_start) as f64;
    let mut data = vec![0.0; n_time_bins * hw];
    for e in &stream.events {
        let p = e.y as usize * w + e.x as usize;
        let pol = e.p as f64;
        if n_time_bins == 1 {
            data[p] += pol;
            continue;
        }
        let t_norm = (e.t - stream.t_start) as f64 / span * (n_time_bins - 1) as f64;
        let b0 = (t_norm.floor() as usize).min(n_time_bins - 1);
        let frac = t_norm - b0 as f64;
        data[b0 * hw + p] += pol * (1.0 - frac);
        if frac > 0.0 && b0 + 1 < n_time_bins {
            data[(b0 + 1) * hw + p] += pol * frac;
        }
    }
    Tensor::from_vec(&[n_time_bins, h, w], data)
}

/// Stacks the four per-interval volumes of a sample in temporal order.
pub fn voxelize_sample(sample: &SequenceSample, n_time_bins: usize) -> Result<VoxelGrid> {
    let (h, w) = (sample.height(), sample.width());
    let mut data = Vec::with_capacity(4 * n_time_bins * h * w);
    let mut intervals = [(0u64, 0u64); 4];
    for (i, stream) in sample.intervals.iter().enumerate() {
        if (stream.height as usize, stream.width as usize) != (h, w) {
            return Err(Error::ShapeMismatch {
                op: "voxelize_sample",
                detail: format!(
                    "interval {i} is {}x{}, expected {w}x{h}",
                    stream.width, stream.height
                ),
            });
        }
        data.extend_from_slice(voxelize(stream, n_time_bins)?.data());
        intervals[i] = (stream.t_start, stream.t_end);
    }
    Ok(VoxelGrid {
        data: Tensor::from_vec(&[4, n_time_bins, h, w], data)?,
        n_time_bins,
        intervals,
    })
}

/// Dumps a grid as flat binary: dims as little-endian i32, then f64 values.
pub fn write_voxel_dump(path: &Path, grid: &VoxelGrid) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&(grid.data.shape().len() as i32).to_le_bytes());
    for &d in grid.data.shape() {
        buf.extend_from_slice(&(d as i32).to_le_bytes());
    }
    for &v in grid.data.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
