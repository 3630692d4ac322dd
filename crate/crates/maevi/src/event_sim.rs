//! Synthetic moving-shape scenes with ground truth: high-rate rendering,
//! threshold-crossing event generation, and dataset export.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event_io::{self, Event, EventStream, SequenceSample};
use crate::tensor::Tensor;

/// Log-luminance floor; keeps log() finite on black pixels.
pub const LOG_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    Rectangle { width: f64, height: f64 },
    Disk { radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    /// RGB color in [0,1].
    pub color: [f64; 3],
    /// Center position (x, y) in pixels at t = 0.
    pub position: (f64, f64),
    /// Pixels per frame gap.
    pub velocity: (f64, f64),
}

impl Shape {
    fn center_at(&self, t_us: u64, gap_us: u64) -> (f64, f64) {
        let gaps = t_us as f64 / gap_us as f64;
        (
            self.position.0 + self.velocity.0 * gaps,
            self.position.1 + self.velocity.1 * gaps,
        )
    }

    fn covers(&self, cx: f64, cy: f64, px: f64, py: f64) -> bool {
        match self.kind {
            ShapeKind::Rectangle { width, height } => {
                (px - cx).abs() <= width / 2.0 && (py - cy).abs() <= height / 2.0
            }
            ShapeKind::Disk { radius } => {
                (px - cx).powi(2) + (py - cy).powi(2) <= radius * radius
            }
        }
    }
}

/// Scene description; parsed from a plain-text key=value config.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Background gray level in [0,1].
    pub background: f64,
    pub shapes: Vec<Shape>,
    pub frame_gap_us: u64,
    /// Event-integration substeps per frame gap.
    pub substeps: usize,
    /// Contrast threshold in log-luminance units.
    pub contrast: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.substeps < 8 {
            return Err(Error::Config(format!(
                "substeps must be >= 8, got {}",
                self.substeps
            )));
        }
        if !(self.contrast > 0.0 && self.contrast < 1.0) {
            return Err(Error::Config(format!(
                "contrast must be in (0,1), got {}",
                self.contrast
            )));
        }
        if self.width == 0 || self.height == 0 || self.frame_gap_us == 0 {
            return Err(Error::Config("canvas and frame gap must be non-zero".into()));
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment, `shape=` repeats.
    ///
    /// Shape syntax:
    /// `shape=rect,r,g,b,cx,cy,vx,vy,width,height` or
    /// `shape=disk,r,g,b,cx,cy,vx,vy,radius`.
    pub fn parse(text: &str) -> Result<SceneSpec> {
        let mut spec = SceneSpec {
            width: 64,
            height: 64,
            background: 0.1,
            shapes: Vec::new(),
            frame_gap_us: 10_000,
            substeps: 16,
            contrast: 0.2,
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                Error::Config(format!("line {}: bad {what} in {raw:?}", lineno + 1))
            };
            match key {
                "width" => spec.width = value.parse().map_err(|_| bad("width"))?,
                "height" => spec.height = value.parse().map_err(|_| bad("height"))?,
                "background" => spec.background = value.parse().map_err(|_| bad("background"))?,
                "frame_gap_us" => {
                    spec.frame_gap_us = value.parse().map_err(|_| bad("frame_gap_us"))?
                }
                "substeps" => spec.substeps = value.parse().map_err(|_| bad("substeps"))?,
                "contrast" => spec.contrast = value.parse().map_err(|_| bad("contrast"))?,
                "shape" => {
                    let f: Vec<&str> = value.split(',').map(str::trim).collect();
                    let num = |i: usize| -> Result<f64> {
                        f.get(i)
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| bad(&format!("shape field {i}")))
                    };
                    let kind = match f.first().copied() {
                        Some("rect") if f.len() == 10 => ShapeKind::Rectangle {
                            width: num(8)?,
                            height: num(9)?,
                        },
                        Some("disk") if f.len() == 9 => ShapeKind::Disk { radius: num(8)? },
                        _ => return Err(bad("shape (want rect with 10 fields or disk with 9)")),
                    };
                    spec.shapes.push(Shape {
                        kind,
                        color: [num(1)?, num(2)?, num(3)?],
                        position: (num(4)?, num(5)?),
                        velocity: (num(6)?, num(7)?),
                    });
                }
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn parse_file(path: &Path) -> Result<SceneSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SceneSpec::parse(&text)
    }
}

/// Rasterizes the scene at time `t_us`. Later shapes occlude earlier ones;
/// edges are hard (no anti-aliasing).
pub fn render(spec: &SceneSpec, t_us: u64) -> Tensor {
    let (h, w) = (spec.height, spec.width);
    let mut data = vec![spec.background; 3 * h * w];
    let centers: Vec<(f64, f64)> = spec
        .shapes
        .iter()
        .map(|s| s.center_at(t_us, spec.frame_gap_us))
        .collect();
    for y in 0..h {
        for x in 0..w {
            // last covering shape wins
            for (shape, &(cx, cy)) in spec.shapes.iter().zip(&centers).rev() {
                if shape.covers(cx, cy, x as f64, y as f64) {
                    for c in 0..3 {
                        data[c * h * w + y * w + x] = shape.color[c];
                    }
                    break;
                }
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("render shape")
}

fn log_luminance(frame: &Tensor, h: usize, w: usize, p: usize) -> f64 {
    let hw = h * w;
    let lum = (frame.data()[p] + frame.data()[hw + p] + frame.data()[2 * hw + p]) / 3.0;
    lum.max(LOG_FLOOR).ln()
}

/// Emits threshold-crossing events for `[t_a, t_b]`.
///
/// Per pixel, log-luminance is tracked across substeps; each time the change
/// since the last event crosses a multiple of the contrast threshold, one
/// event of the crossing's sign is emitted, with its timestamp placed
/// linearly within the substep.
pub fn simulate_events(spec: &SceneSpec, t_a: u64, t_b: u64) -> Result<EventStream> {
    if t_a >= t_b {
        return Err(Error::InvalidArgument {
            op: "simulate_events",
            detail: format!("need t_a < t_b, got [{t_a}, {t_b}]"),
        });
    }
    let (h, w) = (spec.height, spec.width);
    let span = t_b - t_a;
    let n_sub = ((spec.substeps as u64 * span).div_ceil(spec.frame_gap_us)).max(1) as usize;
    let c = spec.contrast;

    let mut reference: Vec<f64> = {
        let frame = render(spec, t_a);
        (0..h * w).map(|p| log_luminance(&frame, h, w, p)).collect()
    };
    let mut prev: Vec<f64> = reference.clone();
    let mut events: Vec<Event> = Vec::new();

    for s in 1..=n_sub {
        let t_prev = t_a as f64 + span as f64 * (s - 1) as f64 / n_sub as f64;
        let t_cur = t_a as f64 + span as f64 * s as f64 / n_sub as f64;
        let frame = render(spec, t_cur.round() as u64);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let l_cur = log_luminance(&frame, h, w, p);
                let l_prev = prev[p];
                loop {
                    let (crossed, polarity) = if l_cur - reference[p] >= c {
                        (reference[p] + c, 1i8)
                    } else if l_cur - reference[p] <= -c {
                        (reference[p] - c, -1i8)
                    } else {
                        break;
                    };
                    let frac = if (l_cur - l_prev).abs() > 1e-300 {
                        ((crossed - l_prev) / (l_cur - l_prev)).clamp(0.0, 1.0)
                    } else {
                        1.0
                    };
                    let t = (t_prev + frac * (t_cur - t_prev)).round() as u64;
                    events.push(Event {
                        t: t.clamp(t_a, t_b),
                        x: x as u32,
                        y: y as u32,
                        p: polarity,
                    });
                    reference[p] = crossed;
                }
                prev[p] = l_cur;
            }
        }
    }
    events.sort_by_key(|e| (e.t, e.y, e.x, e.p));
    Ok(EventStream {
        events,
        t_start: t_a,
        t_end: t_b,
        width: w as u32,
        height: h as u32,
    })
}

/// Builds the full five-frame, four-interval sample for one scene.
pub fn make_sample(spec: &SceneSpec) -> Result<SequenceSample> {
    let gap = spec.frame_gap_us;
    let frame_at = |k: u64| render(spec, k * gap);
    let intervals = [
        simulate_events(spec, 0, gap)?,
        simulate_events(spec, gap, 2 * gap)?,
        simulate_events(spec, 2 * gap, 3 * gap)?,
        simulate_events(spec, 3 * gap, 4 * gap)?,
    ];
    let sample = SequenceSample {
        frames: [frame_at(0), frame_at(1), frame_at(3), frame_at(4)],
        ground_truth: Some(frame_at(2)),
        intervals,
    };
    sample.validate()?;
    Ok(sample)
}

/// Per-sample variation of the base scene: shape positions are jittered and
/// velocities randomly sign-flipped, deterministically from the seed.
pub fn vary_scene(spec: &SceneSpec, seed: u64, sample_index: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (sample_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut varied = spec.clone();
    let jitter = (spec.width.min(spec.height) as f64 / 4.0).max(1.0);
    for shape in &mut varied.shapes {
        shape.position.0 += rng.gen_range(-jitter..=jitter);
        shape.position.1 += rng.gen_range(-jitter..=jitter);
        if rng.gen_bool(0.5) {
            shape.velocity.0 = -shape.velocity.0;
        }
        if rng.gen_bool(0.5) {
            shape.velocity.1 = -shape.velocity.1;
        }
    }
    varied
}

/// Writes `n_samples` sample directories (`sample_0000`, ...) under `out_dir`.
pub fn make_dataset(spec: &SceneSpec, n_samples: usize, seed: u64, out_dir: &Path) -> Result<()> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for i in 0..n_samples {
        let varied = if n_samples == 1 {
            spec.clone()
        } else {
            vary_scene(spec, seed, i)
        };
        let sample = make_sample(&varied)?;
        let mut name = String::new();
        write!(name, "sample_{i:04}").unwrap();
        event_io::write_sample(&out_dir.join(name), &sample)?;
    }
    Ok(())
}

/// Pixels within `dist` (Chebyshev) of any color discontinuity in `frame`.
/// Test helper for edge-localization properties.
pub fn edge_mask(frame: &Tensor, dist: usize) -> Vec<bool> {
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let hw = h * w;
    let differs = |a: usize, b: usize| {
        (0..3).any(|c| (frame.data()[c * hw + a] - frame.data()[c * hw + b]).abs() > 1e-9)
    };
    let mut edge = vec![false; hw];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if (x + 1 < w && differs(p, p + 1)) || (y + 1 < h && differs(p, p + w)) {
                edge[p] = true;
                if x + 1 < w {
                    edge[p + 1] = true;
                }
                if y + 1 < h {
                    edge[p + w] = true;
                }
            }
        }
    }
    if dist == 0 {
        return edge;
    }
    let mut out = vec![false; hw];
    for y in 0..h {
        for x in 0..w {
            'scan: for dy in y.saturating_sub(dist)..=(y + dist).min(h - 1) {
                for dx in x.saturating_sub(dist)..=(x + dist).min(w - 1) {
                    if edge[dy * w + dx] {
                        out[y * w + x] = true;
                        break 'scan;
                    }
                }
            }
        }
    }
    out
}
