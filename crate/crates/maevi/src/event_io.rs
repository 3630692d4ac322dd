//! On-disk formats for event streams and five-frame samples.
//!
//! An event file is plain text: a header line `W H t_start t_end`, then one
//! `t,x,y,p` line per event with microsecond timestamps and polarity ±1.
//! A sample directory holds `frame_{-2,-1,0,1,2}.png` (RGB, 8-bit, mapped to
//! [0,1] floats as v/255) and `events_{0,1,2,3}.txt`, where index 0 is the
//! interval between the first two frames.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One brightness-change event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    /// Timestamp in microseconds.
    pub t: u64,
    pub x: u32,
    pub y: u32,
    /// Polarity, −1 or +1.
    pub p: i8,
}

/// Ordered events for one inter-frame interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub t_start: u64,
    pub t_end: u64,
    pub width: u32,
    pub height: u32,
}

impl EventStream {
    pub fn empty(width: u32, height: u32, t_start: u64, t_end: u64) -> Self {
        EventStream {
            events: Vec::new(),
            t_start,
            t_end,
            width,
            height,
        }
    }

    /// Checks bounds, ordering, and interval membership of every event.
    pub fn validate(&self) -> Result<()> {
        if self.t_start >= self.t_end {
            return Err(Error::InvalidArgument {
                op: "EventStream::validate",
                detail: format!("empty interval [{}, {}]", self.t_start, self.t_end),
            });
        }
        let mut prev = self.t_start;
        for (i, e) in self.events.iter().enumerate() {
            if e.x >= self.width || e.y >= self.height {
                return Err(Error::InvalidArgument {
                    op: "EventStream::validate",
                    detail: format!("event {i} at ({},{}) outside {}x{}", e.x, e.y, self.width, self.height),
                });
            }
            if e.t < prev || e.t > self.t_end {
                return Err(Error::InvalidArgument {
                    op: "EventStream::validate",
                    detail: format!("event {i} at t={} breaks ordering/interval bounds", e.t),
                });
            }
            if e.p != 1 && e.p != -1 {
                return Err(Error::InvalidArgument {
                    op: "EventStream::validate",
                    detail: format!("event {i} has polarity {}", e.p),
                });
            }
            prev = e.t;
        }
        Ok(())
    }

    /// Signed polarity sum over the stream.
    pub fn signed_count(&self) -> i64 {
        self.events.iter().map(|e| e.p as i64).sum()
    }
}

/// Five-frame, four-interval training/inference unit. Frames are RGB tensors
/// `[3,H,W]` with values in `[0,1]`; `ground_truth` is absent for pure
/// inference samples.
#[derive(Debug, Clone)]
pub struct SequenceSample {
    /// I₋₂, I₋₁, I₁, I₂ in temporal order.
    pub frames: [Tensor; 4],
    pub ground_truth: Option<Tensor>,
    pub intervals: [EventStream; 4],
}

impl SequenceSample {
    pub fn height(&self) -> usize {
        self.frames[0].shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames[0].shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        for f in self.frames.iter().chain(self.ground_truth.iter()) {
            if f.shape() != [3, h, w] {
                return Err(Error::ShapeMismatch {
                    op: "SequenceSample::validate",
                    detail: format!("frame shape {:?}, expected [3,{h},{w}]", f.shape()),
                });
            }
        }
        for (i, s) in self.intervals.iter().enumerate() {
            s.validate()?;
            if s.width as usize != w || s.height as usize != h {
                return Err(Error::ShapeMismatch {
                    op: "SequenceSample::validate",
                    detail: format!("interval {i} is {}x{}, frames are {w}x{h}", s.width, s.height),
                });
            }
            if i > 0 && self.intervals[i - 1].t_end != s.t_start {
                return Err(Error::InvalidArgument {
                    op: "SequenceSample::validate",
                    detail: format!(
                        "interval {i} starts at {} but interval {} ends at {}; bounds must meet at the frame timestamps",
                        s.t_start,
                        i - 1,
                        self.intervals[i - 1].t_end
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Reads an event file, enforcing the sorted, bounds-checked contract.
pub fn read_events(path: &Path) -> Result<EventStream> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        detail,
    };

    let (lineno, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "missing header line".into()))
        .and_then(|(n, r)| r.map(|l| (n, l)).map_err(|e| Error::io(path, e)))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(parse_err(lineno, format!("header must be `W H t_start t_end`, got {header:?}")));
    }
    let width: u32 = fields[0].parse().map_err(|_| parse_err(lineno, "bad width".into()))?;
    let height: u32 = fields[1].parse().map_err(|_| parse_err(lineno, "bad height".into()))?;
    let t_start: u64 = fields[2].parse().map_err(|_| parse_err(lineno, "bad t_start".into()))?;
    let t_end: u64 = fields[3].parse().map_err(|_| parse_err(lineno, "bad t_end".into()))?;

    let mut stream = EventStream::empty(width, height, t_start, t_end);
    let mut prev_t = t_start;
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(parse_err(lineno, format!("expected `t,x,y,p`, got {line:?}")));
        }
        let t: u64 = parts[0].trim().parse().map_err(|_| parse_err(lineno, "bad timestamp".into()))?;
        let x: u32 = parts[1].trim().parse().map_err(|_| parse_err(lineno, "bad x".into()))?;
        let y: u32 = parts[2].trim().parse().map_err(|_| parse_err(lineno, "bad y".into()))?;
        let p: i8 = parts[3].trim().parse().map_err(|_| parse_err(lineno, "bad polarity".into()))?;
        if x >= width || y >= height {
            return Err(parse_err(lineno, format!("coordinate ({x},{y}) outside {width}x{height}")));
        }
        if t < prev_t || t > t_end {
            return Err(parse_err(lineno, format!("timestamp {t} breaks non-decreasing order within [{t_start},{t_end}]")));
        }
        if p != 1 && p != -1 {
            return Err(parse_err(lineno, format!("polarity must be 1 or -1, got {p}")));
        }
        prev_t = t;
        stream.events.push(Event { t, x, y, p });
    }
    Ok(stream)
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    stream.validate()?;
    let mut out = String::new();
    out.push_str(&format!(
        "{} {} {} {}\n",
        stream.width, stream.height, stream.t_start, stream.t_end
    ));
    for e in &stream.events {
        out.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Loads an 8-bit RGB PNG into a `[3,H,W]` tensor with values v/255.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[c * h * w + y * w + x] = px.0[c] as f64 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Writes a `[3,H,W]` tensor in `[0,1]` as an 8-bit RGB PNG.
pub fn write_image(path: &Path, t: &Tensor) -> Result<()> {
    let (h, w) = match t.shape() {
        [3, h, w] => (*h, *w),
        s => {
            return Err(Error::ShapeMismatch {
                op: "write_image",
                detail: format!("expected [3,H,W], got {s:?}"),
            })
        }
    };
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|c| {
                (t.data()[c * h * w + y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8
            });
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes a `[H,W]` tensor in `[0,1]` as an 8-bit grayscale PNG.
pub fn write_gray_image(path: &Path, t: &Tensor) -> Result<()> {
    let (h, w) = match t.shape() {
        [h, w] => (*h, *w),
        s => {
            return Err(Error::ShapeMismatch {
                op: "write_gray_image",
                detail: format!("expected [H,W], got {s:?}"),
            })
        }
    };
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (t.data()[y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

const FRAME_NAMES: [&str; 4] = ["frame_-2.png", "frame_-1.png", "frame_1.png", "frame_2.png"];

/// Loads and validates one sample directory. The ground-truth frame
/// `frame_0.png` is optional.
pub fn load_sample(dir: &Path) -> Result<SequenceSample> {
    let frame = |name: &str| read_image(&dir.join(name));
    let frames = [
        frame(FRAME_NAMES[0])?,
        frame(FRAME_NAMES[1])?,
        frame(FRAME_NAMES[2])?,
        frame(FRAME_NAMES[3])?,
    ];
    let gt_path = dir.join("frame_0.png");
    let ground_truth = if gt_path.exists() {
        Some(read_image(&gt_path)?)
    } else {
        None
    };
    let intervals = [
        read_events(&dir.join("events_0.txt"))?,
        read_events(&dir.join("events_1.txt"))?,
        read_events(&dir.join("events_2.txt"))?,
        read_events(&dir.join("events_3.txt"))?,
    ];
    let sample = SequenceSample {
        frames,
        ground_truth,
        intervals,
    };
    sample.validate()?;
    Ok(sample)
}

/// Writes a sample directory in the canonical layout.
pub fn write_sample(dir: &Path, sample: &SequenceSample) -> Result<()> {
    sample.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, frame) in FRAME_NAMES.iter().zip(&sample.frames) {
        write_image(&dir.join(name), frame)?;
    }
    if let Some(gt) = &sample.ground_truth {
        write_image(&dir.join("frame_0.png"), gt)?;
    }
    for (i, stream) in sample.intervals.iter().enumerate() {
        write_events(&dir.join(format!("events_{i}.txt")), stream)?;
    }
    Ok(())
}

/// Lists sample directories under a dataset root, sorted by name.
pub fn list_samples(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("events_0.txt").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::DataFormat {
            path: root.to_path_buf(),
            detail: "no sample directories found (expected subdirectories with events_0.txt)".into(),
        });
    }
    Ok(dirs)
}
