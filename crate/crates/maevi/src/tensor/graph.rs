//! Recorded computation graph (tape) with reverse-mode differentiation.
//!
//! A [`Graph`] is built per forward pass: every op validates shapes, computes
//! its value eagerly, checks finiteness, and records enough metadata to run
//! its backward rule. [`Graph::backward`] walks the tape once in reverse and
//! accumulates gradients into every node; leaf gradients are then readable
//! through [`Graph::grad`] and [`Graph::param_grad`].

use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(#[allow(dead_code)] ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Abs(NodeId),
    Clamp(NodeId, f64, f64),
    Softmax(NodeId, usize),
    Mean(NodeId),
    Reshape(NodeId),
    Permute(NodeId, Vec<usize>),
    /// Contiguous slice along axis 0.
    SliceAxis0(NodeId, usize, usize),
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    /// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N].
    MatmulBB(NodeId, NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    Conv3d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    },
    /// Signed max-abs pooling along one axis; `argmax` holds, per output
    /// element, the flat input offset that won.
    AbsPoolAxis {
        x: NodeId,
        argmax: Vec<usize>,
    },
    /// Signed max-abs 2x2 pooling over the last two axes.
    AbsPool2 {
        x: NodeId,
        argmax: Vec<usize>,
    },
    /// Bilinear upsampling of the last two axes by an integer factor.
    BilinearUp(NodeId, usize),
    /// Deformable kernel synthesis: convex per-pixel combination of bilinear
    /// samples from four frames.
    DeformSynth {
        frames: NodeId,
        weights: NodeId,
        offsets: NodeId,
        taps: Vec<(f64, f64)>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    grad: Option<Vec<f64>>,
}

/// Tape of recorded ops over a parameter store. Built for one forward pass
/// and discarded after `backward`.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Bilinear sample of plane `img` (H x W, flat slice) at clamped real
/// coordinates. Returns (value, d/dy, d/dx).
fn bilinear_at(img: &[f64], h: usize, w: usize, y: f64, x: f64) -> (f64, f64, f64) {
    let yc = y.clamp(0.0, (h - 1) as f64);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let y0 = (yc.floor() as usize).min(h - 1);
    let x0 = (xc.floor() as usize).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = yc - y0 as f64;
    let fx = xc - x0 as f64;
    let v00 = img[y0 * w + x0];
    let v01 = img[y0 * w + x1];
    let v10 = img[y1 * w + x0];
    let v11 = img[y1 * w + x1];
    let top = v00 + fx * (v01 - v00);
    let bot = v10 + fx * (v11 - v10);
    let val = top + fy * (bot - top);
    // Coordinate gradients vanish where the clamp is active.
    let dy = if y == yc { bot - top } else { 0.0 };
    let dx = if x == xc {
        (v01 - v00) + fy * ((v11 - v10) - (v01 - v00))
    } else {
        0.0
    };
    (val, dy, dx)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: &'static str, value: Tensor, node_op: Op) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        self.nodes.push(Node {
            value,
            op: node_op,
            grad: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Insert a constant leaf (no gradient requested).
    pub fn leaf(&mut self, t: &Tensor) -> Result<NodeId> {
        let mut v = t.clone();
        v.requires_grad = false;
        v.grad = None;
        self.push("leaf", v, Op::Leaf)
    }

    /// Insert a leaf whose gradient will be retained by `backward`.
    pub fn leaf_grad(&mut self, t: &Tensor) -> Result<NodeId> {
        let mut v = t.clone();
        v.requires_grad = true;
        v.grad = None;
        self.push("leaf", v, Op::Leaf)
    }

    /// Insert (or fetch the already-inserted node for) a trainable parameter.
    pub fn param(&mut self, id: ParamId) -> Result<NodeId> {
        if let Some(n) = self.param_nodes[id.index()] {
            return Ok(n);
        }
        let t = self.params.get(id).clone();
        let n = self.push("param", t, Op::Param(id))?;
        self.param_nodes[id.index()] = Some(n);
        Ok(n)
    }

    fn binary_same_shape(
        &mut self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let out = va.zip(vb, op, f)?;
        self.push(op, out, make(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let out = self.nodes[a.0].value.map(|v| v * c);
        self.push("scale", out, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.nodes[a.0].value.map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        let out = self.nodes[a.0].value.map(|v| if v >= 0.0 { v } else { slope * v });
        self.push("leaky_relu", out, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.nodes[a.0].value.map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.nodes[a.0].value.map(f64::tanh);
        self.push("tanh", out, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.nodes[a.0].value.map(f64::abs);
        self.push("abs", out, Op::Abs(a))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let out = self.nodes[a.0].value.map(|v| v.clamp(lo, hi));
        self.push("clamp", out, Op::Clamp(a, lo, hi))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        let shape = v.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument {
                op: "softmax",
                detail: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out = vec![0.0; v.numel()];
        let data = v.data();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut m = f64::NEG_INFINITY;
                for k in 0..len {
                    m = m.max(data[base + k * inner]);
                }
                let mut z = 0.0;
                for k in 0..len {
                    let e = (data[base + k * inner] - m).exp();
                    out[base + k * inner] = e;
                    z += e;
                }
                for k in 0..len {
                    out[base + k * inner] /= z;
                }
            }
        }
        let out = Tensor::from_vec(&shape, out)?;
        self.push("softmax", out, Op::Softmax(a, axis))
    }

    /// Scalar mean over all elements.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        let m = v.sum() / v.numel() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(a))
    }

    /// Mean absolute difference of two same-shape tensors.
    pub fn l1_mean(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let d = self.abs(d)?;
        self.mean(d)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.nodes[a.0].value.clone().reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(a))
    }

    pub fn permute(&mut self, a: NodeId, perm: &[usize]) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        let shape = v.shape();
        if perm.len() != shape.len() {
            return Err(Error::InvalidArgument {
                op: "permute",
                detail: format!("perm {perm:?} does not match rank of {shape:?}"),
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let in_strides = strides(shape);
        let out_strides = strides(&out_shape);
        let mut out = vec![0.0; v.numel()];
        let data = v.data();
        let rank = shape.len();
        let mut idx = vec![0usize; rank]; // index in output space
        for out_off in 0..v.numel() {
            let mut in_off = 0;
            for d in 0..rank {
                in_off += idx[d] * in_strides[perm[d]];
            }
            out[out_off] = data[in_off];
            // increment output multi-index
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        debug_assert_eq!(out_strides[0] * out_shape[0], v.numel());
        let out = Tensor::from_vec(&out_shape, out)?;
        self.push("permute", out, Op::Permute(a, perm.to_vec()))
    }

    /// `x[from..to]` along axis 0.
    pub fn slice_axis0(&mut self, a: NodeId, from: usize, to: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        let shape = v.shape();
        if shape.is_empty() || to > shape[0] || from >= to {
            return Err(Error::InvalidArgument {
                op: "slice_axis0",
                detail: format!("range {from}..{to} invalid for shape {shape:?}"),
            });
        }
        let inner: usize = shape[1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[0] = to - from;
        let out = v.data()[from * inner..to * inner].to_vec();
        let out = Tensor::from_vec(&out_shape, out)?;
        self.push("slice_axis0", out, Op::SliceAxis0(a, from, to))
    }

    /// `x @ w + b` with `x: [..., K]`, `w: [K, N]`, `b: [N]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let vx = &self.nodes[x.0].value;
        let vw = &self.nodes[w.0].value;
        let vb = &self.nodes[b.0].value;
        let (k, n) = match vw.shape() {
            [k, n] => (*k, *n),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "linear",
                    detail: format!("weight must be 2-d, got {s:?}"),
                })
            }
        };
        let xs = vx.shape();
        if xs.is_empty() || *xs.last().unwrap() != k || vb.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                detail: format!("x {xs:?}, w {:?}, b {:?}", vw.shape(), vb.shape()),
            });
        }
        let batch = vx.numel() / k;
        let mut out = vec![0.0; batch * n];
        let xd = vx.data();
        let wd = vw.data();
        let bd = vb.data();
        for bi in 0..batch {
            let xrow = &xd[bi * k..(bi + 1) * k];
            let orow = &mut out[bi * n..(bi + 1) * n];
            orow.copy_from_slice(bd);
            for (ki, &xv) in xrow.iter().enumerate() {
                let wrow = &wd[ki * n..(ki + 1) * n];
                for (ni, &wv) in wrow.iter().enumerate() {
                    orow[ni] += xv * wv;
                }
            }
        }
        let mut out_shape = xs.to_vec();
        *out_shape.last_mut().unwrap() = n;
        let out = Tensor::from_vec(&out_shape, out)?;
        self.push("linear", out, Op::Linear { x, w, b })
    }

    /// Batched matmul `[B,M,K] x [B,K,N] -> [B,M,N]`.
    pub fn matmul_bb(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let (bs, m, k) = match va.shape() {
            [bs, m, k] => (*bs, *m, *k),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "matmul_bb",
                    detail: format!("lhs must be 3-d, got {s:?}"),
                })
            }
        };
        let (bs2, k2, n) = match vb.shape() {
            [bs2, k2, n] => (*bs2, *k2, *n),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "matmul_bb",
                    detail: format!("rhs must be 3-d, got {s:?}"),
                })
            }
        };
        if bs != bs2 || k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_bb",
                detail: format!("{:?} x {:?}", va.shape(), vb.shape()),
            });
        }
        let mut out = vec![0.0; bs * m * n];
        let ad = va.data();
        let bd = vb.data();
        for bi in 0..bs {
            for mi in 0..m {
                let arow = &ad[bi * m * k + mi * k..bi * m * k + (mi + 1) * k];
                let orow = &mut out[bi * m * n + mi * n..bi * m * n + (mi + 1) * n];
                for (ki, &av) in arow.iter().enumerate() {
                    let brow = &bd[bi * k * n + ki * n..bi * k * n + (ki + 1) * n];
                    for (ni, &bv) in brow.iter().enumerate() {
                        orow[ni] += av * bv;
                    }
                }
            }
        }
        let out = Tensor::from_vec(&[bs, m, n], out)?;
        self.push("matmul_bb", out, Op::MatmulBB(a, b))
    }

    /// 2-d cross-correlation, odd square kernel.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let vx = &self.nodes[x.0].value;
        let vw = &self.nodes[w.0].value;
        let vb = &self.nodes[b.0].value;
        let (cin, h, wd) = match vx.shape() {
            [c, h, w] => (*c, *h, *w),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("input must be [C,H,W], got {s:?}"),
                })
            }
        };
        let (cout, cin2, kh, kw) = match vw.shape() {
            [co, ci, kh, kw] => (*co, *ci, *kh, *kw),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("weight must be [Co,Ci,k,k], got {s:?}"),
                })
            }
        };
        if kh != kw || kh % 2 == 0 {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                detail: format!("kernel must be odd square, got {kh}x{kw}"),
            });
        }
        if cin != cin2 || vb.shape() != [cout] || stride == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!(
                    "input {:?}, weight {:?}, bias {:?}, stride {stride}",
                    vx.shape(),
                    vw.shape(),
                    vb.shape()
                ),
            });
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; cout * oh * ow];
        let xd = vx.data();
        let wdat = vw.data();
        let bd = vb.data();
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bd[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += xd[(ci * h + iy as usize) * wd + ix as usize]
                                    * wdat[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let out = Tensor::from_vec(&[cout, oh, ow], out)?;
        self.push("conv2d", out, Op::Conv2d { x, w, b, stride, pad })
    }

    /// 3-d cross-correlation, odd kernel along every axis.
    pub fn conv3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let vx = &self.nodes[x.0].value;
        let vw = &self.nodes[w.0].value;
        let vb = &self.nodes[b.0].value;
        let (cin, t, h, wd) = match vx.shape() {
            [c, t, h, w] => (*c, *t, *h, *w),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "conv3d",
                    detail: format!("input must be [C,T,H,W], got {s:?}"),
                })
            }
        };
        let (cout, cin2, kt, kh, kw) = match vw.shape() {
            [co, ci, kt, kh, kw] => (*co, *ci, *kt, *kh, *kw),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "conv3d",
                    detail: format!("weight must be [Co,Ci,kt,k,k], got {s:?}"),
                })
            }
        };
        if kt % 2 == 0 || kh % 2 == 0 || kh != kw {
            return Err(Error::InvalidArgument {
                op: "conv3d",
                detail: format!("kernel must be odd, got {kt}x{kh}x{kw}"),
            });
        }
        if cin != cin2 || vb.shape() != [cout] || stride == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv3d",
                detail: format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    vx.shape(),
                    vw.shape(),
                    vb.shape()
                ),
            });
        }
        let pt = pad.min(kt / 2); // temporal pad never exceeds kt/2
        let ot = (t + 2 * pt - kt) / stride + 1;
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; cout * ot * oh * ow];
        let xd = vx.data();
        let wdat = vw.data();
        let bd = vb.data();
        for co in 0..cout {
            for oz in 0..ot {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bd[co];
                        for ci in 0..cin {
                            for kz in 0..kt {
                                let iz = (oz * stride + kz) as isize - pt as isize;
                                if iz < 0 || iz >= t as isize {
                                    continue;
                                }
                                for ky in 0..kh {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if ix < 0 || ix >= wd as isize {
                                            continue;
                                        }
                                        acc += xd[((ci * t + iz as usize) * h + iy as usize) * wd
                                            + ix as usize]
                                            * wdat[(((co * cin + ci) * kt + kz) * kh + ky) * kw
                                                + kx];
                                    }
                                }
                            }
                        }
                        out[((co * ot + oz) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        let out = Tensor::from_vec(&[cout, ot, oh, ow], out)?;
        self.push("conv3d", out, Op::Conv3d { x, w, b, stride, pad })
    }

    /// Pool along `axis` with the given window: keeps the original signed
    /// value of maximal absolute value, first occurrence on ties.
    pub fn abs_pool_axis(&mut self, a: NodeId, axis: usize, window: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        let shape = v.shape().to_vec();
        if axis >= shape.len() || window == 0 {
            return Err(Error::InvalidArgument {
                op: "abs_pool_axis",
                detail: format!("axis {axis}, window {window}, shape {shape:?}"),
            });
        }
        if shape[axis] % window != 0 {
            return Err(Error::InvalidArgument {
                op: "abs_pool_axis",
                detail: format!("window {window} does not divide extent {}", shape[axis]),
            });
        }
        let len = shape[axis];
        let olen = len / window;
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = olen;
        let mut out = vec![0.0; outer * olen * inner];
        let mut argmax = vec![0usize; out.len()];
        let data = v.data();
        for o in 0..outer {
            for oi in 0..olen {
                for i in 0..inner {
                    let mut best_off = o * len * inner + (oi * window) * inner + i;
                    let mut best = data[best_off];
                    for k in 1..window {
                        let off = o * len * inner + (oi * window + k) * inner + i;
                        if data[off].abs() > best.abs() {
                            best = data[off];
                            best_off = off;
                        }
                    }
                    let oo = o * olen * inner + oi * inner + i;
                    out[oo] = best;
                    argmax[oo] = best_off;
                }
            }
        }
        let out = Tensor::from_vec(&out_shape, out)?;
        self.push("abs_pool_axis", out, Op::AbsPoolAxis { x: a, argmax })
    }

    /// 2x2 signed max-abs pooling over the last two axes.
    pub fn abs_pool2(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        let shape = v.shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::InvalidArgument {
                op: "abs_pool2",
                detail: format!("need rank >= 2, got {shape:?}"),
            });
        }
        let h = shape[shape.len() - 2];
        let w = shape[shape.len() - 1];
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArgument {
                op: "abs_pool2",
                detail: format!("spatial dims {h}x{w} not divisible by 2"),
            });
        }
        let lead: usize = shape[..shape.len() - 2].iter().product();
        let (oh, ow) = (h / 2, w / 2);
        let mut out_shape = shape.clone();
        out_shape[shape.len() - 2] = oh;
        out_shape[shape.len() - 1] = ow;
        let mut out = vec![0.0; lead * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        let data = v.data();
        for l in 0..lead {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_off = l * h * w + (2 * oy) * w + 2 * ox;
                    let mut best = data[best_off];
                    for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                        let off = l * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if data[off].abs() > best.abs() {
                            best = data[off];
                            best_off = off;
                        }
                    }
                    let oo = l * oh * ow + oy * ow + ox;
                    out[oo] = best;
                    argmax[oo] = best_off;
                }
            }
        }
        let out = Tensor::from_vec(&out_shape, out)?;
        self.push("abs_pool2", out, Op::AbsPool2 { x: a, argmax })
    }

    /// Bilinear upsampling of the last two axes by an integer factor
    /// (half-pixel centers, clamped borders; constants are preserved).
    pub fn bilinear_upsample(&mut self, a: NodeId, factor: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        let shape = v.shape().to_vec();
        if shape.len() < 2 || factor == 0 {
            return Err(Error::InvalidArgument {
                op: "bilinear_upsample",
                detail: format!("shape {shape:?}, factor {factor}"),
            });
        }
        let h = shape[shape.len() - 2];
        let w = shape[shape.len() - 1];
        let lead: usize = shape[..shape.len() - 2].iter().product();
        let (oh, ow) = (h * factor, w * factor);
        let mut out_shape = shape.clone();
        out_shape[shape.len() - 2] = oh;
        out_shape[shape.len() - 1] = ow;
        let mut out = vec![0.0; lead * oh * ow];
        let data = v.data();
        for l in 0..lead {
            let plane = &data[l * h * w..(l + 1) * h * w];
            for oy in 0..oh {
                let sy = (oy as f64 + 0.5) / factor as f64 - 0.5;
                for ox in 0..ow {
                    let sx = (ox as f64 + 0.5) / factor as f64 - 0.5;
                    let (val, _, _) = bilinear_at(plane, h, w, sy, sx);
                    out[l * oh * ow + oy * ow + ox] = val;
                }
            }
        }
        let out = Tensor::from_vec(&out_shape, out)?;
        self.push("bilinear_upsample", out, Op::BilinearUp(a, factor))
    }

    /// Deformable kernel synthesis.
    ///
    /// `frames: [4,C,H,W]`, `weights: [4,F,H,W]` (convex over all 4*F taps),
    /// `offsets: [4,F,2,H,W]` (dy, dx in pixels), `taps`: F fixed grid
    /// positions. Output `[C,H,W]`.
    pub fn deform_synth(
        &mut self,
        frames: NodeId,
        weights: NodeId,
        offsets: NodeId,
        taps: &[(f64, f64)],
    ) -> Result<NodeId> {
        let vf = &self.nodes[frames.0].value;
        let vw = &self.nodes[weights.0].value;
        let vo = &self.nodes[offsets.0].value;
        let (nf, c, h, w) = match vf.shape() {
            [nf, c, h, w] => (*nf, *c, *h, *w),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "deform_synth",
                    detail: format!("frames must be [4,C,H,W], got {s:?}"),
                })
            }
        };
        let f = taps.len();
        if nf != 4
            || vw.shape() != [4, f, h, w]
            || vo.shape() != [4, f, 2, h, w]
        {
            return Err(Error::ShapeMismatch {
                op: "deform_synth",
                detail: format!(
                    "frames {:?}, weights {:?}, offsets {:?}, taps {f}",
                    vf.shape(),
                    vw.shape(),
                    vo.shape()
                ),
            });
        }
        let fd = vf.data();
        let wd = vw.data();
        let od = vo.data();
        let hw = h * w;
        let mut out = vec![0.0; c * hw];
        for i in 0..4 {
            for (k, &(ty, tx)) in taps.iter().enumerate() {
                let wbase = (i * f + k) * hw;
                let obase = (i * f + k) * 2 * hw;
                for y in 0..h {
                    for x in 0..w {
                        let p = y * w + x;
                        let wv = wd[wbase + p];
                        let sy = y as f64 + ty + od[obase + p];
                        let sx = x as f64 + tx + od[obase + hw + p];
                        for ci in 0..c {
                            let plane = &fd[(i * c + ci) * hw..(i * c + ci + 1) * hw];
                            let (val, _, _) = bilinear_at(plane, h, w, sy, sx);
                            out[ci * hw + p] += wv * val;
                        }
                    }
                }
            }
        }
        let out = Tensor::from_vec(&[c, h, w], out)?;
        self.push(
            "deform_synth",
            out,
            Op::DeformSynth {
                frames,
                weights,
                offsets,
                taps: taps.to_vec(),
            },
        )
    }

    /// Reverse pass from a scalar loss. Accumulates gradients for every node;
    /// `requires_grad` leaves keep theirs readable via [`Graph::grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss.0].value.shape().is_empty() {
            return Err(Error::InvalidArgument {
                op: "backward",
                detail: format!(
                    "loss must be scalar, got shape {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..n).rev() {
            let gy = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(id, &gy, &mut grads)?;
            // restore: keep gradients on every node for inspection
            grads[id] = Some(gy);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
        Ok(())
    }

    /// Gradient of the last backward pass w.r.t. the given node.
    pub fn grad(&self, id: NodeId) -> Option<Tensor> {
        self.nodes[id.0].grad.as_ref().map(|g| {
            Tensor::from_vec(self.nodes[id.0].value.shape(), g.clone()).expect("grad shape")
        })
    }

    /// Gradient w.r.t. a parameter; zero if the parameter never entered the
    /// graph or was unreachable from the loss.
    pub fn param_grad(&self, id: ParamId) -> Tensor {
        match self.param_nodes[id.index()] {
            Some(n) => self
                .grad(n)
                .unwrap_or_else(|| Tensor::zeros(self.params.get(id).shape())),
            None => Tensor::zeros(self.params.get(id).shape()),
        }
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], node: NodeId, len: usize, f: impl FnOnce(&mut [f64])) {
        let slot = grads[node.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    #[allow(clippy::too_many_lines)]
    fn backward_node(
        &self,
        id: usize,
        gy: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let node = &self.nodes[id];
        let val = |n: NodeId| &self.nodes[n.0].value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                let n = val(*a).numel();
                Self::accumulate(grads, *a, n, |g| {
                    for (gi, &y) in g.iter_mut().zip(gy) {
                        *gi += y;
                    }
                });
                Self::accumulate(grads, *b, n, |g| {
                    for (gi, &y) in g.iter_mut().zip(gy) {
                        *gi += y;
                    }
                });
            }
            Op::Sub(a, b) => {
                let n = val(*a).numel();
                Self::accumulate(grads, *a, n, |g| {
                    for (gi, &y) in g.iter_mut().zip(gy) {
                        *gi += y;
                    }
                });
                Self::accumulate(grads, *b, n, |g| {
                    for (gi, &y) in g.iter_mut().zip(gy) {
                        *gi -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let n = va.numel();
                let (ad, bd) = (va.data(), vb.data());
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        g[i] += gy[i] * bd[i];
                    }
                });
                Self::accumulate(grads, *b, n, |g| {
                    for i in 0..n {
                        g[i] += gy[i] * ad[i];
                    }
                });
            }
            Op::Scale(a, c) => {
                let n = val(*a).numel();
                let c = *c;
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        g[i] += gy[i] * c;
                    }
                });
            }
            Op::Relu(a) => {
                let xd = val(*a).data();
                let n = xd.len();
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        if xd[i] > 0.0 {
                            g[i] += gy[i];
                        }
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let xd = val(*a).data();
                let n = xd.len();
                let s = *slope;
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        g[i] += gy[i] * if xd[i] >= 0.0 { 1.0 } else { s };
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yd = node.value.data();
                let n = yd.len();
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        g[i] += gy[i] * yd[i] * (1.0 - yd[i]);
                    }
                });
            }
            Op::Tanh(a) => {
                let yd = node.value.data();
                let n = yd.len();
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        g[i] += gy[i] * (1.0 - yd[i] * yd[i]);
                    }
                });
            }
            Op::Abs(a) => {
                // subgradient 0 at exact zero
                let xd = val(*a).data();
                let n = xd.len();
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        g[i] += gy[i] * if xd[i] > 0.0 {
                            1.0
                        } else if xd[i] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let xd = val(*a).data();
                let n = xd.len();
                let (lo, hi) = (*lo, *hi);
                Self::accumulate(grads, *a, n, |g| {
                    for i in 0..n {
                        if xd[i] >= lo && xd[i] <= hi {
                            g[i] += gy[i];
                        }
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let y = node.value.data();
                let shape = node.value.shape();
                let len = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                let n = y.len();
                Self::accumulate(grads, *a, n, |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let mut dot = 0.0;
                            for k in 0..len {
                                let off = base + k * inner;
                                dot += gy[off] * y[off];
                            }
                            for k in 0..len {
                                let off = base + k * inner;
                                g[off] += y[off] * (gy[off] - dot);
                            }
                        }
                    }
                });
            }
            Op::Mean(a) => {
                let n = val(*a).numel();
                let g0 = gy[0] / n as f64;
                Self::accumulate(grads, *a, n, |g| {
                    for gi in g.iter_mut() {
                        *gi += g0;
                    }
                });
            }
            Op::Reshape(a) => {
                let n = val(*a).numel();
                Self::accumulate(grads, *a, n, |g| {
                    for (gi, &y) in g.iter_mut().zip(gy) {
                        *gi += y;
                    }
                });
            }
            Op::Permute(a, perm) => {
                let in_shape = val(*a).shape();
                let out_shape = node.value.shape();
                let in_strides = strides(in_shape);
                let rank = in_shape.len();
                let n = val(*a).numel();
                let mut idx = vec![0usize; rank];
                Self::accumulate(grads, *a, n, |g| {
                    for (out_off, &y) in gy.iter().enumerate() {
                        let _ = out_off;
                        let mut in_off = 0;
                        for d in 0..rank {
                            in_off += idx[d] * in_strides[perm[d]];
                        }
                        g[in_off] += y;
                        for d in (0..rank).rev() {
                            idx[d] += 1;
                            if idx[d] < out_shape[d] {
                                break;
                            }
                            idx[d] = 0;
                        }
                    }
                });
            }
            Op::SliceAxis0(a, from, _to) => {
                let in_shape = val(*a).shape();
                let inner: usize = in_shape[1..].iter().product();
                let n = val(*a).numel();
                let start = from * inner;
                Self::accumulate(grads, *a, n, |g| {
                    for (i, &y) in gy.iter().enumerate() {
                        g[start + i] += y;
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let vx = val(*x);
                let vw = val(*w);
                let (k, nn) = (vw.shape()[0], vw.shape()[1]);
                let batch = vx.numel() / k;
                let xd = vx.data();
                let wd = vw.data();
                Self::accumulate(grads, *x, vx.numel(), |g| {
                    for bi in 0..batch {
                        for ki in 0..k {
                            let mut acc = 0.0;
                            let wrow = &wd[ki * nn..(ki + 1) * nn];
                            let yrow = &gy[bi * nn..(bi + 1) * nn];
                            for ni in 0..nn {
                                acc += yrow[ni] * wrow[ni];
                            }
                            g[bi * k + ki] += acc;
                        }
                    }
                });
                Self::accumulate(grads, *w, k * nn, |g| {
                    for bi in 0..batch {
                        let yrow = &gy[bi * nn..(bi + 1) * nn];
                        for ki in 0..k {
                            let xv = xd[bi * k + ki];
                            let grow = &mut g[ki * nn..(ki + 1) * nn];
                            for ni in 0..nn {
                                grow[ni] += xv * yrow[ni];
                            }
                        }
                    }
                });
                Self::accumulate(grads, *b, nn, |g| {
                    for bi in 0..batch {
                        let yrow = &gy[bi * nn..(bi + 1) * nn];
                        for ni in 0..nn {
                            g[ni] += yrow[ni];
                        }
                    }
                });
            }
            Op::MatmulBB(a, b) => {
                let va = val(*a);
                let vb = val(*b);
                let (bs, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
                let nn = vb.shape()[2];
                let ad = va.data();
                let bd = vb.data();
                Self::accumulate(grads, *a, va.numel(), |g| {
                    for bi in 0..bs {
                        for mi in 0..m {
                            let yrow = &gy[bi * m * nn + mi * nn..bi * m * nn + (mi + 1) * nn];
                            for ki in 0..k {
                                let brow = &bd[bi * k * nn + ki * nn..bi * k * nn + (ki + 1) * nn];
                                let mut acc = 0.0;
                                for ni in 0..nn {
                                    acc += yrow[ni] * brow[ni];
                                }
                                g[bi * m * k + mi * k + ki] += acc;
                            }
                        }
                    }
                });
                Self::accumulate(grads, *b, vb.numel(), |g| {
                    for bi in 0..bs {
                        for mi in 0..m {
                            let yrow = &gy[bi * m * nn + mi * nn..bi * m * nn + (mi + 1) * nn];
                            let arow = &ad[bi * m * k + mi * k..bi * m * k + (mi + 1) * k];
                            for ki in 0..k {
                                let grow = &mut g[bi * k * nn + ki * nn..bi * k * nn + (ki + 1) * nn];
                                let av = arow[ki];
                                for ni in 0..nn {
                                    grow[ni] += av * yrow[ni];
                                }
                            }
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let vx = val(*x);
                let vw = val(*w);
                let (cin, h, wd_) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
                let (cout, kh, kw) = (vw.shape()[0], vw.shape()[2], vw.shape()[3]);
                let (oh, ow) = (node.value.shape()[1], node.value.shape()[2]);
                let xd = vx.data();
                let wdat = vw.data();
                let (stride, pad) = (*stride, *pad);
                Self::accumulate(grads, *b, cout, |g| {
                    for co in 0..cout {
                        let mut acc = 0.0;
                        for p in 0..oh * ow {
                            acc += gy[co * oh * ow + p];
                        }
                        g[co] += acc;
                    }
                });
                Self::accumulate(grads, *w, vw.numel(), |g| {
                    for co in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gyv = gy[(co * oh + oy) * ow + ox];
                                if gyv == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if ix < 0 || ix >= wd_ as isize {
                                                continue;
                                            }
                                            g[((co * cin + ci) * kh + ky) * kw + kx] += gyv
                                                * xd[(ci * h + iy as usize) * wd_ + ix as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                Self::accumulate(grads, *x, vx.numel(), |g| {
                    for co in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gyv = gy[(co * oh + oy) * ow + ox];
                                if gyv == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if ix < 0 || ix >= wd_ as isize {
                                                continue;
                                            }
                                            g[(ci * h + iy as usize) * wd_ + ix as usize] += gyv
                                                * wdat[((co * cin + ci) * kh + ky) * kw + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Conv3d { x, w, b, stride, pad } => {
                let vx = val(*x);
                let vw = val(*w);
                let (cin, t, h, wd_) = (
                    vx.shape()[0],
                    vx.shape()[1],
                    vx.shape()[2],
                    vx.shape()[3],
                );
                let (cout, kt, kh, kw) = (
                    vw.shape()[0],
                    vw.shape()[2],
                    vw.shape()[3],
                    vw.shape()[4],
                );
                let (ot, oh, ow) = (
                    node.value.shape()[1],
                    node.value.shape()[2],
                    node.value.shape()[3],
                );
                let xd = vx.data();
                let wdat = vw.data();
                let (stride, pad) = (*stride, *pad);
                let pt = pad.min(kt / 2);
                Self::accumulate(grads, *b, cout, |g| {
                    for co in 0..cout {
                        let mut acc = 0.0;
                        for p in 0..ot * oh * ow {
                            acc += gy[co * ot * oh * ow + p];
                        }
                        g[co] += acc;
                    }
                });
                let mut gw = vec![0.0; vw.numel()];
                let mut gx = vec![0.0; vx.numel()];
                for co in 0..cout {
                    for oz in 0..ot {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gyv = gy[((co * ot + oz) * oh + oy) * ow + ox];
                                if gyv == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for kz in 0..kt {
                                        let iz = (oz * stride + kz) as isize - pt as isize;
                                        if iz < 0 || iz >= t as isize {
                                            continue;
                                        }
                                        for ky in 0..kh {
                                            let iy = (oy * stride + ky) as isize - pad as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix =
                                                    (ox * stride + kx) as isize - pad as isize;
                                                if ix < 0 || ix >= wd_ as isize {
                                                    continue;
                                                }
                                                let xoff = ((ci * t + iz as usize) * h
                                                    + iy as usize)
                                                    * wd_
                                                    + ix as usize;
                                                let woff = (((co * cin + ci) * kt + kz) * kh
                                                    + ky)
                                                    * kw
                                                    + kx;
                                                gw[woff] += gyv * xd[xoff];
                                                gx[xoff] += gyv * wdat[woff];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Self::accumulate(grads, *w, gw.len(), |g| {
                    for (gi, v) in g.iter_mut().zip(&gw) {
                        *gi += v;
                    }
                });
                Self::accumulate(grads, *x, gx.len(), |g| {
                    for (gi, v) in g.iter_mut().zip(&gx) {
                        *gi += v;
                    }
                });
            }
            Op::AbsPoolAxis { x, argmax } | Op::AbsPool2 { x, argmax } => {
                let n = val(*x).numel();
                Self::accumulate(grads, *x, n, |g| {
                    for (oi, &ioff) in argmax.iter().enumerate() {
                        g[ioff] += gy[oi];
                    }
                });
            }
            Op::BilinearUp(a, factor) => {
                let in_shape = val(*a).shape();
                let h = in_shape[in_shape.len() - 2];
                let w = in_shape[in_shape.len() - 1];
                let lead: usize = in_shape[..in_shape.len() - 2].iter().product();
                let f = *factor;
                let (oh, ow) = (h * f, w * f);
                let n = val(*a).numel();
                Self::accumulate(grads, *a, n, |g| {
                    for l in 0..lead {
                        for oy in 0..oh {
                            let sy = ((oy as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (h - 1) as f64);
                            let y0 = (sy.floor() as usize).min(h - 1);
                            let y1 = (y0 + 1).min(h - 1);
                            let fy = sy - y0 as f64;
                            for ox in 0..ow {
                                let sx =
                                    ((ox as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                                let x0 = (sx.floor() as usize).min(w - 1);
                                let x1 = (x0 + 1).min(w - 1);
                                let fx = sx - x0 as f64;
                                let gv = gy[l * oh * ow + oy * ow + ox];
                                g[l * h * w + y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                                g[l * h * w + y0 * w + x1] += gv * (1.0 - fy) * fx;
                                g[l * h * w + y1 * w + x0] += gv * fy * (1.0 - fx);
                                g[l * h * w + y1 * w + x1] += gv * fy * fx;
                            }
                        }
                    }
                });
            }
            Op::DeformSynth {
                frames,
                weights,
                offsets,
                taps,
            } => {
                let vf = val(*frames);
                let vw = val(*weights);
                let vo = val(*offsets);
                let c = vf.shape()[1];
                let h = vf.shape()[2];
                let w = vf.shape()[3];
                let f = taps.len();
                let hw = h * w;
                let fd = vf.data();
                let wd = vw.data();
                let od = vo.data();
                let mut gframes = vec![0.0; vf.numel()];
                let mut gweights = vec![0.0; vw.numel()];
                let mut goffsets = vec![0.0; vo.numel()];
                for i in 0..4 {
                    for (k, &(ty, tx)) in taps.iter().enumerate() {
                        let wbase = (i * f + k) * hw;
                        let obase = (i * f + k) * 2 * hw;
                        for y in 0..h {
                            for x in 0..w {
                                let p = y * w + x;
                                let wv = wd[wbase + p];
                                let sy = y as f64 + ty + od[obase + p];
                                let sx = x as f64 + tx + od[obase + hw + p];
                                let syc = sy.clamp(0.0, (h - 1) as f64);
                                let sxc = sx.clamp(0.0, (w - 1) as f64);
                                let y0 = (syc.floor() as usize).min(h - 1);
                                let x0 = (sxc.floor() as usize).min(w - 1);
                                let y1 = (y0 + 1).min(h - 1);
                                let x1 = (x0 + 1).min(w - 1);
                                let fy = syc - y0 as f64;
                                let fx = sxc - x0 as f64;
                                let mut gw_acc = 0.0;
                                let mut gdy_acc = 0.0;
                                let mut gdx_acc = 0.0;
                                for ci in 0..c {
                                    let gv = gy[ci * hw + p];
                                    if gv == 0.0 && wv == 0.0 {
                                        continue;
                                    }
                                    let pb = (i * c + ci) * hw;
                                    let v00 = fd[pb + y0 * w + x0];
                                    let v01 = fd[pb + y0 * w + x1];
                                    let v10 = fd[pb + y1 * w + x0];
                                    let v11 = fd[pb + y1 * w + x1];
                                    let top = v00 + fx * (v01 - v00);
                                    let bot = v10 + fx * (v11 - v10);
                                    let sampled = top + fy * (bot - top);
                                    gw_acc += gv * sampled;
                                    if gv != 0.0 {
                                        let gwv = gv * wv;
                                        gframes[pb + y0 * w + x0] +=
                                            gwv * (1.0 - fy) * (1.0 - fx);
                                        gframes[pb + y0 * w + x1] += gwv * (1.0 - fy) * fx;
                                        gframes[pb + y1 * w + x0] += gwv * fy * (1.0 - fx);
                                        gframes[pb + y1 * w + x1] += gwv * fy * fx;
                                        if sy == syc {
                                            gdy_acc += gwv * (bot - top);
                                        }
                                        if sx == sxc {
                                            gdx_acc += gwv
                                                * ((v01 - v00) + fy * ((v11 - v10) - (v01 - v00)));
                                        }
                                    }
                                }
                                gweights[wbase + p] += gw_acc;
                                goffsets[obase + p] += gdy_acc;
                                goffsets[obase + hw + p] += gdx_acc;
                            }
                        }
                    }
                }
                Self::accumulate(grads, *frames, gframes.len(), |g| {
                    for (gi, v) in g.iter_mut().zip(&gframes) {
                        *gi += v;
                    }
                });
                Self::accumulate(grads, *weights, gweights.len(), |g| {
                    for (gi, v) in g.iter_mut().zip(&gweights) {
                        *gi += v;
                    }
                });
                Self::accumulate(grads, *offsets, goffsets.len(), |g| {
                    for (gi, v) in g.iter_mut().zip(&goffsets) {
                        *gi += v;
                    }
                });
            }
        }
        Ok(())
    }
}
