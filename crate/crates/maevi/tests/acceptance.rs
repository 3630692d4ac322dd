//! Acceptance gate: one test per release criterion, each printing a single
//! `[PASS]`/`[FAIL]` line with the measured numbers.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::time::Instant;

use maevi::encoder::EncoderConfig;
use maevi::event_io::{Event, EventStream};
use maevi::event_sim::{make_sample, vary_scene, SceneSpec};
use maevi::loss_metrics::{masked_psnr, motion_aware_loss, psnr, ssim, LossConfig};
use maevi::motion_filter::{apply_filter, loss_filter, region_filter, LossFilter, DEFAULT_SIGMAS};
use maevi::numcheck;
use maevi::synthesis::{InterpolationModel, ModelConfig, SynBlock};
use maevi::tensor::graph::Graph;
use maevi::tensor::params::ParamStore;
use maevi::trainer::{adamax_step, infer, prepare_sample, train, TrainConfig};
use maevi::voxelizer::{voxelize, voxelize_sample};
use maevi::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(ok: bool, name: &str, detail: &str) {
    println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn random_tensor(shape: &[usize], rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(lo..hi);
    }
    t
}

/// Lean instantiation of the architecture used by the heavy criteria; same
/// code paths as the default model, smaller widths.
fn lean_config(n_time_bins: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            n_heads: 2,
            embed_dim: 4,
            channels: [3, 4, 5],
            n_time_bins,
        },
        taps_per_side: 3,
        offset_radius: 8.0,
        head_hidden: 6,
    }
}

fn scene_16() -> SceneSpec {
    SceneSpec::parse(
        "width=16\nheight=16\nbackground=0.08\n\
         shape=rect,0.3,0.25,0.2,8,8,2,0,6,4\n",
    )
    .unwrap()
}

// ---------------------------------------------------------------- criterion:
// conv2d/conv3d, abs_pool, voxelize, deformable synthesis, and filter
// application match independent brute-force loop oracles on >= 100 random
// small instances each, max abs diff < 1e-12, in under 60 s.
#[test]
fn oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE97);
    let mut max_diff = 0.0f64;
    let store = ParamStore::new();

    // conv2d
    for _ in 0..100 {
        let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let k = if rng.gen_bool(0.5) { 1 } else { 3 };
        let (h, w) = (rng.gen_range(k..=6), rng.gen_range(k..=6));
        let (stride, pad) = (rng.gen_range(1..=2), rng.gen_range(0..=1));
        let x = random_tensor(&[cin, h, w], &mut rng, -1.0, 1.0);
        let wt = random_tensor(&[cout, cin, k, k], &mut rng, -1.0, 1.0);
        let b = random_tensor(&[cout], &mut rng, -1.0, 1.0);
        let (oh, ow) = ((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1);
        let mut g = Graph::new(&store);
        let (xn, wn, bn) = (g.leaf(&x).unwrap(), g.leaf(&wt).unwrap(), g.leaf(&b).unwrap());
        let out = g.conv2d(xn, wn, bn, stride, pad).unwrap();
        let out = g.value(out);
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.at(&[co]);
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.at(&[ci, iy as usize, ix as usize])
                                        * wt.at(&[co, ci, ky, kx]);
                                }
                            }
                        }
                    }
                    max_diff = max_diff.max((out.at(&[co, oy, ox]) - acc).abs());
                }
            }
        }
    }

    // conv3d (stride 1, same padding — the configuration the model uses)
    for _ in 0..100 {
        let (cin, cout) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let (t, h, w) = (rng.gen_range(3..=4), rng.gen_range(3..=5), rng.gen_range(3..=5));
        let x = random_tensor(&[cin, t, h, w], &mut rng, -1.0, 1.0);
        let wt = random_tensor(&[cout, cin, 3, 3, 3], &mut rng, -1.0, 1.0);
        let b = random_tensor(&[cout], &mut rng, -1.0, 1.0);
        let mut g = Graph::new(&store);
        let (xn, wn, bn) = (g.leaf(&x).unwrap(), g.leaf(&wt).unwrap(), g.leaf(&b).unwrap());
        let out = g.conv3d(xn, wn, bn, 1, 1).unwrap();
        let out = g.value(out);
        for co in 0..cout {
            for oz in 0..t {
                for oy in 0..h {
                    for ox in 0..w {
                        let mut acc = b.at(&[co]);
                        for ci in 0..cin {
                            for kz in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iz = oz as isize + kz - 1;
                                        let iy = oy as isize + ky - 1;
                                        let ix = ox as isize + kx - 1;
                                        if iz >= 0
                                            && iy >= 0
                                            && ix >= 0
                                            && (iz as usize) < t
                                            && (iy as usize) < h
                                            && (ix as usize) < w
                                        {
                                            acc += x.at(&[
                                                ci,
                                                iz as usize,
                                                iy as usize,
                                                ix as usize,
                                            ]) * wt.at(&[
                                                co,
                                                ci,
                                                kz as usize,
                                                ky as usize,
                                                kx as usize,
                                            ]);
                                        }
                                    }
                                }
                            }
                        }
                        max_diff = max_diff.max((out.at(&[co, oz, oy, ox]) - acc).abs());
                    }
                }
            }
        }
    }

    // absPooling, temporal (axis 1, window 2) and spatial 2x2
    for _ in 0..100 {
        let (c, t, h, w) = (
            rng.gen_range(1..=3),
            2 * rng.gen_range(1..=3),
            2 * rng.gen_range(1..=3),
            2 * rng.gen_range(1..=3),
        );
        let x = random_tensor(&[c, t, h, w], &mut rng, -2.0, 2.0);
        let mut g = Graph::new(&store);
        let xn = g.leaf(&x).unwrap();
        let tp = g.abs_pool_axis(xn, 1, 2).unwrap();
        let sp = g.abs_pool2(xn).unwrap();
        let (tp, sp) = (g.value(tp), g.value(sp));
        for ci in 0..c {
            for ti in 0..t / 2 {
                for y in 0..h {
                    for x2 in 0..w {
                        let a = x.at(&[ci, 2 * ti, y, x2]);
                        let b = x.at(&[ci, 2 * ti + 1, y, x2]);
                        let want = if b.abs() > a.abs() { b } else { a };
                        max_diff = max_diff.max((tp.at(&[ci, ti, y, x2]) - want).abs());
                    }
                }
            }
            for ti in 0..t {
                for y in 0..h / 2 {
                    for x2 in 0..w / 2 {
                        let mut want = x.at(&[ci, ti, 2 * y, 2 * x2]);
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let v = x.at(&[ci, ti, 2 * y + dy, 2 * x2 + dx]);
                            if v.abs() > want.abs() {
                                want = v;
                            }
                        }
                        max_diff = max_diff.max((sp.at(&[ci, ti, y, x2]) - want).abs());
                    }
                }
            }
        }
    }

    // voxelize
    for i in 0..100 {
        let (h, w) = (rng.gen_range(4..=10), rng.gen_range(4..=10));
        let n_tb = rng.gen_range(2..=6);
        let n_ev = rng.gen_range(0..=200);
        let mut ts: Vec<u64> = (0..n_ev).map(|_| rng.gen_range(0..=1000)).collect();
        ts.sort_unstable();
        let s = EventStream {
            events: ts
                .into_iter()
                .map(|t| Event {
                    t,
                    x: rng.gen_range(0..w as u32),
                    y: rng.gen_range(0..h as u32),
                    p: if rng.gen_bool(0.5) { 1 } else { -1 },
                })
                .collect(),
            t_start: 0,
            t_end: 1000,
            width: w as u32,
            height: h as u32,
        };
        let v = voxelize(&s, n_tb).unwrap();
        let mut oracle = vec![0.0; n_tb * h * w];
        for e in &s.events {
            let tn = e.t as f64 / 1000.0 * (n_tb - 1) as f64;
            let b0 = tn.floor() as usize;
            let frac = tn - b0 as f64;
            oracle[(b0 * h + e.y as usize) * w + e.x as usize] += e.p as f64 * (1.0 - frac);
            if b0 + 1 < n_tb {
                oracle[((b0 + 1) * h + e.y as usize) * w + e.x as usize] += e.p as f64 * frac;
            }
        }
        for (got, want) in v.data().iter().zip(&oracle) {
            max_diff = max_diff.max((got - want).abs());
        }
        let _ = i;
    }

    // deformable synthesis
    for _ in 0..100 {
        let (c, h, w, f) = (
            rng.gen_range(1..=3),
            rng.gen_range(3..=5),
            rng.gen_range(3..=5),
            rng.gen_range(1..=4),
        );
        let taps: Vec<(f64, f64)> = (0..f)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let frames = random_tensor(&[4, c, h, w], &mut rng, 0.0, 1.0);
        let weights = random_tensor(&[4, f, h, w], &mut rng, 0.0, 1.0);
        let offsets = random_tensor(&[4, f, 2, h, w], &mut rng, -2.0, 2.0);
        let mut g = Graph::new(&store);
        let fr = g.leaf(&frames).unwrap();
        let wn = g.leaf(&weights).unwrap();
        let on = g.leaf(&offsets).unwrap();
        let out = g.deform_synth(fr, wn, on, &taps).unwrap();
        let out = g.value(out);
        let sample = |plane: &[f64], y: f64, x: f64| -> f64 {
            let yc = y.clamp(0.0, (h - 1) as f64);
            let xc = x.clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (yc.floor() as usize, xc.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (yc - y0 as f64, xc - x0 as f64);
            plane[y0 * w + x0] * (1.0 - fy) * (1.0 - fx)
                + plane[y0 * w + x1] * (1.0 - fy) * fx
                + plane[y1 * w + x0] * fy * (1.0 - fx)
                + plane[y1 * w + x1] * fy * fx
        };
        let hw = h * w;
        for ci in 0..c {
            for y in 0..h {
                for x2 in 0..w {
                    let mut acc = 0.0;
                    for fi in 0..4 {
                        for (k, &(ty, tx)) in taps.iter().enumerate() {
                            let wv = weights.data()[(fi * f + k) * hw + y * w + x2];
                            let dy = offsets.data()[(fi * f + k) * 2 * hw + y * w + x2];
                            let dx = offsets.data()[(fi * f + k) * 2 * hw + hw + y * w + x2];
                            let plane = &frames.data()[(fi * c + ci) * hw..(fi * c + ci + 1) * hw];
                            acc += wv * sample(plane, y as f64 + ty + dy, x2 as f64 + tx + dx);
                        }
                    }
                    max_diff = max_diff.max((out.at(&[ci, y, x2]) - acc).abs());
                }
            }
        }
    }

    // region-filter application
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(3..=8), rng.gen_range(3..=8));
        let frames: [Tensor; 4] = std::array::from_fn(|_| {
            random_tensor(&[3, h, w], &mut rng, 0.0, 1.0)
        });
        let filter = maevi::motion_filter::RegionFilter {
            weights: random_tensor(&[4, h, w], &mut rng, 0.0, 1.0),
            sigmas: DEFAULT_SIGMAS.to_vec(),
        };
        let got = apply_filter(&frames, &filter).unwrap();
        for i in 0..4 {
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        let want = frames[i].at(&[c, y, x]) * filter.weights.at(&[i, y, x]);
                        max_diff = max_diff.max((got[i].at(&[c, y, x]) - want).abs());
                    }
                }
            }
        }
    }

    let secs = start.elapsed().as_secs_f64();
    report(
        max_diff < 1e-12 && secs < 60.0,
        "oracle equivalence",
        &format!("6 op families x 100 random instances, max abs diff {max_diff:.2e}, {secs:.1}s"),
    );
}

// ---------------------------------------------------------------- criterion:
// every trainable path (encoder, synblocks, loss) passes central
// finite-difference checks at 16x16 / 4 time bins, rel err < 1e-5, < 5 min.
#[test]
fn gradient_suite() {
    let start = Instant::now();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let model = InterpolationModel::new(&mut store, lean_config(4), &mut rng).unwrap();
    // move the zero-init heads off their symmetric point
    for id in store.ids() {
        if store.name(id).ends_with("out.w") || store.name(id).ends_with("out.b") {
            for v in store.get_mut(id).data_mut() {
                *v = rng.gen_range(-0.05..0.05);
            }
        }
    }
    let sample = make_sample(&scene_16()).unwrap();
    let grid = voxelize_sample(&sample, 4).unwrap();
    let region = region_filter(&grid, &DEFAULT_SIGMAS).unwrap();
    let lf = loss_filter(&region);
    // smooth target far from every prediction value: no L1 kinks under the
    // finite-difference step
    let gt = Tensor::filled(&[3, 16, 16], 0.5);

    let loss_of = |store: &ParamStore| -> (f64, Vec<Tensor>) {
        let mut g = Graph::new(store);
        let out = model.forward(&mut g, &sample.frames, &grid.data, &region).unwrap();
        let gt_n = g.leaf(&gt).unwrap();
        let loss = motion_aware_loss(&mut g, out.final_frame, gt_n, &lf, LossConfig::default())
            .unwrap();
        g.backward(loss).unwrap();
        let grads = store.ids().map(|id| g.param_grad(id)).collect();
        (g.value(loss).data()[0], grads)
    };
    let (_, grads) = loss_of(&store);

    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    let mut probe = ChaCha8Rng::seed_from_u64(22);
    for id in store.ids() {
        let n = store.get(id).numel();
        let indices: Vec<usize> = (0..4.min(n)).map(|_| probe.gen_range(0..n)).collect();
        let base = store.get(id).data().to_vec();
        let err = numcheck::max_grad_rel_err_rich(
            |d| {
                let mut s2 = store.clone();
                s2.get_mut(id).data_mut().copy_from_slice(d);
                loss_of(&s2).0
            },
            &base,
            grads[id.index()].data(),
            &indices,
            1e-5,
        );
        if err > worst {
            worst = err;
            worst_name = store.name(id).to_string();
        }
    }

    // loss path w.r.t. the prediction itself
    let mut rng2 = ChaCha8Rng::seed_from_u64(23);
    let pred = random_tensor(&[3, 16, 16], &mut rng2, 0.1, 0.4);
    let analytic = {
        let mut g = Graph::new(&store);
        let p = g.leaf_grad(&pred).unwrap();
        let t = g.leaf(&gt).unwrap();
        let l = motion_aware_loss(&mut g, p, t, &lf, LossConfig::default()).unwrap();
        g.backward(l).unwrap();
        g.grad(p).unwrap()
    };
    let indices: Vec<usize> = (0..pred.numel()).step_by(7).collect();
    let err = numcheck::max_grad_rel_err(
        |d| {
            let store2 = ParamStore::new();
            let mut g = Graph::new(&store2);
            let p = g.leaf(&Tensor::from_vec(&[3, 16, 16], d.to_vec()).unwrap()).unwrap();
            let t = g.leaf(&gt).unwrap();
            let l = motion_aware_loss(&mut g, p, t, &lf, LossConfig::default()).unwrap();
            g.value(l).data()[0]
        },
        pred.data(),
        analytic.data(),
        &indices,
        1e-6,
    );
    if err > worst {
        worst = err;
        worst_name = "loss/pred".to_string();
    }

    let secs = start.elapsed().as_secs_f64();
    report(
        worst < 1e-5 && secs < 300.0,
        "gradient suite",
        &format!(
            "{} parameter tensors + loss path, max rel err {worst:.2e} ({worst_name}), {secs:.1}s",
            store.len()
        ),
    );
}

// ---------------------------------------------------------------- criterion:
// with constant input frames of value v, pre-clamp synthesis output equals v
// to < 1e-9 for arbitrary predicted kernels (softmax convexity by test).
#[test]
fn convexity_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let v = 0.37;
    let mut worst = 0.0f64;
    for radius in [8.0, 4.0, 2.0] {
        for trial in 0..10 {
            let mut store = ParamStore::new();
            let block = SynBlock::new(&mut store, "b", 5, 6, 3, radius, &mut rng);
            // arbitrary kernels: randomize every parameter incl. the head
            for id in store.ids() {
                for p in store.get_mut(id).data_mut() {
                    *p = rng.gen_range(-1.5..1.5);
                }
            }
            let feats = random_tensor(&[5, 8, 8], &mut rng, -2.0, 2.0);
            let frames = Tensor::filled(&[4, 3, 8, 8], v);
            let mut g = Graph::new(&store);
            let fe = g.leaf(&feats).unwrap();
            let fr = g.leaf(&frames).unwrap();
            let out = block.forward(&mut g, fe, fr).unwrap();
            for &o in g.value(out.image).data() {
                worst = worst.max((o - v).abs());
            }
            let _ = trial;
        }
    }
    report(
        worst < 1e-9,
        "convexity invariant",
        &format!("constant frames v={v}, 30 random kernels, max |out - v| = {worst:.2e}"),
    );
}

// ---------------------------------------------------------------- criterion:
// constructed tensors with L_filtered = 1, L_full = 2, alpha = 0.6 give
// 1.4 +- 1e-12; linearity in alpha at {0, 0.5, 1}.
#[test]
fn loss_formula() {
    let store = ParamStore::new();
    let eval = |alpha: f64, pred: &Tensor, gt: &Tensor, lf: &LossFilter| -> f64 {
        let mut g = Graph::new(&store);
        let p = g.leaf(pred).unwrap();
        let t = g.leaf(gt).unwrap();
        let l = motion_aware_loss(&mut g, p, t, lf, LossConfig { alpha }).unwrap();
        g.value(l).data()[0]
    };
    // |pred - gt| = 2 everywhere and filter 0.5: L_full = 2, L_filtered = 1
    let pred = Tensor::filled(&[1, 2, 2], 2.0);
    let gt = Tensor::zeros(&[1, 2, 2]);
    let lf = LossFilter {
        weights: Tensor::filled(&[2, 2], 0.5),
    };
    let v = eval(0.6, &pred, &gt, &lf);
    let d14 = (v - 1.4).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let rp = random_tensor(&[3, 5, 5], &mut rng, 0.0, 1.0);
    let rg = random_tensor(&[3, 5, 5], &mut rng, 0.0, 1.0);
    let rlf = LossFilter {
        weights: random_tensor(&[5, 5], &mut rng, 0.0, 1.0),
    };
    let (l0, l5, l1) = (
        eval(0.0, &rp, &rg, &rlf),
        eval(0.5, &rp, &rg, &rlf),
        eval(1.0, &rp, &rg, &rlf),
    );
    let lin = (l5 - 0.5 * (l0 + l1)).abs();
    report(
        d14 < 1e-12 && lin < 1e-12,
        "loss formula",
        &format!("value {v:.15} (|err| {d14:.2e}), alpha-linearity residual {lin:.2e}"),
    );
}

// ---------------------------------------------------------------- criterion:
// per-interval voxel sum equals the signed event count on 100 simulator
// streams.
#[test]
fn voxel_mass_conservation() {
    let base = SceneSpec::parse(
        "width=24\nheight=24\nbackground=0.15\n\
         shape=rect,0.7,0.6,0.5,12,12,3,1,8,6\n\
         shape=disk,0.3,0.8,0.4,6,18,-2,-2,3\n",
    )
    .unwrap();
    let mut checked = 0;
    let mut max_diff = 0.0f64;
    let mut sample_idx = 0;
    while checked < 100 {
        let spec = vary_scene(&base, 51, sample_idx);
        sample_idx += 1;
        let sample = make_sample(&spec).unwrap();
        let grid = voxelize_sample(&sample, 6).unwrap();
        let hw = 24 * 24;
        for i in 0..4 {
            let sum: f64 = grid.data.data()[i * 6 * hw..(i + 1) * 6 * hw].iter().sum();
            max_diff = max_diff.max((sum - sample.intervals[i].signed_count() as f64).abs());
            checked += 1;
        }
    }
    report(
        max_diff < 1e-9,
        "voxel mass conservation",
        &format!("{checked} streams, max |voxel sum - signed count| = {max_diff:.2e}"),
    );
}

// ---------------------------------------------------------------- criterion:
// rectangle moving 4 px/gap at 64x64: mean filter weight within 2 px of
// edges >= 5x the mean weight in the far background.
#[test]
fn motion_filter_localization() {
    let spec = SceneSpec::parse(
        "width=64\nheight=64\nbackground=0.1\n\
         shape=rect,0.8,0.8,0.8,32,32,4,0,16,12\n",
    )
    .unwrap();
    let sample = make_sample(&spec).unwrap();
    let grid = voxelize_sample(&sample, 8).unwrap();
    let lf = loss_filter(&region_filter(&grid, &DEFAULT_SIGMAS).unwrap());

    // near = within 2 px of any edge of the rectangle in frames -1 or 1
    // (the two intervals feeding the loss filter); far = > 8 px from both
    let near_a = maevi::event_sim::edge_mask(&sample.frames[1], 2);
    let near_b = maevi::event_sim::edge_mask(&sample.frames[2], 2);
    let far_a = maevi::event_sim::edge_mask(&sample.frames[1], 8);
    let far_b = maevi::event_sim::edge_mask(&sample.frames[2], 8);
    let (mut near_sum, mut near_n, mut far_sum, mut far_n) = (0.0, 0usize, 0.0, 0usize);
    for (i, &wv) in lf.weights.data().iter().enumerate() {
        if near_a[i] || near_b[i] {
            near_sum += wv;
            near_n += 1;
        } else if !far_a[i] && !far_b[i] {
            far_sum += wv;
            far_n += 1;
        }
    }
    let near_mean = near_sum / near_n as f64;
    let far_mean = far_sum / far_n as f64;
    let ratio = if far_mean > 0.0 {
        near_mean / far_mean
    } else {
        f64::INFINITY
    };
    report(
        ratio >= 5.0,
        "motion-filter localization",
        &format!("near-edge mean {near_mean:.4}, far mean {far_mean:.6}, ratio {ratio:.1}"),
    );
}

// ---------------------------------------------------------------- criterion:
// overfitting the <= 60k-parameter model on one synthetic 64x64 sample
// reaches final-frame PSNR > 30 dB within 2000 steps, < 15 min on one core;
// deterministic per seed.
#[test]
fn overfit_single_sample() {
    let start = Instant::now();
    let spec = SceneSpec::parse(
        // near-black background: the fixed fusion rule maps flat background b
        // to 1.5*b at the output (convex per-scale synthesis summed over three
        // scales, averaged with the ~zero filtered branch), so a bright
        // background carries an irreducible offset no training can remove.
        "width=64\nheight=64\nbackground=0.02\n\
         shape=rect,0.3,0.25,0.2,32,32,2,0,16,12\n\
         shape=disk,0.35,0.3,0.15,16,44,-2,1,6\n",
    )
    .unwrap();
    let sample = make_sample(&spec).unwrap();
    let samples = vec![sample];

    let model_cfg = lean_config(4);
    let mk = |seed: u64| {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = InterpolationModel::new(&mut store, model_cfg.clone(), &mut rng).unwrap();
        (store, model)
    };
    let (mut store, model) = mk(3);
    let n_params = store.total_scalars();
    assert!(n_params <= 60_000);

    let cfg = TrainConfig {
        lr0: 0.004,
        epochs: 1200,
        batch_size: 1,
        lr_decay: 0.9995,
        seed: 3,
        ..TrainConfig::default()
    };
    let result = train(&model, &mut store, &samples, &cfg).unwrap();
    let steps = result.loss_curve.len();

    // determinism: a fresh short run reproduces the head of the loss curve
    let (mut store2, model2) = mk(3);
    let short = train(
        &model2,
        &mut store2,
        &samples,
        &TrainConfig {
            epochs: 3,
            ..cfg.clone()
        },
    )
    .unwrap();
    let deterministic = short.loss_curve[..] == result.loss_curve[..3];

    let prepared = prepare_sample(&samples[0], 4).unwrap();
    let pred = infer(&model, &store, &prepared).unwrap();
    let db = psnr(&pred, &prepared.ground_truth, 1.0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(
        db > 30.0 && steps <= 2000 && secs < 900.0 && deterministic,
        "overfit",
        &format!(
            "{n_params} params, {steps} steps, PSNR {db:.2} dB, {secs:.0}s, deterministic={deterministic}"
        ),
    );
}

// ---------------------------------------------------------------- criterion:
// train alpha=0.6 and alpha=0 on a 20-sample set with 3 seeds each; emit a
// masked-PSNR comparison table; assert only that both complete without NaN
// and the table is produced.
#[test]
fn motion_aware_trend() {
    let base = scene_16();
    let samples: Vec<_> = (0..20)
        .map(|i| make_sample(&vary_scene(&base, 61, i)).unwrap())
        .collect();
    let prepared: Vec<_> = samples.iter().map(|s| prepare_sample(s, 4).unwrap()).collect();

    let mut table = String::from("alpha\tseed\tmasked_psnr_mean\n");
    let mut means = [[0.0f64; 3]; 2];
    for (ai, alpha) in [0.6, 0.0].iter().enumerate() {
        for seed in 0..3u64 {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let model = InterpolationModel::new(&mut store, lean_config(4), &mut rng).unwrap();
            let cfg = TrainConfig {
                epochs: 4,
                batch_size: 4,
                lr0: 0.004,
                lr_decay: 1.0,
                seed,
                loss: LossConfig { alpha: *alpha },
                ..TrainConfig::default()
            };
            let result = train(&model, &mut store, &samples, &cfg).unwrap();
            assert!(result.loss_curve.iter().all(|l| l.is_finite()));
            let mut sum = 0.0;
            let mut n = 0usize;
            for p in &prepared {
                let pred = infer(&model, &store, p).unwrap();
                let db = masked_psnr(&pred, &p.ground_truth, &p.lf, 1.0).unwrap();
                if db.is_finite() {
                    sum += db;
                    n += 1;
                }
            }
            let mean = sum / n as f64;
            means[ai][seed as usize] = mean;
            table.push_str(&format!("{alpha}\t{seed}\t{mean:.4}\n"));
        }
    }
    let avg = |xs: &[f64; 3]| xs.iter().sum::<f64>() / 3.0;
    table.push_str(&format!(
        "mean over seeds: alpha=0.6 -> {:.4} dB, alpha=0 -> {:.4} dB\n",
        avg(&means[0]),
        avg(&means[1])
    ));
    print!("{table}");
    report(
        true,
        "motion-aware trend",
        &format!(
            "both configs completed without NaN; masked-PSNR means {:.2} dB (alpha=0.6) vs {:.2} dB (alpha=0)",
            avg(&means[0]),
            avg(&means[1])
        ),
    );
}

// ---------------------------------------------------------------- criterion:
// 100-step AdaMax trajectory matches an independent reimplementation of the
// update rule bitwise.
#[test]
fn adamax_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let n = 11;
    let (beta1, beta2, lr, eps) = (0.9f64, 0.999f64, 0.0016f64, 1e-8f64);
    let mut p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (mut m, mut u) = (vec![0.0; n], vec![0.0; n]);
    let mut p2 = p.clone();
    let (mut m2, mut u2) = (m.clone(), u.clone());
    let mut identical = true;
    for t in 1..=100u64 {
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        adamax_step(&mut p, &g, &mut m, &mut u, lr, beta1, beta2, t);
        for i in 0..n {
            m2[i] = beta1 * m2[i] + (1.0 - beta1) * g[i];
            u2[i] = f64::max(beta2 * u2[i], g[i].abs());
            p2[i] -= lr * m2[i] / ((1.0 - beta1.powi(t as i32)) * (u2[i] + eps));
        }
        identical &= p == p2 && m == m2 && u == u2;
    }
    report(
        identical,
        "adamax bitwise",
        "100-step trajectory identical to independent reimplementation (64-bit exact)",
    );
}

// ---------------------------------------------------------------- criterion:
// psnr(x,x) = inf sentinel; ssim(x,x) = 1.0; uniform error 0.1 at peak 1
// gives 20.000 +- 1e-9 dB.
#[test]
fn metric_sanity() {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let x = random_tensor(&[3, 16, 16], &mut rng, 0.0, 1.0);
    let inf_ok = psnr(&x, &x, 1.0).unwrap() == f64::INFINITY;
    let ssim_ok = (ssim(&x, &x, 1.0).unwrap() - 1.0).abs() < 1e-12;
    let y = x.map(|v| v + 0.1);
    let db = psnr(&x, &y, 1.0).unwrap();
    let db_ok = (db - 20.0).abs() < 1e-9;
    report(
        inf_ok && ssim_ok && db_ok,
        "metric sanity",
        &format!("psnr(x,x)=inf, ssim(x,x)=1, uniform 0.1 error -> {db:.12} dB"),
    );
}

// ---------------------------------------------------------------- criterion:
// full-dataset benchmark numbers are out of scope at this scale; the README
// must say so and point at this suite as the substitute.
#[test]
fn readme_documents_substitution() {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md"))
        .expect("README.md at workspace root");
    let ok = readme.contains("acceptance") && readme.to_lowercase().contains("full-dataset");
    report(
        ok,
        "benchmark substitution documented",
        "README explains that full-dataset benchmark numbers are replaced by this property suite",
    );
}
