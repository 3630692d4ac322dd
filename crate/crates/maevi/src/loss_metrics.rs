//! Motion-aware training loss and evaluation metrics.

use crate::error::{Error, Result};
use crate::motion_filter::LossFilter;
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.6 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must be in [0,1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// `α·mean|lf⊙pred − lf⊙gt| + (1−α)·mean|pred − gt|` with `lf` broadcast
/// over channels. Both terms are mean absolute errors.
pub fn motion_aware_loss(
    g: &mut Graph,
    pred: NodeId,
    gt: NodeId,
    lf: &LossFilter,
    cfg: LossConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    let shape = g.shape(pred).to_vec();
    if g.shape(gt) != shape {
        return Err(Error::ShapeMismatch {
            op: "motion_aware_loss",
            detail: format!("pred {:?} vs gt {:?}", shape, g.shape(gt)),
        });
    }
    let [c, h, w] = match shape[..] {
        [c, h, w] => [c, h, w],
        _ => {
            return Err(Error::ShapeMismatch {
                op: "motion_aware_loss",
                detail: format!("expected [C,H,W], got {shape:?}"),
            })
        }
    };
    if lf.weights.shape() != [h, w] {
        return Err(Error::ShapeMismatch {
            op: "motion_aware_loss",
            detail: format!("filter {:?} vs frame {h}x{w}", lf.weights.shape()),
        });
    }
    let mut tiled = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        tiled.extend_from_slice(lf.weights.data());
    }
    let lf_node = g.leaf(&Tensor::from_vec(&[c, h, w], tiled)?)?;

    let l_full = g.l1_mean(pred, gt)?;
    let fp = g.mul(lf_node, pred)?;
    let fg = g.mul(lf_node, gt)?;
    let l_filt = g.l1_mean(fp, fg)?;
    let a = g.scale(l_filt, cfg.alpha)?;
    let b = g.scale(l_full, 1.0 - cfg.alpha)?;
    g.add(a, b)
}

/// `10·log10(peak²/MSE)`; identical inputs give `+∞`.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "psnr",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR restricted to pixels where the loss filter exceeds 0.5.
pub fn masked_psnr(a: &Tensor, b: &Tensor, lf: &LossFilter, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "masked_psnr",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let [c, h, w] = match a.shape() {
        [c, h, w] => [*c, *h, *w],
        s => {
            return Err(Error::ShapeMismatch {
                op: "masked_psnr",
                detail: format!("expected [C,H,W], got {s:?}"),
            })
        }
    };
    if lf.weights.shape() != [h, w] {
        return Err(Error::ShapeMismatch {
            op: "masked_psnr",
            detail: format!("filter {:?} vs frame {h}x{w}", lf.weights.shape()),
        });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            if lf.weights.at(&[y, x]) > 0.5 {
                for ci in 0..c {
                    let d = a.at(&[ci, y, x]) - b.at(&[ci, y, x]);
                    sum += d * d;
                }
                n += c;
            }
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument {
            op: "masked_psnr",
            detail: "no pixels with filter weight > 0.5".into(),
        });
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Grayscale of `[C,H,W]` (channel mean) or `[H,W]` (identity).
fn to_gray(t: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    match t.shape() {
        [h, w] => Ok((t.data().to_vec(), *h, *w)),
        [c, h, w] => {
            let hw = h * w;
            let mut g = vec![0.0; hw];
            for ci in 0..*c {
                for (i, v) in g.iter_mut().enumerate() {
                    *v += t.data()[ci * hw + i];
                }
            }
            for v in &mut g {
                *v /= *c as f64;
            }
            Ok((g, *h, *w))
        }
        s => Err(Error::ShapeMismatch {
            op: "ssim",
            detail: format!("expected [H,W] or [C,H,W], got {s:?}"),
        }),
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn ssim_window(side: usize) -> Vec<f64> {
    let c = (side as f64 - 1.0) / 2.0;
    let mut k = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            k.push((-(dy * dy + dx * dx) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Mean local SSIM over valid (fully interior) Gaussian windows; grayscale
/// conversion is the channel mean. `C1=(0.01·peak)²`, `C2=(0.03·peak)²`.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "ssim",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let (ga, h, w) = to_gray(a)?;
    let (gb, _, _) = to_gray(b)?;
    // shrink the window for tiny images so the map is never empty
    let side = SSIM_WINDOW.min(h).min(w);
    let side = if side % 2 == 0 { side - 1 } else { side };
    if side == 0 {
        return Err(Error::InvalidArgument {
            op: "ssim",
            detail: "empty image".into(),
        });
    }
    let win = ssim_window(side);
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let mut sum = 0.0;
    let mut count = 0usize;
    for oy in 0..=(h - side) {
        for ox in 0..=(w - side) {
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            for wy in 0..side {
                for wx in 0..side {
                    let k = win[wy * side + wx];
                    mu_a += k * ga[(oy + wy) * w + ox + wx];
                    mu_b += k * gb[(oy + wy) * w + ox + wx];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for wy in 0..side {
                for wx in 0..side {
                    let k = win[wy * side + wx];
                    let da = ga[(oy + wy) * w + ox + wx] - mu_a;
                    let db = gb[(oy + wy) * w + ox + wx] - mu_b;
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            }
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2);
            sum += num / den;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcheck;
    use crate::tensor::params::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn filter_of(data: Vec<f64>, h: usize, w: usize) -> LossFilter {
        LossFilter {
            weights: Tensor::from_vec(&[h, w], data).unwrap(),
        }
    }

    fn loss_value(pred: &Tensor, gt: &Tensor, lf: &LossFilter, alpha: f64) -> f64 {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let p = g.leaf(pred).unwrap();
        let t = g.leaf(gt).unwrap();
        let l = motion_aware_loss(&mut g, p, t, lf, LossConfig { alpha }).unwrap();
        g.value(l).data()[0]
    }

    #[test]
    fn identical_inputs_give_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tensor::zeros(&[3, 4, 4]);
        for v in t.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let lf = filter_of(vec![0.7; 16], 4, 4);
        assert_eq!(loss_value(&t, &t, &lf, 0.6), 0.0);
    }

    #[test]
    fn constructed_terms_give_exactly_one_point_four() {
        // |pred - gt| = 2 everywhere, lf = 0.5: L_full = 2, L_filtered = 1
        let pred = Tensor::filled(&[1, 2, 2], 2.0);
        let gt = Tensor::zeros(&[1, 2, 2]);
        let lf = filter_of(vec![0.5; 4], 2, 2);
        let v = loss_value(&pred, &gt, &lf, 0.6);
        assert!((v - 1.4).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn all_ones_filter_reduces_to_full_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pred = Tensor::zeros(&[3, 5, 5]);
        let mut gt = Tensor::zeros(&[3, 5, 5]);
        for v in pred.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        for v in gt.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let lf = filter_of(vec![1.0; 25], 5, 5);
        let l_full = pred
            .data()
            .iter()
            .zip(gt.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 75.0;
        for alpha in [0.0, 0.3, 0.6, 1.0] {
            assert!((loss_value(&pred, &gt, &lf, alpha) - l_full).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_linear_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pred = Tensor::zeros(&[3, 4, 4]);
        let mut gt = Tensor::zeros(&[3, 4, 4]);
        let mut lfv = vec![0.0; 16];
        for v in pred.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        for v in gt.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        for v in &mut lfv {
            *v = rng.gen_range(0.0..1.0);
        }
        let lf = filter_of(lfv, 4, 4);
        let l0 = loss_value(&pred, &gt, &lf, 0.0);
        let l5 = loss_value(&pred, &gt, &lf, 0.5);
        let l1 = loss_value(&pred, &gt, &lf, 1.0);
        assert!((l5 - 0.5 * (l0 + l1)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_alpha_and_shape_mismatch() {
        let t = Tensor::zeros(&[1, 2, 2]);
        let lf = filter_of(vec![1.0; 4], 2, 2);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.leaf(&t).unwrap();
        let b = g.leaf(&Tensor::zeros(&[1, 2, 3])).unwrap();
        assert!(motion_aware_loss(&mut g, a, b, &lf, LossConfig::default()).is_err());
        assert!(motion_aware_loss(&mut g, a, a, &lf, LossConfig { alpha: 1.5 }).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pred = Tensor::zeros(&[2, 3, 3]);
        let mut gt = Tensor::zeros(&[2, 3, 3]);
        let mut lfv = vec![0.0; 9];
        for v in pred.data_mut() {
            *v = rng.gen_range(0.1..0.9);
        }
        for v in gt.data_mut() {
            *v = rng.gen_range(0.1..0.9);
        }
        for v in &mut lfv {
            *v = rng.gen_range(0.2..1.0);
        }
        let lf = filter_of(lfv, 3, 3);
        let store = ParamStore::new();
        let analytic = {
            let mut g = Graph::new(&store);
            let p = g.leaf_grad(&pred).unwrap();
            let t = g.leaf(&gt).unwrap();
            let l = motion_aware_loss(&mut g, p, t, &lf, LossConfig::default()).unwrap();
            g.backward(l).unwrap();
            g.grad(p).unwrap()
        };
        let indices: Vec<usize> = (0..pred.numel()).collect();
        let err = numcheck::max_grad_rel_err(
            |d| {
                let pert = Tensor::from_vec(&[2, 3, 3], d.to_vec()).unwrap();
                loss_value(&pert, &gt, &lf, 0.6)
            },
            pred.data(),
            analytic.data(),
            &indices,
            1e-6,
        );
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn psnr_sentinel_and_twenty_db() {
        let a = Tensor::filled(&[3, 4, 4], 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = Tensor::filled(&[3, 4, 4], 0.6);
        let v = psnr(&a, &b, 1.0).unwrap();
        assert!((v - 20.0).abs() < 1e-9, "got {v}");
        assert_eq!(v, psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn masked_psnr_oracle_and_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = Tensor::zeros(&[2, 3, 3]);
        let mut b = Tensor::zeros(&[2, 3, 3]);
        for v in a.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        for v in b.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let mut lfv = vec![0.0; 9];
        lfv[1] = 0.9;
        lfv[7] = 0.6;
        let lf = filter_of(lfv, 3, 3);
        // manual masked MSE over pixels (0,1) and (2,1), both channels
        let mut sum = 0.0;
        for (y, x) in [(0, 1), (2, 1)] {
            for c in 0..2 {
                let d = a.at(&[c, y, x]) - b.at(&[c, y, x]);
                sum += d * d;
            }
        }
        let want = 10.0 * (1.0 / (sum / 4.0)).log10();
        assert!((masked_psnr(&a, &b, &lf, 1.0).unwrap() - want).abs() < 1e-12);

        // full mask equals plain psnr
        let full = filter_of(vec![1.0; 9], 3, 3);
        assert!(
            (masked_psnr(&a, &b, &full, 1.0).unwrap() - psnr(&a, &b, 1.0).unwrap()).abs() < 1e-12
        );

        // mask covering identical pixels only
        let mut c = a.clone();
        c.data_mut()[1] = a.at(&[0, 0, 1]);
        let mut only = vec![0.0; 9];
        only[1] = 1.0;
        assert_eq!(
            masked_psnr(&a, &a, &filter_of(only, 3, 3), 1.0).unwrap(),
            f64::INFINITY
        );

        // empty mask is an error
        assert!(masked_psnr(&a, &b, &filter_of(vec![0.0; 9], 3, 3), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut a = Tensor::zeros(&[3, 16, 16]);
        let mut b = Tensor::zeros(&[3, 16, 16]);
        for v in a.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        for v in b.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b, 1.0).unwrap() - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_sliding_window_oracle() {
        // independent re-derivation with plain nested loops
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (h, w) = (14, 13);
        let mut ga = vec![0.0; h * w];
        let mut gb = vec![0.0; h * w];
        for v in &mut ga {
            *v = rng.gen_range(0.0..1.0);
        }
        for v in &mut gb {
            *v = rng.gen_range(0.0..1.0);
        }
        let a = Tensor::from_vec(&[h, w], ga.clone()).unwrap();
        let b = Tensor::from_vec(&[h, w], gb.clone()).unwrap();
        let got = ssim(&a, &b, 1.0).unwrap();

        let side = 11;
        let mut kern = vec![0.0; side * side];
        for y in 0..side {
            for x in 0..side {
                let dy = y as f64 - 5.0;
                let dx = x as f64 - 5.0;
                kern[y * side + x] = (-(dy * dy + dx * dx) / 4.5).exp();
            }
        }
        let ks: f64 = kern.iter().sum();
        let (c1, c2) = (0.0001, 0.0009);
        let mut acc = 0.0;
        let mut n = 0;
        for oy in 0..=(h - side) {
            for ox in 0..=(w - side) {
                let mut stats = [0.0f64; 5]; // mu_a, mu_b, E[a²], E[b²], E[ab]
                for wy in 0..side {
                    for wx in 0..side {
                        let k = kern[wy * side + wx] / ks;
                        let va = ga[(oy + wy) * w + ox + wx];
                        let vb = gb[(oy + wy) * w + ox + wx];
                        stats[0] += k * va;
                        stats[1] += k * vb;
                        stats[2] += k * va * va;
                        stats[3] += k * vb * vb;
                        stats[4] += k * va * vb;
                    }
                }
                let [ma, mb, eaa, ebb, eab] = stats;
                let (va, vb, cov) = (eaa - ma * ma, ebb - mb * mb, eab - ma * mb);
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1;
            }
        }
        let want = acc / n as f64;
        assert!((got - want).abs() < 1e-10, "got {got}, want {want}");
    }

    #[test]
    fn ssim_constant_shift_matches_analytic_form() {
        // zero variance: SSIM = (2 μa μb + C1)/(μa² + μb² + C1)
        let a = Tensor::filled(&[3, 16, 16], 0.2);
        let b = Tensor::filled(&[3, 16, 16], 0.7);
        let want = (2.0 * 0.2 * 0.7 + 1e-4) / (0.04 + 0.49 + 1e-4);
        assert!((ssim(&a, &b, 1.0).unwrap() - want).abs() < 1e-12);
    }
}
