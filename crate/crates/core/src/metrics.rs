//! Training losses and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::cmdm::{LOWER_SLOTS, UPPER_SLOTS};
use crate::diffmath::{CustomOp, Session, Var};
use crate::error::{shape_err, Error, Result};
use crate::image::Image;
use crate::tensor::Tensor;

/// Side of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// D-SSIM weight.
    pub lambda1: f64,
    /// Perceptual proxy weight.
    pub lambda2: f64,
    /// Alignment weight.
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.2,
            lambda2: 0.5,
            lambda3: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("loss weight {name} must be a finite non-negative number")));
            }
        }
        Ok(())
    }
}

/// Individual loss terms (unweighted) and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub l1: f64,
    pub d_ssim: f64,
    pub perceptual: f64,
    pub align: f64,
    pub total: f64,
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" correlation of one channel plane.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`].
fn filter_valid_adjoint(g: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            for i in 0..SSIM_WINDOW {
                tmp[(y + i) * ow + x] += k[i] * g[y * ow + x];
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            for i in 0..SSIM_WINDOW {
                out[y * w + x + i] += k[i] * tmp[y * ow + x];
            }
        }
    }
    out
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

/// Mean SSIM over valid windows and channels, with its gradient with
/// respect to `pred` when requested.
fn ssim_impl(pred: &Image, gt: &Image, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    pred.check_same(gt)?;
    let (w, h, ch) = (pred.width, pred.height, pred.channels);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return shape_err(format!("image {w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"));
    }
    let k = gaussian_window();
    let windows = ((w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW)) as f64;
    let norm = 1.0 / (windows * ch as f64);
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; pred.data.len()]);
    for c in 0..ch {
        let x = plane(pred, c);
        let y = plane(gt, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let sxx = filter_valid(&xx, w, h, &k);
        let syy = filter_valid(&yy, w, h, &k);
        let sxy = filter_valid(&xy, w, h, &k);
        let n = mx.len();
        let mut alpha = vec![0.0; n];
        let mut beta = vec![0.0; n];
        let mut gamma = vec![0.0; n];
        for i in 0..n {
            let vx = sxx[i] - mx[i] * mx[i];
            let vy = syy[i] - my[i] * my[i];
            let cxy = sxy[i] - mx[i] * my[i];
            let a1 = 2.0 * mx[i] * my[i] + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = mx[i] * mx[i] + my[i] * my[i] + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            // dS/dx_k = w_k (alpha + beta y_k + gamma x_k)
            alpha[i] = norm * s * (2.0 * my[i] / a1 - 2.0 * mx[i] / b1 - 2.0 * my[i] / a2 + 2.0 * mx[i] / b2);
            beta[i] = norm * 2.0 * s / a2;
            gamma[i] = -norm * 2.0 * s / b2;
        }
        if let Some(g) = grad.as_mut() {
            let ga = filter_valid_adjoint(&alpha, w, h, &k);
            let gb = filter_valid_adjoint(&beta, w, h, &k);
            let gc = filter_valid_adjoint(&gamma, w, h, &k);
            for p in 0..w * h {
                g[p * ch + c] = ga[p] + gb[p] * y[p] + gc[p] * x[p];
            }
        }
    }
    Ok((total * norm, grad))
}

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, valid windows, averaged
/// over channels).
pub fn ssim(pred: &Image, gt: &Image) -> Result<f64> {
    Ok(ssim_impl(pred, gt, false)?.0)
}

/// `1 - SSIM`, clamped to `[0, 1]`.
pub fn d_ssim(pred: &Image, gt: &Image) -> Result<f64> {
    Ok((1.0 - ssim(pred, gt)?).clamp(0.0, 1.0))
}

/// 2x2 average pooling (odd trailing rows/columns dropped).
fn pool2(src: &[f64], w: usize, h: usize, ch: usize) -> (Vec<f64>, usize, usize) {
    let (pw, ph) = (w / 2, h / 2);
    let mut out = vec![0.0; pw * ph * ch];
    for y in 0..ph {
        for x in 0..pw {
            for c in 0..ch {
                let at = |xx: usize, yy: usize| src[(yy * w + xx) * ch + c];
                out[(y * pw + x) * ch + c] =
                    0.25 * (at(2 * x, 2 * y) + at(2 * x + 1, 2 * y) + at(2 * x, 2 * y + 1) + at(2 * x + 1, 2 * y + 1));
            }
        }
    }
    (out, pw, ph)
}

/// Mean-L1 of horizontal and vertical forward differences of `d` plus their
/// gradient with respect to `d`; returns the two terms and gradients.
fn diff_terms(d: &[f64], w: usize, h: usize, ch: usize) -> ([f64; 2], [Vec<f64>; 2]) {
    let mut vals = [0.0; 2];
    let mut grads = [vec![0.0; d.len()], vec![0.0; d.len()]];
    for (dir, (dx, dy)) in [(1usize, 0usize), (0, 1)].into_iter().enumerate() {
        if w <= dx || h <= dy {
            continue;
        }
        let count = ((w - dx) * (h - dy) * ch) as f64;
        for y in 0..h - dy {
            for x in 0..w - dx {
                for c in 0..ch {
                    let a = (y * w + x) * ch + c;
                    let b = ((y + dy) * w + x + dx) * ch + c;
                    let v = d[b] - d[a];
                    vals[dir] += v.abs() / count;
                    let s = if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    grads[dir][b] += s / count;
                    grads[dir][a] -= s / count;
                }
            }
        }
    }
    (vals, grads)
}

fn proxy_impl(pred: &Image, gt: &Image) -> Result<(f64, Vec<f64>)> {
    pred.check_same(gt)?;
    let (w, h, ch) = (pred.width, pred.height, pred.channels);
    let d: Vec<f64> = pred.data.iter().zip(&gt.data).map(|(a, b)| a - b).collect();
    let (v_full, g_full) = diff_terms(&d, w, h, ch);
    let (pooled, pw, ph) = pool2(&d, w, h, ch);
    let (v_half, g_half) = diff_terms(&pooled, pw, ph, ch);
    let value = (v_full[0] + v_full[1] + v_half[0] + v_half[1]) / 4.0;
    let mut grad = vec![0.0; d.len()];
    for k in 0..d.len() {
        grad[k] = (g_full[0][k] + g_full[1][k]) / 4.0;
    }
    for y in 0..ph {
        for x in 0..pw {
            for c in 0..ch {
                let g = (g_half[0][(y * pw + x) * ch + c] + g_half[1][(y * pw + x) * ch + c]) / 4.0 * 0.25;
                for (xx, yy) in [(2 * x, 2 * y), (2 * x + 1, 2 * y), (2 * x, 2 * y + 1), (2 * x + 1, 2 * y + 1)] {
                    grad[(yy * w + xx) * ch + c] += g;
                }
            }
        }
    }
    Ok((value, grad))
}

/// Multi-scale gradient-L1 proxy for a learned perceptual distance: mean of
/// the L1 distances between horizontal and vertical forward differences at
/// full resolution and after 2x2 average pooling.
pub fn perceptual_proxy(pred: &Image, gt: &Image) -> Result<f64> {
    Ok(proxy_impl(pred, gt)?.0)
}

pub fn mean_l1(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return shape_err(format!("L1 over {} vs {} values", pred.len(), gt.len()));
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len().max(1) as f64)
}

/// Mean absolute difference of two feature vectors.
pub fn align_loss(c_e_al: &[f64], c_e_vl: &[f64]) -> Result<f64> {
    mean_l1(c_e_al, c_e_vl)
}

/// Weighted objective `L1 + l1*D-SSIM + l2*proxy + l3*align`.
pub fn total_loss(pred: &Image, gt: &Image, c_e_al: &[f64], c_e_vl: &[f64], w: &LossWeights) -> Result<LossTerms> {
    pred.check_same(gt)?;
    let l1 = mean_l1(&pred.data, &gt.data)?;
    let d_ssim = d_ssim(pred, gt)?;
    let perceptual = perceptual_proxy(pred, gt)?;
    let align = align_loss(c_e_al, c_e_vl)?;
    Ok(LossTerms {
        l1,
        d_ssim,
        perceptual,
        align,
        total: l1 + w.lambda1 * d_ssim + w.lambda2 * perceptual + w.lambda3 * align,
    })
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    pred.check_same(gt)?;
    let mse = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        / pred.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean absolute AU error over the lower and upper subsets (`T x 17` inputs).
pub fn aue(pred: &Tensor, gt: &Tensor) -> Result<(f64, f64)> {
    if pred.shape() != gt.shape() || pred.cols() != 17 {
        return shape_err(format!("AU trajectories {:?} vs {:?}", pred.shape(), gt.shape()));
    }
    let t = pred.rows().max(1) as f64;
    let mut lower = 0.0;
    let mut upper = 0.0;
    for i in 0..pred.rows() {
        let (p, g) = (pred.row_slice(i), gt.row_slice(i));
        lower += LOWER_SLOTS.iter().map(|&k| (p[k] - g[k]).abs()).sum::<f64>() / LOWER_SLOTS.len() as f64;
        upper += UPPER_SLOTS.iter().map(|&k| (p[k] - g[k]).abs()).sum::<f64>() / UPPER_SLOTS.len() as f64;
    }
    Ok((lower / t, upper / t))
}

/// Mean Euclidean landmark distance over `T x K x 2` tracks.
pub fn lmd(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    if pred.shape() != gt.shape() || pred.shape().last() != Some(&2) {
        return shape_err(format!("landmark tracks {:?} vs {:?}", pred.shape(), gt.shape()));
    }
    let (p, g) = (pred.data(), gt.data());
    let n = p.len() / 2;
    let total: f64 = (0..n)
        .map(|i| ((p[2 * i] - g[2 * i]).powi(2) + (p[2 * i + 1] - g[2 * i + 1]).powi(2)).sqrt())
        .sum();
    Ok(total / n.max(1) as f64)
}

struct ImageLossOp {
    width: usize,
    height: usize,
    channels: usize,
    gt: Image,
    lambda1: f64,
    lambda2: f64,
    dssim_active: bool,
}

impl ImageLossOp {
    fn as_image(&self, t: &Tensor) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: t.data().to_vec(),
        }
    }
}

impl CustomOp for ImageLossOp {
    fn name(&self) -> &'static str {
        "dssim_and_proxy"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let pred = self.as_image(inputs[0]);
        let g = grad_out.item();
        let mut grad = vec![0.0; pred.data.len()];
        if self.lambda1 != 0.0 && self.dssim_active {
            let (_, gs) = ssim_impl(&pred, &self.gt, true).expect("validated in forward");
            for (o, v) in grad.iter_mut().zip(gs.expect("requested")) {
                *o -= self.lambda1 * v;
            }
        }
        if self.lambda2 != 0.0 {
            let (_, gp) = proxy_impl(&pred, &self.gt).expect("validated in forward");
            for (o, v) in grad.iter_mut().zip(gp) {
                *o += self.lambda2 * v;
            }
        }
        let t = Tensor::new(inputs[0].shape(), grad.into_iter().map(|v| v * g).collect()).expect("shape");
        vec![Some(t)]
    }
}

/// Image part of the objective on a `(H*W) x C` prediction node:
/// `L1 + l1*D-SSIM + l2*proxy`. Returns the loss node and its unweighted terms.
pub fn image_loss_graph(s: &mut Session, pred: Var, gt: &Image, w: &LossWeights) -> Result<(Var, LossTerms)> {
    let p = s.value(pred);
    if p.len() != gt.data.len() || p.cols() != gt.channels {
        return shape_err(format!(
            "prediction {:?} vs {}x{}x{} target",
            p.shape(),
            gt.width,
            gt.height,
            gt.channels
        ));
    }
    let pred_img = Image {
        width: gt.width,
        height: gt.height,
        channels: gt.channels,
        data: p.data().to_vec(),
    };
    let ssim_val = ssim(&pred_img, gt)?;
    let raw = 1.0 - ssim_val;
    let d_ssim = raw.clamp(0.0, 1.0);
    let perceptual = perceptual_proxy(&pred_img, gt)?;
    let gt_node = s.constant(Tensor::new(p.shape(), gt.data.clone())?);
    let l1_node = s.graph.mean_abs_diff(pred, gt_node)?;
    let l1 = s.value(l1_node).item();
    let op = ImageLossOp {
        width: gt.width,
        height: gt.height,
        channels: gt.channels,
        gt: gt.clone(),
        lambda1: w.lambda1,
        lambda2: w.lambda2,
        dssim_active: (0.0..=1.0).contains(&raw),
    };
    let rest = s
        .graph
        .custom(Box::new(op), &[pred], Tensor::scalar(w.lambda1 * d_ssim + w.lambda2 * perceptual));
    let loss = s.graph.add(l1_node, rest)?;
    let total = s.value(loss).item();
    Ok((
        loss,
        LossTerms {
            l1,
            d_ssim,
            perceptual,
            align: 0.0,
            total,
        },
    ))
}

/// Full objective node: image terms plus `l3 * mean|c_e_al - c_e_vl|`.
pub fn total_loss_graph(
    s: &mut Session,
    pred: Var,
    gt: &Image,
    c_e_al: Var,
    c_e_vl: Var,
    w: &LossWeights,
) -> Result<(Var, LossTerms)> {
    let (img, mut terms) = image_loss_graph(s, pred, gt, w)?;
    let align = s.graph.mean_abs_diff(c_e_al, c_e_vl)?;
    terms.align = s.value(align).item();
    let weighted = s.graph.scale(align, w.lambda3);
    let loss = s.graph.add(img, weighted)?;
    terms.total = s.value(loss).item();
    Ok((loss, terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{finite_diff_check, ParamStore};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, 3, (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn offset(img: &Image, d: f64) -> Image {
        Image {
            data: img.data.iter().map(|v| v + d).collect(),
            ..img.clone()
        }
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss() {
        let img = random_image(16, 16, 1);
        let f = [0.3; 32];
        let t = total_loss(&img, &img, &f, &f, &LossWeights::default()).unwrap();
        assert_eq!(t.total, 0.0);
    }

    #[test]
    fn constant_offset_l1_only() {
        let gt = random_image(16, 16, 2);
        let w = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 1e-3,
        };
        let t = total_loss(&offset(&gt, 0.1), &gt, &[0.0; 32], &[0.0; 32], &w).unwrap();
        assert!((t.total - 0.1).abs() < 1e-12);
        assert_eq!(LossWeights::default().lambda1, 0.2);
        assert_eq!(LossWeights::default().lambda2, 0.5);
    }

    #[test]
    fn dssim_of_identical_and_inverted() {
        let a = random_image(16, 16, 3);
        assert!(d_ssim(&a, &a).unwrap().abs() < 1e-12);
        let bright = Image::filled(16, 16, 3, 0.9);
        let dark = Image::filled(16, 16, 3, 0.1);
        // constant patches: SSIM = (2*.09 + C1) / (.81 + .01 + C1)
        let want = 1.0 - (2.0 * 0.09 + SSIM_C1) / (0.82 + SSIM_C1);
        let got = d_ssim(&bright, &dark).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!(got > 0.5);
    }

    #[test]
    fn dssim_rejects_small_images() {
        let a = random_image(8, 8, 4);
        assert!(d_ssim(&a, &a).is_err());
    }

    #[test]
    fn proxy_examples() {
        let a = random_image(16, 16, 5);
        assert_eq!(perceptual_proxy(&a, &a).unwrap(), 0.0);
        assert!(perceptual_proxy(&offset(&a, 0.2), &a).unwrap() < 1e-15);
        let checker = Image::new(
            8,
            8,
            1,
            (0..64).map(|i| if (i % 8 + i / 8) % 2 == 0 { 0.0 } else { 1.0 }).collect(),
        )
        .unwrap();
        let grey = Image::filled(8, 8, 1, 0.5);
        assert!(perceptual_proxy(&checker, &grey).unwrap() > 0.0);
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, 3, 0.2);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((psnr(&offset(&a, 0.1), &a).unwrap() - 20.0).abs() < 1e-9);
        let b = Image::filled(4, 4, 3, 1.2);
        assert!(psnr(&b, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn aue_examples() {
        let gt = Tensor::new(&[3, 17], (0..51).map(|i| (i % 5) as f64).collect()).unwrap();
        assert_eq!(aue(&gt, &gt).unwrap(), (0.0, 0.0));
        let mut p = gt.clone();
        for i in 0..3 {
            for &k in LOWER_SLOTS.iter() {
                p.row_slice_mut(i)[k] += 0.5;
            }
        }
        let (l, u) = aue(&p, &gt).unwrap();
        assert!((l - 0.5).abs() < 1e-12 && u == 0.0);
        assert_eq!(aue(&gt, &p).unwrap(), (l, u));
        assert!(aue(&gt, &Tensor::zeros(&[2, 17])).is_err());
    }

    #[test]
    fn lmd_examples() {
        let gt = Tensor::new(&[2, 3, 2], (0..12).map(|v| v as f64).collect()).unwrap();
        assert_eq!(lmd(&gt, &gt).unwrap(), 0.0);
        let shifted = Tensor::new(
            &[2, 3, 2],
            gt.data().iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 3.0 } else { 4.0 }).collect(),
        )
        .unwrap();
        assert!((lmd(&shifted, &gt).unwrap() - 5.0).abs() < 1e-12);
        let s2 = shifted.map(|v| 2.0 * v);
        let g2 = gt.map(|v| 2.0 * v);
        assert!((lmd(&s2, &g2).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        // 16x16 so that valid SSIM windows exist
        let gt = random_image(16, 16, 7);
        let pred0 = random_image(16, 16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fa: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fv: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = LossWeights::default();
        let mut x = pred0.data.clone();
        x.extend_from_slice(&fa);
        let err = finite_diff_check(
            |x| {
                let store = ParamStore::new();
                let mut s = Session::inference(&store);
                let pred = s.graph.param(Tensor::new(&[256, 3], x[..768].to_vec()).unwrap());
                let a = s.graph.param(Tensor::row(&x[768..]));
                let v = s.constant(Tensor::row(&fv));
                let (loss, _) = total_loss_graph(&mut s, pred, &gt, a, v, &w)?;
                s.graph.backward(loss)?;
                let mut g = s.graph.grad(pred).unwrap().data().to_vec();
                g.extend_from_slice(s.graph.grad(a).unwrap().data());
                Ok((s.value(loss).item(), g))
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn graph_terms_match_numeric_terms() {
        let gt = random_image(16, 16, 11);
        let pred = random_image(16, 16, 12);
        let store = ParamStore::new();
        let mut s = Session::inference(&store);
        let p = s.constant(Tensor::new(&[256, 3], pred.data.clone()).unwrap());
        let a = s.constant(Tensor::row(&[0.5; 32]));
        let b = s.constant(Tensor::row(&[0.0; 32]));
        let (_, t) = total_loss_graph(&mut s, p, &gt, a, b, &LossWeights::default()).unwrap();
        let want = total_loss(&pred, &gt, &[0.5; 32], &[0.0; 32], &LossWeights::default()).unwrap();
        assert!((t.total - want.total).abs() < 1e-12);
        assert!((t.align - 0.5).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn dssim_in_unit_interval_and_symmetric(seed in 0u64..10_000) {
            let a = random_image(12, 12, seed);
            let b = random_image(12, 12, seed + 1);
            let d = d_ssim(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - d_ssim(&b, &a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn align_loss_symmetric_and_zero_on_diagonal(v in proptest::collection::vec(-5.0f64..5.0, 64)) {
            let (x, y) = v.split_at(32);
            prop_assert_eq!(align_loss(x, x).unwrap(), 0.0);
            prop_assert_eq!(align_loss(x, y).unwrap(), align_loss(y, x).unwrap());
        }
    }
}
