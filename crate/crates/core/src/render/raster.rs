//! Tile-based forward rasterization and its deterministic adjoint.

use super::project::{project_backward, project_gaussian};
use super::{Camera, SH_C0, SH_C1, TRANSMITTANCE_EPS};
use crate::diffmath::{sigmoid, CustomOp, Session, Var};
use crate::error::{Error, Result};
use crate::gaussian_field::sh_coeff_count;
use crate::par;
use crate::tensor::Tensor;

pub const TILE_SIZE: usize = 16;

/// Deformed primitives of one branch, ready to rasterize. `quat` rows are
/// used as given (normalize before calling).
#[derive(Clone, Copy, Debug)]
pub struct SplatInputs<'a> {
    pub mu: &'a Tensor,
    pub log_scale: &'a Tensor,
    pub quat: &'a Tensor,
    pub alpha_logit: &'a Tensor,
    pub sh: &'a Tensor,
    pub sh_degree: usize,
}

impl SplatInputs<'_> {
    fn validate(&self) -> Result<usize> {
        let n = self.mu.rows();
        let c = sh_coeff_count(self.sh_degree);
        let ok = self.mu.shape() == [n, 3]
            && self.log_scale.shape() == [n, 3]
            && self.quat.shape() == [n, 4]
            && self.alpha_logit.len() == n
            && self.sh.shape() == [n, c];
        if !ok || self.sh_degree > 1 {
            return Err(Error::Shape(format!(
                "splat inputs mu {:?} scale {:?} quat {:?} alpha {:?} sh {:?} (degree {})",
                self.mu.shape(),
                self.log_scale.shape(),
                self.quat.shape(),
                self.alpha_logit.shape(),
                self.sh.shape(),
                self.sh_degree
            )));
        }
        Ok(n)
    }
}

/// Composited image of one branch. Color is not clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// `H x W x 3`, row-major.
    pub color: Vec<f64>,
    /// `H x W`.
    pub alpha: Vec<f64>,
    /// Primitives dropped because their 2-D covariance was not invertible.
    pub skipped: usize,
}

impl RenderOutput {
    pub fn clamped_color(&self) -> Vec<f64> {
        self.color.iter().map(|v| v.clamp(0.0, 1.0)).collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct Splat {
    index: usize,
    mean: [f64; 2],
    cov: [f64; 3],
    conic: [f64; 3],
    radius: [f64; 2],
    opacity: f64,
    color: [f64; 3],
    view_dir: [f64; 3],
    view_norm: f64,
    depth: f64,
}

impl Splat {
    fn covers(&self, px: f64, py: f64) -> bool {
        (px - self.mean[0]).abs() <= self.radius[0] && (py - self.mean[1]).abs() <= self.radius[1]
    }
}

struct Prepared {
    splats: Vec<Splat>,
    /// Per tile, indices into `splats` in front-to-back order.
    tiles: Vec<Vec<usize>>,
    tiles_x: usize,
    skipped: usize,
}

fn row3(t: &Tensor, i: usize) -> [f64; 3] {
    let r = t.row_slice(i);
    [r[0], r[1], r[2]]
}

fn prepare(inp: &SplatInputs, cam: &Camera) -> Result<Prepared> {
    let n = inp.validate()?;
    let c = sh_coeff_count(inp.sh_degree);
    let center = cam.center();
    let candidates: Vec<Option<std::result::Result<Splat, ()>>> = par::map_indexed(n, |i| {
        let mu = row3(inp.mu, i);
        let q = inp.quat.row_slice(i);
        let p = project_gaussian(mu, row3(inp.log_scale, i), [q[0], q[1], q[2], q[3]], cam)?;
        let [a, b, cc] = p.cov;
        let det = a * cc - b * b;
        if !(det > 0.0) || !det.is_finite() || !p.mean[0].is_finite() || !p.mean[1].is_finite() {
            return Some(Err(()));
        }
        let v = [mu[0] - center[0], mu[1] - center[1], mu[2] - center[2]];
        let view_norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let view_dir = if view_norm > 0.0 {
            [v[0] / view_norm, v[1] / view_norm, v[2] / view_norm]
        } else {
            [0.0, 0.0, 1.0]
        };
        let color = super::sh_to_color(&inp.sh.data()[i * c..(i + 1) * c], inp.sh_degree, view_dir);
        Some(Ok(Splat {
            index: i,
            mean: p.mean,
            cov: p.cov,
            conic: [cc / det, -b / det, a / det],
            radius: [3.0 * a.sqrt(), 3.0 * cc.sqrt()],
            opacity: sigmoid(inp.alpha_logit.data()[i]),
            color,
            view_dir,
            view_norm,
            depth: p.depth,
        }))
    });
    let mut skipped = 0;
    let mut splats = Vec::new();
    for cand in candidates.into_iter().flatten() {
        match cand {
            Ok(s) => splats.push(s),
            Err(()) => skipped += 1,
        }
    }
    splats.sort_by(|x, y| x.depth.total_cmp(&y.depth).then(x.index.cmp(&y.index)));

    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        // pixel x is covered when |x + 0.5 - u| <= r
        let x0 = (s.mean[0] - s.radius[0] - 0.5).ceil().max(0.0);
        let x1 = (s.mean[0] + s.radius[0] - 0.5).floor().min(cam.width as f64 - 1.0);
        let y0 = (s.mean[1] - s.radius[1] - 0.5).ceil().max(0.0);
        let y1 = (s.mean[1] + s.radius[1] - 0.5).floor().min(cam.height as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let (tx0, tx1) = (x0 as usize / TILE_SIZE, x1 as usize / TILE_SIZE);
        let (ty0, ty1) = (y0 as usize / TILE_SIZE, y1 as usize / TILE_SIZE);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(k);
            }
        }
    }
    Ok(Prepared {
        splats,
        tiles,
        tiles_x,
        skipped,
    })
}

/// Kernel value and opacity of splat `s` at pixel center `(px, py)`.
fn kernel(s: &Splat, px: f64, py: f64) -> (f64, f64, f64) {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let [ca, cb, cc] = s.conic;
    let power = -0.5 * (ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy);
    let g = power.exp();
    (g, dx, dy)
}

fn tile_pixels(tile: usize, tiles_x: usize, cam: &Camera) -> impl Iterator<Item = (usize, usize)> {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    let xs = tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(cam.width);
    let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(cam.height);
    ys.flat_map(move |y| xs.clone().map(move |x| (x, y)))
}

/// Front-to-back list of `(splat, a_hat, g, T_i)` that a pixel uses.
fn pixel_stack(prep: &Prepared, list: &[usize], px: f64, py: f64, out: &mut Vec<(usize, f64, f64, f64)>) {
    out.clear();
    let mut t = 1.0;
    for &k in list {
        let s = &prep.splats[k];
        if !s.covers(px, py) {
            continue;
        }
        let (g, _, _) = kernel(s, px, py);
        let a = s.opacity * g;
        out.push((k, a, g, t));
        t *= 1.0 - a;
        if t < TRANSMITTANCE_EPS {
            break;
        }
    }
}

fn forward(prep: &Prepared, cam: &Camera) -> RenderOutput {
    let (w, h) = (cam.width, cam.height);
    let tiles: Vec<Vec<(usize, [f64; 4])>> = par::map_indexed(prep.tiles.len(), |tile| {
        let mut stack = Vec::new();
        tile_pixels(tile, prep.tiles_x, cam)
            .map(|(x, y)| {
                pixel_stack(prep, &prep.tiles[tile], x as f64 + 0.5, y as f64 + 0.5, &mut stack);
                let mut acc = [0.0; 4];
                for &(k, a, _, t) in &stack {
                    let wgt = a * t;
                    let c = prep.splats[k].color;
                    acc[0] += c[0] * wgt;
                    acc[1] += c[1] * wgt;
                    acc[2] += c[2] * wgt;
                    acc[3] += wgt;
                }
                (y * w + x, acc)
            })
            .collect()
    });
    let mut color = vec![0.0; h * w * 3];
    let mut alpha = vec![0.0; h * w];
    for (p, acc) in tiles.into_iter().flatten() {
        color[p * 3..p * 3 + 3].copy_from_slice(&acc[..3]);
        alpha[p] = acc[3];
    }
    RenderOutput {
        width: w,
        height: h,
        color,
        alpha,
        skipped: prep.skipped,
    }
}

/// Rasterizes one branch.
pub fn render(inp: &SplatInputs, cam: &Camera) -> Result<RenderOutput> {
    let prep = prepare(inp, cam)?;
    Ok(forward(&prep, cam))
}

/// Per-splat screen-space gradient: mean(2), conic(3), opacity, color(3).
type ScreenGrad = [f64; 9];

/// Gradients of the five splat inputs given `d loss / d [R, G, B, A]` per
/// pixel (`H*W x 4`).
fn backward(inp: &SplatInputs, cam: &Camera, grad_out: &[f64]) -> Result<[Tensor; 5]> {
    let prep = prepare(inp, cam)?;
    let w = cam.width;
    let per_tile: Vec<Vec<ScreenGrad>> = par::map_indexed(prep.tiles.len(), |tile| {
        let list = &prep.tiles[tile];
        let mut grads = vec![[0.0; 9]; list.len()];
        // splat index -> position in this tile's list
        let mut local = std::collections::HashMap::with_capacity(list.len());
        for (j, &k) in list.iter().enumerate() {
            local.insert(k, j);
        }
        let mut stack = Vec::new();
        for (x, y) in tile_pixels(tile, prep.tiles_x, cam) {
            let p = y * w + x;
            let g_out = &grad_out[p * 4..p * 4 + 4];
            if g_out.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            pixel_stack(&prep, list, px, py, &mut stack);
            // color and alpha composited behind the current splat
            let mut behind = [0.0; 4];
            for &(k, a, g, t) in stack.iter().rev() {
                let s = &prep.splats[k];
                let c4 = [s.color[0], s.color[1], s.color[2], 1.0];
                let mut d_a = 0.0;
                for ch in 0..4 {
                    d_a += g_out[ch] * t * (c4[ch] - behind[ch]);
                }
                for ch in 0..4 {
                    behind[ch] = c4[ch] * a + (1.0 - a) * behind[ch];
                }
                let gr = &mut grads[local[&k]];
                for ch in 0..3 {
                    gr[6 + ch] += g_out[ch] * t * a;
                }
                gr[5] += d_a * g;
                // a = o * exp(power)
                let d_power = d_a * a;
                let (_, dx, dy) = kernel(s, px, py);
                let [ca, cb, cc] = s.conic;
                gr[0] += d_power * (ca * dx + cb * dy);
                gr[1] += d_power * (cb * dx + cc * dy);
                gr[2] += d_power * (-0.5 * dx * dx);
                gr[3] += d_power * (-dx * dy);
                gr[4] += d_power * (-0.5 * dy * dy);
            }
        }
        grads
    });

    // Deterministic merge in tile order.
    let mut screen = vec![[0.0; 9]; prep.splats.len()];
    for (tile, grads) in per_tile.iter().enumerate() {
        for (j, g) in grads.iter().enumerate() {
            let acc = &mut screen[prep.tiles[tile][j]];
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }

    let n = inp.mu.rows();
    let c = sh_coeff_count(inp.sh_degree);
    let mut g_mu = Tensor::zeros(&[n, 3]);
    let mut g_ls = Tensor::zeros(&[n, 3]);
    let mut g_q = Tensor::zeros(&[n, 4]);
    let mut g_logit = Tensor::zeros(inp.alpha_logit.shape());
    let mut g_sh = Tensor::zeros(&[n, c]);
    for (s, g) in prep.splats.iter().zip(&screen) {
        let i = s.index;
        // conic -> covariance
        let [a, b, cc] = s.cov;
        let det = a * cc - b * b;
        let det2 = det * det;
        let (ga, gb, gc) = (g[2], g[3], g[4]);
        let g_cov = [
            ga * (-cc * cc / det2) + gb * (b * cc / det2) + gc * (-b * b / det2),
            ga * (2.0 * b * cc / det2) + gb * (-(det + 2.0 * b * b) / det2) + gc * (2.0 * a * b / det2),
            ga * (-b * b / det2) + gb * (a * b / det2) + gc * (-a * a / det2),
        ];
        let q = inp.quat.row_slice(i);
        let pg = project_backward(
            row3(inp.mu, i),
            row3(inp.log_scale, i),
            [q[0], q[1], q[2], q[3]],
            cam,
            [g[0], g[1]],
            g_cov,
        );
        g_logit.data_mut()[i] = g[5] * s.opacity * (1.0 - s.opacity);
        let gc3 = [g[6], g[7], g[8]];
        let sh = &mut g_sh.data_mut()[i * c..(i + 1) * c];
        let f = &inp.sh.data()[i * c..(i + 1) * c];
        let mut g_dir = [0.0; 3];
        for ch in 0..3 {
            sh[ch] = SH_C0 * gc3[ch];
            if inp.sh_degree >= 1 {
                let [x, y, z] = s.view_dir;
                sh[3 + ch] = -SH_C1 * y * gc3[ch];
                sh[6 + ch] = SH_C1 * z * gc3[ch];
                sh[9 + ch] = -SH_C1 * x * gc3[ch];
                g_dir[0] += -SH_C1 * f[9 + ch] * gc3[ch];
                g_dir[1] += -SH_C1 * f[3 + ch] * gc3[ch];
                g_dir[2] += SH_C1 * f[6 + ch] * gc3[ch];
            }
        }
        let mut g_mu_i = pg.mu;
        if inp.sh_degree >= 1 && s.view_norm > 0.0 {
            let d = s.view_dir;
            let dot = d[0] * g_dir[0] + d[1] * g_dir[1] + d[2] * g_dir[2];
            for k in 0..3 {
                g_mu_i[k] += (g_dir[k] - d[k] * dot) / s.view_norm;
            }
        }
        g_mu.row_slice_mut(i).copy_from_slice(&g_mu_i);
        g_ls.row_slice_mut(i).copy_from_slice(&pg.log_scale);
        g_q.row_slice_mut(i).copy_from_slice(&pg.quat);
    }
    Ok([g_mu, g_ls, g_q, g_logit, g_sh])
}

struct RenderOp {
    camera: Camera,
    sh_degree: usize,
}

impl CustomOp for RenderOp {
    fn name(&self) -> &'static str {
        "gaussian_render"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let inp = SplatInputs {
            mu: inputs[0],
            log_scale: inputs[1],
            quat: inputs[2],
            alpha_logit: inputs[3],
            sh: inputs[4],
            sh_degree: self.sh_degree,
        };
        // Inputs were validated in the forward pass.
        let grads = backward(&inp, &self.camera, grad_out.data()).expect("validated splat inputs");
        grads.into_iter().map(Some).collect()
    }
}

/// Graph version of [`render`]. Returns an `(H*W) x 4` node holding
/// `R, G, B, A` per pixel, plus the skipped-primitive count.
pub fn render_graph(
    s: &mut Session,
    mu: Var,
    log_scale: Var,
    quat: Var,
    alpha_logit: Var,
    sh: Var,
    sh_degree: usize,
    cam: &Camera,
) -> Result<(Var, usize)> {
    let out = {
        let inp = SplatInputs {
            mu: s.value(mu),
            log_scale: s.value(log_scale),
            quat: s.value(quat),
            alpha_logit: s.value(alpha_logit),
            sh: s.value(sh),
            sh_degree,
        };
        render(&inp, cam)?
    };
    let pixels = out.width * out.height;
    let mut data = Vec::with_capacity(pixels * 4);
    for p in 0..pixels {
        data.extend_from_slice(&out.color[p * 3..p * 3 + 3]);
        data.push(out.alpha[p]);
    }
    let op = RenderOp {
        camera: cam.clone(),
        sh_degree,
    };
    let v = s
        .graph
        .custom(Box::new(op), &[mu, log_scale, quat, alpha_logit, sh], Tensor::new(&[pixels, 4], data)?);
    Ok((v, out.skipped))
}
