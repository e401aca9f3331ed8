//! Oracle geometry: an ellipsoidal face shell with painted features and a
//! mouth-cavity layer behind a lip slit.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rig::{ANCHORS, LANDMARKS};
use crate::error::{Error, Result};
use crate::gaussian_field::{Branch, GeometrySpec, PrimitiveSpec};

/// Head ellipsoid semi-axes.
pub const SEMI_AXES: [f64; 3] = [0.55, 0.72, 0.5];
/// Center and half-axes of the lip slit left open in the face shell.
pub const SLIT: ([f64; 2], [f64; 2]) = ([0.0, -0.30], [0.12, 0.015]);
/// Center and half-axes of the mouth cavity.
pub const CAVITY: ([f64; 2], [f64; 2]) = ([0.0, -0.31], [0.14, 0.08]);
/// Depth of the cavity behind the face surface.
pub const CAVITY_DEPTH: f64 = 0.06;
const FACE_OPACITY: f64 = 0.95;
const CAVITY_OPACITY: f64 = 0.9;
const RIM: f64 = 0.97;

fn inside(p: [f64; 2], center: [f64; 2], half: [f64; 2]) -> f64 {
    let u = (p[0] - center[0]) / half[0];
    let v = (p[1] - center[1]) / half[1];
    u * u + v * v
}

/// `z` of the front surface at `xy` (clamped to the rim).
pub fn surface_z(xy: [f64; 2]) -> f64 {
    let [a, b, c] = SEMI_AXES;
    let r = (xy[0] / a).powi(2) + (xy[1] / b).powi(2);
    c * (1.0 - r.min(1.0)).sqrt()
}

fn surface_normal(p: [f64; 3]) -> [f64; 3] {
    let [a, b, c] = SEMI_AXES;
    let n = [p[0] / (a * a), p[1] / (b * b), p[2] / (c * c)];
    let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    [n[0] / l, n[1] / l, n[2] / l]
}

/// Quaternion turning local `+z` onto `n`.
fn align_z(n: [f64; 3]) -> [f64; 4] {
    let q = [1.0 + n[2], -n[1], n[0], 0.0];
    let l = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / l)
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1])).clamp(0.0, 1.0);
    ((p[0] - a[0] - t * d[0]).powi(2) + (p[1] - a[1] - t * d[1]).powi(2)).sqrt()
}

const SKIN: [f64; 3] = [0.82, 0.62, 0.50];

/// Painted albedo of the face shell, before shading.
fn face_albedo(p: [f64; 2]) -> [f64; 3] {
    let x = p[0].abs();
    let q = [x, p[1]];
    if inside(q, [0.03, -0.08], [0.015, 0.015]) <= 1.0 {
        return [0.25, 0.12, 0.1];
    }
    if inside(q, [0.22, 0.16], [0.025, 0.025]) <= 1.0 {
        return [0.2, 0.3, 0.5];
    }
    if inside(q, [0.22, 0.16], [0.07, 0.035]) <= 1.0 {
        return [0.92, 0.92, 0.9];
    }
    if segment_distance(q, [0.12, 0.30], [0.33, 0.32]) < 0.025 {
        return [0.28, 0.18, 0.12];
    }
    if inside(p, [0.0, -0.30], [0.17, 0.06]) <= 1.0 {
        return [0.72, 0.28, 0.3];
    }
    if inside(p, [0.0, 0.02], [0.05, 0.12]) <= 1.0 {
        return SKIN.map(|v| v * 0.85);
    }
    SKIN
}

fn cavity_albedo(p: [f64; 2]) -> [f64; 3] {
    if p[1] > -0.29 {
        [0.9, 0.88, 0.82]
    } else {
        [0.3, 0.05, 0.08]
    }
}

/// Jittered grid over the points accepted by `keep`, thinned at random to
/// exactly `count` points.
fn sample_points(
    rng: &mut ChaCha8Rng,
    count: usize,
    bounds: [f64; 4],
    area: f64,
    keep: impl Fn([f64; 2]) -> bool,
) -> Result<(Vec<[f64; 2]>, f64)> {
    if count == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let mut h = (area / count as f64).sqrt();
    for _ in 0..60 {
        let mut pts = Vec::new();
        let mut y = bounds[1] + 0.5 * h;
        while y < bounds[3] {
            let mut x = bounds[0] + 0.5 * h;
            while x < bounds[2] {
                let p = [x + rng.random_range(-0.3..0.3) * h, y + rng.random_range(-0.3..0.3) * h];
                if keep(p) {
                    pts.push(p);
                }
                x += h;
            }
            y += h;
        }
        if pts.len() >= count {
            let mut idx: Vec<usize> = (0..pts.len()).collect();
            idx.shuffle(rng);
            idx.truncate(count);
            idx.sort_unstable();
            return Ok((idx.into_iter().map(|i| pts[i]).collect(), h));
        }
        h *= 0.97;
    }
    Err(Error::Config(format!("could not place {count} primitives")))
}

/// Face shell with the 20 landmark primitives at indices `0..20`, followed by
/// `count - 20` grid primitives.
pub fn face_geometry(rng: &mut ChaCha8Rng, count: usize) -> Result<GeometrySpec> {
    if count < LANDMARKS + 1 {
        return Err(Error::Config(format!("face needs more than {LANDMARKS} primitives, got {count}")));
    }
    let [a, b, _] = SEMI_AXES;
    let area = std::f64::consts::PI * a * b * RIM;
    let (pts, h) = sample_points(rng, count - LANDMARKS, [-a, -b, a, b], area, |p| {
        inside(p, [0.0, 0.0], [a, b]) <= RIM && inside(p, SLIT.0, SLIT.1) > 1.0
    })?;
    let sigma = 0.9 * h;
    let primitives = ANCHORS
        .iter()
        .copied()
        .chain(pts)
        .map(|xy| {
            let pos = [xy[0], xy[1], surface_z(xy)];
            let n = surface_normal(pos);
            let shade = 0.55 + 0.45 * n[2];
            PrimitiveSpec {
                position: pos,
                scale: [sigma, sigma, sigma * 0.35],
                rotation: align_z(n),
                opacity: FACE_OPACITY,
                color: face_albedo(xy).map(|c| c * shade),
            }
        })
        .collect();
    Ok(GeometrySpec { branch: Branch::Face, primitives })
}

/// Mouth cavity: a dark disc with a teeth band, set behind the lip slit.
pub fn mouth_geometry(rng: &mut ChaCha8Rng, count: usize) -> Result<GeometrySpec> {
    if count == 0 {
        return Err(Error::Config("mouth needs at least one primitive".into()));
    }
    let (c, r) = CAVITY;
    let area = std::f64::consts::PI * r[0] * r[1];
    let (pts, h) = sample_points(rng, count, [c[0] - r[0], c[1] - r[1], c[0] + r[0], c[1] + r[1]], area, |p| {
        inside(p, c, r) <= 1.0
    })?;
    let sigma = 0.9 * h;
    let primitives = pts
        .into_iter()
        .map(|xy| PrimitiveSpec {
            position: [xy[0], xy[1], surface_z(xy) - CAVITY_DEPTH],
            scale: [sigma, sigma, 0.008],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: CAVITY_OPACITY,
            color: cavity_albedo(xy),
        })
        .collect();
    Ok(GeometrySpec { branch: Branch::Mouth, primitives })
}
