//! Differentiable CPU Gaussian splatting.
//!
//! Primitives are projected with the EWA Jacobian, depth sorted once
//! globally, binned into 16x16 pixel tiles and alpha composited front to back.

mod blend;
mod camera;
mod composite;
mod project;
mod raster;

pub use blend::{blend_head, blend_head_graph, BlendMode, HeadImage};
pub use camera::Camera;
pub use composite::{composite_pixel, TRANSMITTANCE_EPS};
pub use project::{project_gaussian, quat_to_rotation, Projection, COV_REGULARIZATION, NEAR_PLANE};
pub use raster::{render, render_graph, RenderOutput, SplatInputs, TILE_SIZE};

/// Band-0 spherical-harmonic constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
/// Band-1 spherical-harmonic constant.
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

/// Color of one primitive from its SH coefficients (laid out as
/// `[coeff * 3 + channel]`) for a unit view direction. Not clamped.
pub fn sh_to_color(f: &[f64], degree: usize, view_dir: [f64; 3]) -> [f64; 3] {
    let mut c = [0.5; 3];
    for (ch, v) in c.iter_mut().enumerate() {
        *v += SH_C0 * f[ch];
        if degree >= 1 {
            let [x, y, z] = view_dir;
            *v += -SH_C1 * y * f[3 + ch] + SH_C1 * z * f[6 + ch] - SH_C1 * x * f[9 + ch];
        }
    }
    c
}
