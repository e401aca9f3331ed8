use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera with a world-to-camera rigid transform. Camera space is
/// x right, y down, z forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
        focal: [f64; 2],
        principal: [f64; 2],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| rotation[i][k] * rotation[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return Err(Error::Contract("camera rotation is not orthonormal".into()));
                }
            }
        }
        if width == 0 || height == 0 {
            return Err(Error::Contract("camera image size must be positive".into()));
        }
        Ok(Self {
            rotation,
            translation,
            fx: focal[0],
            fy: focal[1],
            cx: principal[0],
            cy: principal[1],
            width,
            height,
        })
    }

    /// Camera on the +z axis at `distance`, looking at the origin with world
    /// +y up. `focal` is in pixels.
    pub fn frontal(width: usize, height: usize, distance: f64, focal: f64) -> Self {
        Self::new(
            [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]],
            [0.0, 0.0, distance],
            [focal, focal],
            [width as f64 * 0.5, height as f64 * 0.5],
            width,
            height,
        )
        .expect("axis-aligned rotation is orthonormal")
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + self.translation[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + self.translation[2],
        ]
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = self.translation;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }

    /// Pixel coordinates of a world point, `None` behind the near plane.
    pub fn project_point(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        let c = self.to_camera(p);
        if c[2] <= super::NEAR_PLANE {
            return None;
        }
        Some([self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy])
    }
}
