use serde::{Deserialize, Serialize};

use crate::diffmath::{Session, Var};
use crate::error::{shape_err, Result};

/// How the face and mouth layers are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlendMode {
    /// `C_face * A_face + C_mouth * (1 - A_mouth)`.
    #[default]
    AsWritten,
    /// `C_face * A_face + C_mouth * (1 - A_face)`.
    FaceComplement,
}

impl BlendMode {
    pub fn name(self) -> &'static str {
        match self {
            BlendMode::AsWritten => "as-written",
            BlendMode::FaceComplement => "face-complement",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "as-written" => Some(BlendMode::AsWritten),
            "face-complement" => Some(BlendMode::FaceComplement),
            _ => None,
        }
    }
}

/// Blended head image (`H x W x 3`, unclamped) tagged with its mode.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadImage {
    pub width: usize,
    pub height: usize,
    pub color: Vec<f64>,
    pub mode: BlendMode,
}

impl HeadImage {
    pub fn clamped(&self) -> Vec<f64> {
        self.color.iter().map(|v| v.clamp(0.0, 1.0)).collect()
    }
}

/// Blends per-pixel color (`H*W*3`) and alpha (`H*W`) maps of both branches.
pub fn blend_head(
    width: usize,
    height: usize,
    c_face: &[f64],
    a_face: &[f64],
    c_mouth: &[f64],
    a_mouth: &[f64],
    mode: BlendMode,
) -> Result<HeadImage> {
    let p = width * height;
    if c_face.len() != p * 3 || c_mouth.len() != p * 3 || a_face.len() != p || a_mouth.len() != p {
        return shape_err(format!(
            "blend inputs {}/{}/{}/{} for a {width}x{height} image",
            c_face.len(),
            a_face.len(),
            c_mouth.len(),
            a_mouth.len()
        ));
    }
    let mut color = Vec::with_capacity(p * 3);
    for i in 0..p {
        let wm = match mode {
            BlendMode::AsWritten => 1.0 - a_mouth[i],
            BlendMode::FaceComplement => 1.0 - a_face[i],
        };
        for ch in 0..3 {
            color.push(c_face[i * 3 + ch] * a_face[i] + c_mouth[i * 3 + ch] * wm);
        }
    }
    Ok(HeadImage {
        width,
        height,
        color,
        mode,
    })
}

/// Graph version over two `(H*W) x 4` RGBA render nodes; returns `(H*W) x 3`.
pub fn blend_head_graph(s: &mut Session, face: Var, mouth: Var, mode: BlendMode) -> Result<Var> {
    if s.value(face).shape() != s.value(mouth).shape() || s.value(face).cols() != 4 {
        return shape_err(format!(
            "blend nodes {:?} and {:?}",
            s.value(face).shape(),
            s.value(mouth).shape()
        ));
    }
    let g = &mut s.graph;
    let c_face = g.slice_cols(face, 0, 3)?;
    let a_face = g.slice_cols(face, 3, 4)?;
    let c_mouth = g.slice_cols(mouth, 0, 3)?;
    let a_weight = match mode {
        BlendMode::AsWritten => g.slice_cols(mouth, 3, 4)?,
        BlendMode::FaceComplement => a_face,
    };
    let w_mouth = g.one_minus(a_weight);
    let f = g.mul_col(c_face, a_face)?;
    let m = g.mul_col(c_mouth, w_mouth)?;
    g.add(f, m)
}
