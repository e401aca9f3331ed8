//! Browser bindings: an AU-driven head on the synthetic rig, a per-pixel
//! compositing explorer and a gated-fusion explorer.

use wasm_bindgen::prelude::*;

use gausstalk::cmdm::AU_IDS;
use gausstalk::diffmath::{ParamStore, Session};
use gausstalk::hmmm::gated_fuse;
use gausstalk::image::Image;
use gausstalk::render::{composite_pixel, BlendMode};
use gausstalk::synth::{gen_scene, AuEstimator, SceneRenderer, SynthConfig};
use gausstalk::Tensor;

fn js(e: gausstalk::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn rgba(img: &Image) -> Vec<u8> {
    let rgb = img.to_u8();
    rgb.chunks(img.channels).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

/// The synthetic head, renderable under either blend mode.
#[wasm_bindgen]
pub struct HeadDemo {
    as_written: SceneRenderer,
    face_complement: SceneRenderer,
    estimator: AuEstimator,
    size: usize,
}

#[wasm_bindgen]
impl HeadDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, size: usize, face_prims: usize, mouth_prims: usize) -> Result<HeadDemo, JsError> {
        let cfg = SynthConfig { seed, frames: 8, width: size, height: size, face_prims, mouth_prims, ..SynthConfig::default() };
        let b = gen_scene(&cfg).map_err(js)?;
        let mk = |mode| SceneRenderer::new(&b.face_geom, &b.mouth_geom, b.camera.clone(), mode).map_err(js);
        let as_written = mk(BlendMode::AsWritten)?;
        Ok(HeadDemo {
            estimator: AuEstimator::new(&as_written).map_err(js)?,
            face_complement: mk(BlendMode::FaceComplement)?,
            as_written,
            size,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Labels of the 17 AU sliders, in input order.
    pub fn au_names() -> Vec<String> {
        AU_IDS.iter().map(|id| format!("AU{id:02}")).collect()
    }

    fn renderer(&self, face_complement: bool) -> &SceneRenderer {
        if face_complement {
            &self.face_complement
        } else {
            &self.as_written
        }
    }

    /// RGBA bytes of the blended head (`layer` 0), the face layer (1) or the
    /// mouth layer (2).
    pub fn render(&self, aus: &[f64], face_complement: bool, layer: u8) -> Result<Vec<u8>, JsError> {
        let f = self.renderer(face_complement).frame(aus).map_err(js)?;
        Ok(match layer {
            1 => rgba(&f.face),
            2 => rgba(&f.mouth),
            _ => rgba(&f.blended),
        })
    }

    /// 20 landmarks as interleaved pixel `x, y`.
    pub fn landmarks(&self, aus: &[f64]) -> Result<Vec<f64>, JsError> {
        self.as_written.landmarks(aus).map_err(js)
    }

    /// AUs recovered from the landmarks of `aus` (clamped to `[0, 5]`).
    pub fn recover(&self, aus: &[f64]) -> Result<Vec<f64>, JsError> {
        let lm = self.as_written.landmarks(aus).map_err(js)?;
        Ok(self.estimator.estimate(&lm).map_err(js)?.to_vec())
    }
}

/// Front-to-back compositing of one pixel. `colors` holds `r, g, b` per
/// primitive, nearest first. Returns `r, g, b, A` followed by each
/// primitive's blending weight `a_i T_i`.
#[wasm_bindgen]
pub fn composite(colors: &[f64], alphas: &[f64]) -> Result<Vec<f64>, JsError> {
    if colors.len() != alphas.len() * 3 {
        return Err(JsError::new(&format!("{} colour values for {} primitives", colors.len(), alphas.len())));
    }
    if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(JsError::new("opacities must lie in [0, 1]"));
    }
    let stack: Vec<([f64; 3], f64)> = colors.chunks(3).zip(alphas).map(|(c, &a)| ([c[0], c[1], c[2]], a)).collect();
    let (c, a) = composite_pixel(&stack);
    let mut out = vec![c[0], c[1], c[2], a];
    for k in 0..stack.len() {
        let (_, a_before) = composite_pixel(&stack[..k]);
        let (_, a_with) = composite_pixel(&stack[..=k]);
        out.push(a_with - a_before);
    }
    Ok(out)
}

/// `alpha * c_e + (1 - alpha) * c_i`, element-wise.
#[wasm_bindgen]
pub fn fuse(alpha: &[f64], c_i: &[f64], c_e: &[f64]) -> Result<Vec<f64>, JsError> {
    let store = ParamStore::new();
    let mut s = Session::inference(&store);
    let mut row = |v: &[f64]| s.constant(Tensor::row(v));
    let (a, i, e) = (row(alpha), row(c_i), row(c_e));
    let f = gated_fuse(&mut s, a, i, e).map_err(js)?;
    Ok(s.value(f).data().to_vec())
}
