//! Deterministic synthetic talking-head scenes with known AU ground truth.

pub mod au;
pub mod audio;
pub mod head;
pub mod ridge;
pub mod rig;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use au::gen_au_traj;
pub use audio::gen_audio_features;
pub use ridge::{ridge_oracle, RidgeReport};
pub use rig::{Rig, LANDMARKS};

use crate::cmdm::{AU_IDS, AU_MAX};
use crate::error::{shape_err, Error, Result};
use crate::gaussian_field::{GaussianField, GeometrySpec};
use crate::image::Image;
use crate::render::{blend_head, render, BlendMode, Camera, RenderOutput, SplatInputs};
use crate::tensor::Tensor;

/// Generator settings; `seed` and `frames` travel with the config so a bundle
/// can be regenerated from its manifest alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub face_prims: usize,
    pub mouth_prims: usize,
    pub noise_sigma: f64,
    pub blend_mode: BlendMode,
    pub camera_distance: f64,
    /// Focal length in pixels per 64 pixels of image width.
    pub focal_per_64: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 500,
            width: 64,
            height: 64,
            face_prims: 2000,
            mouth_prims: 200,
            noise_sigma: 0.01,
            blend_mode: BlendMode::AsWritten,
            camera_distance: 3.0,
            focal_per_64: 90.0,
        }
    }
}

impl SynthConfig {
    /// 128 x 128 preset.
    pub fn large() -> Self {
        Self { width: 128, height: 128, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frames < 8 {
            return bad(format!("frames must be >= 8, got {}", self.frames));
        }
        if self.width < 16 || self.height < 16 {
            return bad(format!("image must be at least 16x16, got {}x{}", self.width, self.height));
        }
        if self.face_prims <= LANDMARKS || self.mouth_prims == 0 {
            return bad(format!(
                "need more than {LANDMARKS} face and at least 1 mouth primitive, got {}/{}",
                self.face_prims, self.mouth_prims
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if !(self.camera_distance > 1.0 && self.camera_distance.is_finite()) {
            return bad(format!("camera_distance must exceed 1, got {}", self.camera_distance));
        }
        if !(self.focal_per_64 > 0.0 && self.focal_per_64.is_finite()) {
            return bad(format!("focal_per_64 must be positive, got {}", self.focal_per_64));
        }
        Ok(())
    }

    pub fn camera(&self) -> Camera {
        Camera::frontal(
            self.width,
            self.height,
            self.camera_distance,
            self.focal_per_64 * self.width as f64 / 64.0,
        )
    }
}

/// Everything the trainer and evaluator need about one synthetic scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub config: SynthConfig,
    /// `T x 17`.
    pub au_traj: Tensor,
    /// `T x 512`.
    pub audio: Tensor,
    pub face_geom: GeometrySpec,
    pub mouth_geom: GeometrySpec,
    pub camera: Camera,
    /// Blended RGB frames (unclamped).
    pub frames: Vec<Image>,
    /// Premultiplied RGBA of each branch per frame.
    pub face_layers: Vec<Image>,
    pub mouth_layers: Vec<Image>,
    /// Branch layers at zero AUs.
    pub neutral_face: Image,
    pub neutral_mouth: Image,
    /// `T x 20 x 2`, pixels.
    pub landmarks: Tensor,
}

impl SceneBundle {
    pub fn len(&self) -> usize {
        self.au_traj.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn landmarks_at(&self, t: usize) -> &[f64] {
        &self.landmarks.data()[t * LANDMARKS * 2..(t + 1) * LANDMARKS * 2]
    }
}

/// Renders oracle geometry under the analytic rig.
#[derive(Clone, Debug)]
pub struct SceneRenderer {
    rig: Rig,
    face: GaussianField,
    mouth: GaussianField,
    camera: Camera,
    blend: BlendMode,
}

/// One rendered frame.
pub struct FrameLayers {
    pub face: Image,
    pub mouth: Image,
    pub blended: Image,
}

fn rgba(out: &RenderOutput) -> Result<Image> {
    let p = out.width * out.height;
    let mut data = Vec::with_capacity(p * 4);
    for i in 0..p {
        data.extend_from_slice(&out.color[i * 3..i * 3 + 3]);
        data.push(out.alpha[i]);
    }
    Image::new(out.width, out.height, 4, data)
}

impl SceneRenderer {
    pub fn new(face: &GeometrySpec, mouth: &GeometrySpec, camera: Camera, blend: BlendMode) -> Result<Self> {
        Ok(Self {
            rig: Rig::new(),
            face: GaussianField::from_spec_exact(face, 0)?,
            mouth: GaussianField::from_spec_exact(mouth, 0)?,
            camera,
            blend,
        })
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    fn deformed(&self, field: &GaussianField, au: &[f64]) -> Tensor {
        let mut mu = field.mu.clone();
        for i in 0..field.len() {
            let row = mu.row_slice_mut(i);
            let d = self.rig.displacement([row[0], row[1]], au);
            row[0] += d[0];
            row[1] += d[1];
        }
        mu
    }

    fn layer(&self, field: &GaussianField, au: &[f64]) -> Result<Image> {
        let mu = self.deformed(field, au);
        let out = render(
            &SplatInputs {
                mu: &mu,
                log_scale: &field.log_scale,
                quat: &field.quat,
                alpha_logit: &field.alpha_logit,
                sh: &field.sh,
                sh_degree: field.sh_degree,
            },
            &self.camera,
        )?;
        rgba(&out)
    }

    pub fn frame(&self, au: &[f64]) -> Result<FrameLayers> {
        if au.len() != AU_IDS.len() {
            return shape_err(format!("AU vector of length {}", au.len()));
        }
        let face = self.layer(&self.face, au)?;
        let mouth = self.layer(&self.mouth, au)?;
        let (w, h) = (face.width, face.height);
        let split = |img: &Image| -> (Vec<f64>, Vec<f64>) {
            let c = img.data.chunks(4).flat_map(|p| p[..3].to_vec()).collect();
            let a = img.data.chunks(4).map(|p| p[3]).collect();
            (c, a)
        };
        let (cf, af) = split(&face);
        let (cm, am) = split(&mouth);
        let head = blend_head(w, h, &cf, &af, &cm, &am, self.blend)?;
        Ok(FrameLayers { face, mouth, blended: Image::new(w, h, 3, head.color)? })
    }

    /// Pixel positions of the 20 landmark primitives (`40` values).
    pub fn landmarks(&self, au: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(LANDMARKS * 2);
        for i in 0..LANDMARKS {
            let p = self.face.mu.row_slice(i);
            let d = self.rig.displacement([p[0], p[1]], au);
            let px = self
                .camera
                .project_point([p[0] + d[0], p[1] + d[1], p[2]])
                .ok_or_else(|| Error::Data(format!("landmark {i} is behind the camera")))?;
            out.extend_from_slice(&px);
        }
        Ok(out)
    }
}

/// Builds a complete bundle; bitwise reproducible from `config`.
pub fn gen_scene(config: &SynthConfig) -> Result<SceneBundle> {
    config.validate()?;
    let au_traj = gen_au_traj(config.seed, config.frames)?;
    let audio = gen_audio_features(&au_traj, config.seed, config.noise_sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(4);
    let face_geom = head::face_geometry(&mut rng, config.face_prims)?;
    let mouth_geom = head::mouth_geometry(&mut rng, config.mouth_prims)?;
    let camera = config.camera();
    let renderer = SceneRenderer::new(&face_geom, &mouth_geom, camera.clone(), config.blend_mode)?;
    let neutral = renderer.frame(&[0.0; 17])?;
    let mut frames = Vec::with_capacity(config.frames);
    let mut face_layers = Vec::with_capacity(config.frames);
    let mut mouth_layers = Vec::with_capacity(config.frames);
    let mut lm = Vec::with_capacity(config.frames * LANDMARKS * 2);
    for t in 0..config.frames {
        let au = au_traj.row_slice(t);
        let f = renderer.frame(au)?;
        frames.push(f.blended);
        face_layers.push(f.face);
        mouth_layers.push(f.mouth);
        lm.extend(renderer.landmarks(au)?);
    }
    Ok(SceneBundle {
        config: config.clone(),
        au_traj,
        audio,
        face_geom,
        mouth_geom,
        camera,
        frames,
        face_layers,
        mouth_layers,
        neutral_face: neutral.face,
        neutral_mouth: neutral.mouth,
        landmarks: Tensor::new(&[config.frames, LANDMARKS, 2], lm)?,
    })
}

/// Recovers AU intensities from tracked landmarks through the rig's exact
/// landmark Jacobian (the rig moves points in `xy` at fixed depth, so the
/// pixel motion is linear in the AUs).
#[derive(Clone, Debug)]
pub struct AuEstimator {
    neutral: Vec<f64>,
    jacobian: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl AuEstimator {
    pub fn new(renderer: &SceneRenderer) -> Result<Self> {
        let neutral = renderer.landmarks(&[0.0; 17])?;
        let mut jacobian = DMatrix::zeros(LANDMARKS * 2, AU_IDS.len());
        for k in 0..AU_IDS.len() {
            let mut au = [0.0; 17];
            au[k] = 1.0;
            let lm = renderer.landmarks(&au)?;
            for r in 0..LANDMARKS * 2 {
                jacobian[(r, k)] = lm[r] - neutral[r];
            }
        }
        let pinv = jacobian
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::NonFinite(format!("landmark Jacobian pseudo-inverse: {e}")))?;
        Ok(Self { neutral, jacobian, pinv })
    }

    pub fn from_bundle(bundle: &SceneBundle) -> Result<Self> {
        Self::new(&SceneRenderer::new(
            &bundle.face_geom,
            &bundle.mouth_geom,
            bundle.camera.clone(),
            bundle.config.blend_mode,
        )?)
    }

    /// Landmarks of the zero-AU face (40 values).
    pub fn neutral(&self) -> &[f64] {
        &self.neutral
    }

    /// Singular values of the `40 x 17` landmark Jacobian, descending.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.jacobian.clone().singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// AU estimate (clamped to `[0, 5]`) for one frame of 40 landmark values.
    pub fn estimate(&self, landmarks: &[f64]) -> Result<[f64; 17]> {
        if landmarks.len() != LANDMARKS * 2 {
            return shape_err(format!("{} landmark values, expected {}", landmarks.len(), LANDMARKS * 2));
        }
        let d = DMatrix::from_fn(LANDMARKS * 2, 1, |r, _| landmarks[r] - self.neutral[r]);
        let a = &self.pinv * d;
        Ok(std::array::from_fn(|k| a[k].clamp(0.0, AU_MAX)))
    }

    /// Estimates for a `T x 20 x 2` landmark tensor, as `T x 17`.
    pub fn estimate_all(&self, landmarks: &Tensor) -> Result<Tensor> {
        let per = LANDMARKS * 2;
        if landmarks.len() % per != 0 {
            return shape_err(format!("landmark tensor {:?}", landmarks.shape()));
        }
        let mut out = Vec::with_capacity(landmarks.len() / per * 17);
        for lm in landmarks.data().chunks(per) {
            out.extend(self.estimate(lm)?);
        }
        Tensor::new(&[landmarks.len() / per, 17], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdm::au_slot;

    fn small(frames: usize) -> SynthConfig {
        SynthConfig { frames, face_prims: 600, mouth_prims: 60, ..SynthConfig::default() }
    }

    #[test]
    fn same_config_gives_identical_bundles() {
        let a = gen_scene(&small(8)).unwrap();
        let b = gen_scene(&small(8)).unwrap();
        assert_eq!(a, b);
        let c = gen_scene(&SynthConfig { seed: 1, ..small(8) }).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn zero_aus_reproduce_the_canonical_render() {
        let cfg = small(8);
        let mut b = gen_scene(&cfg).unwrap();
        let r = SceneRenderer::new(&b.face_geom, &b.mouth_geom, b.camera.clone(), cfg.blend_mode).unwrap();
        b.au_traj = Tensor::zeros(&[8, 17]);
        let neutral = r.frame(&[0.0; 17]).unwrap();
        for t in 0..8 {
            let f = r.frame(b.au_traj.row_slice(t)).unwrap();
            assert_eq!(f.blended, neutral.blended);
        }
        assert_eq!(neutral.face, b.neutral_face);
    }

    #[test]
    fn doubling_jaw_opening_doubles_chin_motion() {
        let b = gen_scene(&small(8)).unwrap();
        let r = SceneRenderer::new(&b.face_geom, &b.mouth_geom, b.camera.clone(), BlendMode::AsWritten).unwrap();
        let chin_y = |v: f64| {
            let mut au = [0.0; 17];
            au[au_slot(25).unwrap()] = v;
            r.landmarks(&au).unwrap()[16 * 2 + 1]
        };
        let base = chin_y(0.0);
        let d1 = chin_y(1.5) - base;
        let d2 = chin_y(3.0) - base;
        assert!(d1 > 0.1, "chin moved {d1} px");
        assert!((d2 - 2.0 * d1).abs() < 1e-9 * d1.abs().max(1.0));
    }

    #[test]
    fn jacobian_has_full_rank_and_estimator_inverts_the_rig() {
        let b = gen_scene(&small(40)).unwrap();
        let est = AuEstimator::from_bundle(&b).unwrap();
        let s = est.singular_values();
        assert_eq!(s.len(), 17);
        let cond = s[0] / s[16];
        assert!(s[16] > 1e-3 && cond < 1e3, "singular values {s:?}");
        let recovered = est.estimate_all(&b.landmarks).unwrap();
        let err = recovered.data().iter().zip(b.au_traj.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "max AU error {err}");
    }

    #[test]
    fn shapes_and_ranges() {
        let b = gen_scene(&small(10)).unwrap();
        assert_eq!(b.audio.shape(), &[10, 512]);
        assert_eq!(b.landmarks.shape(), &[10, 20, 2]);
        assert_eq!(b.frames.len(), 10);
        assert!(b.face_layers.iter().all(|l| l.channels == 4 && l.data.iter().all(|v| v.is_finite())));
        assert!(b.au_traj.data().iter().all(|v| (0.0..=5.0).contains(v)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            SynthConfig { frames: 4, ..small(8) },
            SynthConfig { width: 8, ..small(8) },
            SynthConfig { face_prims: 20, ..small(8) },
            SynthConfig { noise_sigma: f64::NAN, ..small(8) },
            SynthConfig { camera_distance: 0.5, ..small(8) },
        ] {
            assert!(matches!(gen_scene(&cfg), Err(Error::Config(_))));
        }
    }
}
