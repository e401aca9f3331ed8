//! Inference and evaluation: rendering frames from a checkpoint and scoring
//! rendered directories against a bundle.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{config_hash, Checkpoint};
use crate::diffmath::Session;
use crate::error::{Error, Result};
use crate::hmmm::FusionPath;
use crate::image::Image;
use crate::io::bundle::{image_tensor, tensor_image};
use crate::io::{hmtk, write_png};
use crate::metrics::{aue, lmd, perceptual_proxy, psnr, ssim};
use crate::model::{FrameInput, Model};
use crate::render::{blend_head_graph, BlendMode};
use crate::synth::{AuEstimator, SceneBundle, LANDMARKS};
use crate::tensor::Tensor;

pub const RENDER_FORMAT: &str = "gausstalk-render";
pub const RENDER_VERSION: u32 = 1;
const RENDER_MANIFEST: &str = "render.toml";

/// Conditioning used at inference time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Drive {
    /// Lower face from the audio path, upper face from the true upper AUs.
    #[default]
    Audio,
    /// Vanilla path on AUs recovered from the reference landmarks.
    Image,
}

impl Drive {
    pub fn name(self) -> &'static str {
        match self {
            Drive::Audio => "audio",
            Drive::Image => "image",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "audio" => Some(Drive::Audio),
            "image" => Some(Drive::Image),
            _ => None,
        }
    }
}

/// One rendered frame: unclamped `H x W x 3` colour and 20 pixel landmarks.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub index: usize,
    pub image: Image,
    pub landmarks: Vec<f64>,
}

/// Metadata written next to rendered frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderManifest {
    pub format: String,
    pub version: u32,
    pub drive: Drive,
    pub blend_mode: BlendMode,
    pub start: usize,
    pub end: usize,
    pub config_hash: String,
}

impl RenderManifest {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// A trained model bound to the bundle it renders.
pub struct FrameRenderer<'b> {
    model: Model,
    bundle: &'b SceneBundle,
    estimator: AuEstimator,
    hash: String,
}

impl<'b> FrameRenderer<'b> {
    /// Rebuilds the model from a checkpoint, refusing one trained on a
    /// different scene or architecture.
    pub fn from_checkpoint(ckpt: &Checkpoint, bundle: &'b SceneBundle) -> Result<Self> {
        let hash = config_hash(&bundle.config, &ckpt.model);
        ckpt.check_compatible(&hash)?;
        let mut model = Model::new(&ckpt.model, &bundle.face_geom, &bundle.mouth_geom, 5e-4, ckpt.train_seed)?;
        ckpt.restore_into(&mut model.store)?;
        Self::from_model(model, bundle)
    }

    pub fn from_model(model: Model, bundle: &'b SceneBundle) -> Result<Self> {
        let hash = config_hash(&bundle.config, &model.config);
        Ok(Self { model, bundle, estimator: AuEstimator::from_bundle(bundle)?, hash })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    /// Conditioning and fusion path for frame `t` under `drive`.
    pub fn input(&self, t: usize, drive: Drive) -> Result<(FrameInput, FusionPath)> {
        self.check_index(t)?;
        let b = self.bundle;
        Ok(match drive {
            Drive::Audio => (FrameInput::new(b.au_traj.row_slice(t), &b.audio, t)?, FusionPath::Audio),
            Drive::Image => (
                FrameInput::new(&self.estimator.estimate(b.landmarks_at(t))?, &b.audio, t)?,
                FusionPath::Vanilla,
            ),
        })
    }

    fn check_index(&self, t: usize) -> Result<()> {
        if t >= self.bundle.len() {
            return Err(Error::Data(format!("frame {t} outside a {}-frame bundle", self.bundle.len())));
        }
        Ok(())
    }

    pub fn frame(&self, t: usize, drive: Drive) -> Result<RenderedFrame> {
        let (input, path) = self.input(t, drive)?;
        let cam = &self.bundle.camera;
        let mut s = Session::new(&self.model.store, |_| false);
        let nodes = self.model.forward(&mut s, cam, &input, path, None)?;
        let head = blend_head_graph(&mut s, nodes.face, nodes.mouth, self.bundle.config.blend_mode)?;
        let image = Image::new(cam.width, cam.height, 3, s.value(head).data().to_vec())?;
        let landmarks = self.model.landmarks(&s, &nodes, cam, self.estimator.neutral())?;
        Ok(RenderedFrame { index: t, image, landmarks })
    }

    /// Renders `range` in order.
    pub fn frames(&self, range: Range<usize>, drive: Drive) -> Result<Vec<RenderedFrame>> {
        range.map(|t| self.frame(t, drive)).collect()
    }
}

fn frame_paths(dir: &Path, t: usize) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join(format!("{t:05}.png")), dir.join(format!("{t:05}.hmtk")), dir.join(format!("{t:05}.lm.hmtk")))
}

/// Writes a PNG preview, the lossless colour and the landmarks of a frame.
pub fn write_frame(dir: &Path, f: &RenderedFrame) -> Result<()> {
    let (png, color, lm) = frame_paths(dir, f.index);
    write_png(&png, &f.image)?;
    hmtk::save(&color, &image_tensor(&f.image))?;
    hmtk::save(&lm, &Tensor::new(&[LANDMARKS, 2], f.landmarks.clone())?)
}

pub fn write_render_manifest(dir: &Path, m: &RenderManifest) -> Result<()> {
    let text = toml::to_string(m).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join(RENDER_MANIFEST), text)?;
    Ok(())
}

pub fn read_render_manifest(dir: &Path) -> Result<RenderManifest> {
    let path = dir.join(RENDER_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let m: RenderManifest = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if m.format != RENDER_FORMAT || m.version != RENDER_VERSION {
        return Err(Error::Format(format!("{}: {} v{}", path.display(), m.format, m.version)));
    }
    Ok(m)
}

/// Renders `range` of the bundle into `out`. An empty range writes nothing.
pub fn render_cmd(ckpt: &Checkpoint, bundle: &SceneBundle, range: Range<usize>, drive: Drive, out: &Path) -> Result<usize> {
    let r = FrameRenderer::from_checkpoint(ckpt, bundle)?;
    if range.is_empty() {
        return Ok(0);
    }
    if range.end > bundle.len() {
        return Err(Error::Data(format!("frames {range:?} outside a {}-frame bundle", bundle.len())));
    }
    std::fs::create_dir_all(out)?;
    for t in range.clone() {
        write_frame(out, &r.frame(t, drive)?)?;
    }
    write_render_manifest(
        out,
        &RenderManifest {
            format: RENDER_FORMAT.into(),
            version: RENDER_VERSION,
            drive,
            blend_mode: bundle.config.blend_mode,
            start: range.start,
            end: range.end,
            config_hash: r.config_hash().to_string(),
        },
    )?;
    Ok(range.len())
}

/// Scores of one frame, or means over all frames when `frame` is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: Option<usize>,
    pub psnr: f64,
    pub ssim: f64,
    pub proxy: f64,
    pub lmd: f64,
    pub aue_l: f64,
    pub aue_u: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub frames: Vec<FrameMetrics>,
    pub aggregate: FrameMetrics,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:>7} {:>8} {:>7} {:>8} {:>8} {:>7} {:>7}\n",
            "frame", "psnr", "ssim", "proxy", "lmd", "aue_l", "aue_u"
        );
        for m in self.frames.iter().chain(std::iter::once(&self.aggregate)) {
            let label = m.frame.map_or("mean".to_string(), |f| f.to_string());
            let _ = writeln!(
                out,
                "{label:>7} {:>8.3} {:>7.4} {:>8.5} {:>8.4} {:>7.4} {:>7.4}",
                m.psnr, m.ssim, m.proxy, m.lmd, m.aue_l, m.aue_u
            );
        }
        out
    }

    /// One JSON object per frame, then the aggregate.
    pub fn to_jsonl(&self) -> String {
        self.frames
            .iter()
            .chain(std::iter::once(&self.aggregate))
            .map(|m| serde_json::to_string(m).expect("metrics serialize") + "\n")
            .collect()
    }
}

/// Scores rendered frames against the bundle. AU errors compare AUs
/// recovered from predicted landmarks with AUs recovered from the reference
/// landmarks by the same estimator.
pub fn evaluate(frames: &[RenderedFrame], bundle: &SceneBundle) -> Result<EvalReport> {
    let est = AuEstimator::from_bundle(bundle)?;
    let mut rows = Vec::with_capacity(frames.len());
    for f in frames {
        if f.index >= bundle.len() {
            return Err(Error::Data(format!("frame {} outside a {}-frame bundle", f.index, bundle.len())));
        }
        let gt = &bundle.frames[f.index];
        let gt_lm = bundle.landmarks_at(f.index);
        let pair = |v: &[f64]| Tensor::new(&[1, LANDMARKS, 2], v.to_vec());
        let au_pred = Tensor::new(&[1, 17], est.estimate(&f.landmarks)?.to_vec())?;
        let au_gt = Tensor::new(&[1, 17], est.estimate(gt_lm)?.to_vec())?;
        let (aue_l, aue_u) = aue(&au_pred, &au_gt)?;
        rows.push(FrameMetrics {
            frame: Some(f.index),
            psnr: psnr(&f.image, gt)?,
            ssim: ssim(&f.image, gt)?,
            proxy: perceptual_proxy(&f.image, gt)?,
            lmd: lmd(&pair(&f.landmarks)?, &pair(gt_lm)?)?,
            aue_l,
            aue_u,
        });
    }
    let n = rows.len().max(1) as f64;
    let mean = |g: fn(&FrameMetrics) -> f64| rows.iter().map(g).sum::<f64>() / n;
    let aggregate = FrameMetrics {
        frame: None,
        psnr: mean(|m| m.psnr),
        ssim: mean(|m| m.ssim),
        proxy: mean(|m| m.proxy),
        lmd: mean(|m| m.lmd),
        aue_l: mean(|m| m.aue_l),
        aue_u: mean(|m| m.aue_u),
    };
    Ok(EvalReport { frames: rows, aggregate })
}

/// Loads the frames listed by a render manifest.
pub fn read_rendered(dir: &Path) -> Result<(RenderManifest, Vec<RenderedFrame>)> {
    let m = read_render_manifest(dir)?;
    let missing: Vec<usize> = m
        .range()
        .filter(|&t| {
            let (_, c, l) = frame_paths(dir, t);
            !(c.is_file() && l.is_file())
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("{}: missing frames {missing:?}", dir.display())));
    }
    let mut frames = Vec::with_capacity(m.range().len());
    for t in m.range() {
        let (_, c, l) = frame_paths(dir, t);
        frames.push(RenderedFrame { index: t, image: tensor_image(&hmtk::load(&c)?)?, landmarks: hmtk::load(&l)?.data().to_vec() });
    }
    Ok((m, frames))
}

/// Scores a rendered directory; frames beyond the bundle are an index
/// mismatch.
pub fn eval_cmd(dir: &Path, bundle: &SceneBundle) -> Result<EvalReport> {
    let (m, frames) = read_rendered(dir)?;
    if m.end > bundle.len() {
        let extra: Vec<usize> = (bundle.len().max(m.start)..m.end).collect();
        return Err(Error::Data(format!("rendered frames {extra:?} have no reference in the bundle")));
    }
    if m.blend_mode != bundle.config.blend_mode {
        return Err(Error::Data(format!(
            "rendered with blend mode {}, bundle uses {}",
            m.blend_mode.name(),
            bundle.config.blend_mode.name()
        )));
    }
    evaluate(&frames, bundle)
}
