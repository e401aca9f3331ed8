//! Three-stage training: canonical fields, motion, joint fine-tuning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{config_hash, Checkpoint, Stage};
use crate::config::RunConfig;
use crate::diffmath::{Session, Var};
use crate::error::{Error, Result};
use crate::hmmm::{sample_mask, sample_mask_rate, sample_path, FusionPath};
use crate::metrics::{image_loss_graph, total_loss_graph, LossTerms};
use crate::model::{FrameInput, Model};
use crate::render::{blend_head_graph, BlendMode};
use crate::synth::{AuEstimator, SceneBundle};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    /// Global step index, starting at 0.
    pub step: usize,
    pub frame: Option<usize>,
    pub path: Option<FusionPath>,
    pub mask_rate: Option<f64>,
    pub alpha_mean: Option<f64>,
    pub alpha_std: Option<f64>,
    pub loss: LossTerms,
    pub skipped: usize,
}

impl StepRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Image-derived conditioning for every frame of a bundle.
pub fn frame_inputs(bundle: &SceneBundle, estimator: &AuEstimator) -> Result<Vec<FrameInput>> {
    (0..bundle.len())
        .map(|t| FrameInput::new(&estimator.estimate(bundle.landmarks_at(t))?, &bundle.audio, t))
        .collect()
}

/// Blend mode to train with: the bundle's, unless the config pins one.
pub fn resolve_blend(config: &RunConfig, bundle: &SceneBundle) -> Result<BlendMode> {
    match config.blend_mode {
        Some(m) if m != bundle.config.blend_mode => Err(Error::Config(format!(
            "blend mode {} requested but the bundle was rendered with {}",
            m.name(),
            bundle.config.blend_mode.name()
        ))),
        _ => Ok(bundle.config.blend_mode),
    }
}

fn add_terms(a: LossTerms, b: LossTerms) -> LossTerms {
    LossTerms {
        l1: a.l1 + b.l1,
        d_ssim: a.d_ssim + b.d_ssim,
        perceptual: a.perceptual + b.perceptual,
        align: a.align + b.align,
        total: a.total + b.total,
    }
}

pub struct Trainer<'b> {
    pub config: RunConfig,
    pub model: Model,
    pub iteration: usize,
    bundle: &'b SceneBundle,
    inputs: Vec<FrameInput>,
    blend: BlendMode,
    hash: String,
}

impl<'b> Trainer<'b> {
    pub fn new(config: &RunConfig, bundle: &'b SceneBundle) -> Result<Self> {
        config.validate()?;
        if config.train.holdout >= bundle.len() {
            return Err(Error::Config(format!(
                "holdout of {} frames leaves nothing to train on in a {}-frame bundle",
                config.train.holdout,
                bundle.len()
            )));
        }
        let blend = resolve_blend(config, bundle)?;
        let mc = config.model_config();
        let model = Model::new(&mc, &bundle.face_geom, &bundle.mouth_geom, config.train.lr, config.train.seed)?;
        let inputs = frame_inputs(bundle, &AuEstimator::from_bundle(bundle)?)?;
        Ok(Self {
            config: config.clone(),
            model,
            iteration: 0,
            bundle,
            inputs,
            blend,
            hash: config_hash(&bundle.config, &mc),
        })
    }

    /// Continues from a checkpoint written by a run with the same scene,
    /// architecture and seed.
    pub fn resume(config: &RunConfig, bundle: &'b SceneBundle, ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(config, bundle)?;
        ckpt.check_compatible(&t.hash)?;
        if ckpt.train_seed != config.train.seed {
            return Err(Error::Incompatible(format!(
                "checkpoint trained with seed {}, config has {}",
                ckpt.train_seed, config.train.seed
            )));
        }
        ckpt.restore_into(&mut t.model.store)?;
        t.iteration = ckpt.iteration;
        Ok(t)
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn train_frames(&self) -> usize {
        self.bundle.len() - self.config.train.holdout
    }

    pub fn total_iters(&self) -> usize {
        self.config.total_iters()
    }

    pub fn stage_at(&self, step: usize) -> Stage {
        let t = &self.config.train;
        if step < t.static_iters {
            Stage::Static
        } else if step < t.static_iters + t.motion_iters {
            Stage::Motion
        } else if step < self.total_iters() {
            Stage::Finetune
        } else {
            Stage::Done
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            stage: self.stage_at(self.iteration),
            iteration: self.iteration,
            config_hash: self.hash.clone(),
            train_seed: self.config.train.seed,
            model: self.model.config.clone(),
            params: self.model.store.entries().to_vec(),
        }
    }

    /// Random stream of one step; independent of how the run was split.
    fn step_rng(&self, step: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.train.seed);
        rng.set_stream(step as u64 + 1);
        rng
    }

    /// One optimizer step at the current iteration.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.iteration;
        let stage = self.stage_at(step);
        let mut rng = self.step_rng(step);
        let w = self.config.loss;
        let cam = &self.bundle.camera;
        let mut record = StepRecord {
            stage,
            step,
            frame: None,
            path: None,
            mask_rate: None,
            alpha_mean: None,
            alpha_std: None,
            loss: LossTerms::default(),
            skipped: 0,
        };
        let grads = match stage {
            Stage::Done => return Err(Error::Contract("training already finished".into())),
            Stage::Static => {
                let mut s = Session::new(&self.model.store, |e| Model::is_field_param(&e.name));
                let (face, mouth) = self.model.forward_static(&mut s, cam)?;
                let (lf, tf) = image_loss_graph(&mut s, face, &self.bundle.neutral_face, &w)?;
                let (lm, tm) = image_loss_graph(&mut s, mouth, &self.bundle.neutral_mouth, &w)?;
                let loss = s.graph.add(lf, lm)?;
                record.loss = add_terms(tf, tm);
                finish(s, loss, &mut record)?
            }
            Stage::Motion | Stage::Finetune => {
                let t = rng.random_range(0..self.train_frames());
                let path = sample_path(&mut rng, &self.config.motion.path_ratio);
                let mask = if path == FusionPath::Masked {
                    let rate = sample_mask_rate(&mut rng, self.config.motion.mask_range);
                    record.mask_rate = Some(rate);
                    Some(sample_mask(crate::cmdm::FEATURE_DIM, rate, &mut rng)?)
                } else {
                    None
                };
                record.frame = Some(t);
                record.path = Some(path);
                let motion = stage == Stage::Motion;
                let mut s = Session::new(&self.model.store, |e| !motion || !Model::is_field_param(&e.name));
                let n = self.model.forward(&mut s, cam, &self.inputs[t], path, mask.as_deref())?;
                record.skipped = n.skipped;
                if let Some(a) = n.alpha {
                    let v = s.value(a).data();
                    let mean = v.iter().sum::<f64>() / v.len() as f64;
                    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
                    record.alpha_mean = Some(mean);
                    record.alpha_std = Some(var.sqrt());
                }
                let loss = if motion {
                    let (lf, tf) = image_loss_graph(&mut s, n.face, &self.bundle.face_layers[t], &w)?;
                    let (lm, tm) = image_loss_graph(&mut s, n.mouth, &self.bundle.mouth_layers[t], &w)?;
                    let align = s.graph.mean_abs_diff(n.c_e_al, n.c_e_vl)?;
                    let a = s.value(align).item();
                    let weighted = s.graph.scale(align, w.lambda3);
                    let img = s.graph.add(lf, lm)?;
                    let loss = s.graph.add(img, weighted)?;
                    let mut terms = add_terms(tf, tm);
                    terms.align = a;
                    terms.total = s.value(loss).item();
                    record.loss = terms;
                    loss
                } else {
                    let head = blend_head_graph(&mut s, n.face, n.mouth, self.blend)?;
                    let (loss, terms) = total_loss_graph(&mut s, head, &self.bundle.frames[t], n.c_e_al, n.c_e_vl, &w)?;
                    record.loss = terms;
                    loss
                };
                finish(s, loss, &mut record)?
            }
        };
        self.model.store.step(&grads)?;
        self.iteration += 1;
        Ok(record)
    }

    /// Steps until `until` (capped at the schedule end), reporting each
    /// record to `on_step`.
    pub fn run(&mut self, until: usize, mut on_step: impl FnMut(&Self, &StepRecord) -> Result<()>) -> Result<()> {
        let end = until.min(self.total_iters());
        while self.iteration < end {
            let r = self.step()?;
            on_step(self, &r)?;
        }
        Ok(())
    }

    /// Image-derived conditioning of frame `t`.
    pub fn input(&self, t: usize) -> &FrameInput {
        &self.inputs[t]
    }
}

fn finish(mut s: Session, loss: Var, record: &mut StepRecord) -> Result<crate::diffmath::Gradients> {
    if !record.loss.total.is_finite() {
        return Err(Error::NonFinite(format!("loss at step {} ({:?})", record.step, record.stage)));
    }
    s.graph.backward(loss)?;
    Ok(s.into_gradients())
}

/// Trains from scratch (or from `resume`) to the end of the schedule.
pub fn train(
    config: &RunConfig,
    bundle: &SceneBundle,
    resume: Option<&Checkpoint>,
    on_step: impl FnMut(&Trainer, &StepRecord) -> Result<()>,
) -> Result<Checkpoint> {
    let mut t = match resume {
        Some(c) => Trainer::resume(config, bundle, c)?,
        None => Trainer::new(config, bundle)?,
    };
    let end = t.total_iters();
    t.run(end, on_step)?;
    Ok(t.checkpoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_scene, SynthConfig};

    fn bundle() -> SceneBundle {
        gen_scene(&SynthConfig { frames: 8, width: 16, height: 16, face_prims: 80, mouth_prims: 12, ..SynthConfig::default() })
            .unwrap()
    }

    fn config(s: usize, m: usize, f: usize) -> RunConfig {
        let mut c = RunConfig::default();
        c.train.static_iters = s;
        c.train.motion_iters = m;
        c.train.finetune_iters = f;
        c.train.holdout = 2;
        c
    }

    fn log(cfg: &RunConfig, b: &SceneBundle) -> Vec<StepRecord> {
        let mut out = Vec::new();
        train(cfg, b, None, |_, r| {
            out.push(r.clone());
            Ok(())
        })
        .unwrap();
        out
    }

    #[test]
    fn identical_runs_give_identical_logs() {
        let b = bundle();
        let cfg = config(3, 4, 3);
        let a = log(&cfg, &b);
        assert_eq!(a.len(), 10);
        assert_eq!(a, log(&cfg, &b));
        assert_eq!(a[0].stage, Stage::Static);
        assert_eq!(a[5].stage, Stage::Motion);
        assert_eq!(a[9].stage, Stage::Finetune);
        assert!(a.iter().all(|r| r.frame.is_none_or(|t| t < 6)));
    }

    #[test]
    fn resuming_matches_an_uninterrupted_run() {
        let b = bundle();
        let cfg = config(2, 4, 2);
        let full = log(&cfg, &b);
        let mut first = Trainer::new(&cfg, &b).unwrap();
        first.run(4, |_, _| Ok(())).unwrap();
        let bytes = first.checkpoint().to_bytes().unwrap();
        let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
        let mut rest = Vec::new();
        train(&cfg, &b, Some(&ckpt), |_, r| {
            rest.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(rest, full[4..]);
    }

    #[test]
    fn no_motion_training_keeps_the_canonical_render() {
        let b = bundle();
        let cfg = config(3, 0, 0);
        let mut t = Trainer::new(&cfg, &b).unwrap();
        t.run(3, |_, _| Ok(())).unwrap();
        let mut s = Session::inference(&t.model.store);
        let (f0, m0) = t.model.forward_static(&mut s, &b.camera).unwrap();
        let n = t.model.forward(&mut s, &b.camera, t.input(5), FusionPath::Vanilla, None).unwrap();
        assert_eq!(s.value(f0), s.value(n.face));
        assert_eq!(s.value(m0), s.value(n.mouth));
    }

    #[test]
    fn static_stage_reduces_the_loss() {
        let b = bundle();
        let r = log(&config(60, 0, 0), &b);
        assert!(r[59].loss.total < r[0].loss.total, "{} -> {}", r[0].loss.total, r[59].loss.total);
    }

    #[test]
    fn bad_holdout_and_blend_are_config_errors() {
        let b = bundle();
        let mut c = config(1, 1, 1);
        c.train.holdout = 8;
        assert!(matches!(Trainer::new(&c, &b), Err(Error::Config(_))));
        let mut c = config(1, 1, 1);
        c.blend_mode = Some(BlendMode::FaceComplement);
        assert!(matches!(Trainer::new(&c, &b), Err(Error::Config(_))));
    }
}
