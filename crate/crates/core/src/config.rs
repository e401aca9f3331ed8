//! Run configuration, read from TOML with every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmmm::{FusionMode, GateMode, PathRatio};
use crate::metrics::LossWeights;
use crate::render::BlendMode;
use crate::synth::SynthConfig;
use crate::triplane::HashConfig;

/// Iteration counts used by `--paper-scale`.
pub const PAPER_MOTION_ITERS: usize = 50_000;
pub const PAPER_FINETUNE_ITERS: usize = 15_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub bundle: PathBuf,
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { bundle: "bundle".into(), output: "run".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Stage 1: canonical fields against the neutral layers.
    pub static_iters: usize,
    /// Stage 2: motion fields, CMDM and HMMM with per-branch losses.
    pub motion_iters: usize,
    /// Stage 3: everything against blended frames.
    pub finetune_iters: usize,
    pub lr: f64,
    pub seed: u64,
    /// Worker threads for rendering; 0 uses all cores.
    pub threads: usize,
    /// Trailing frames of the bundle kept out of training.
    pub holdout: usize,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            static_iters: 1000,
            motion_iters: 5000,
            finetune_iters: 1500,
            lr: 5e-4,
            seed: 0,
            threads: 0,
            holdout: 100,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub path_ratio: PathRatio,
    pub mask_range: [f64; 2],
    pub gate_mode: GateMode,
    pub fusion_mode: FusionMode,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            path_ratio: PathRatio::default(),
            mask_range: [0.1, 0.3],
            gate_mode: GateMode::Vector,
            fusion_mode: FusionMode::Gate,
        }
    }
}

/// Architecture settings; these feed the checkpoint compatibility hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub sh_degree: usize,
    pub hash: HashConfig,
    pub gate_mode: GateMode,
    pub fusion_mode: FusionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sh_degree: 0,
            hash: HashConfig::default(),
            gate_mode: GateMode::Vector,
            fusion_mode: FusionMode::Gate,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub sh_degree: usize,
    pub hash: HashConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    /// Scene generated by `gen-data`.
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub motion: MotionConfig,
    pub model: ModelSection,
    /// Must match the bundle when set; unset uses the bundle's mode.
    pub blend_mode: Option<BlendMode>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn paper_scale(&mut self) {
        self.train.motion_iters = PAPER_MOTION_ITERS;
        self.train.finetune_iters = PAPER_FINETUNE_ITERS;
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            sh_degree: self.model.sh_degree,
            hash: self.model.hash.clone(),
            gate_mode: self.motion.gate_mode,
            fusion_mode: self.motion.fusion_mode,
        }
    }

    pub fn total_iters(&self) -> usize {
        self.train.static_iters + self.train.motion_iters + self.train.finetune_iters
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.train.lr));
        }
        self.synth.validate()?;
        self.loss.validate()?;
        self.motion.path_ratio.validate()?;
        let [lo, hi] = self.motion.mask_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad(format!("mask range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"));
        }
        if let GateMode::FixedAlpha(a) = self.motion.gate_mode {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("fixed alpha {a} outside [0, 1]"));
            }
        }
        if self.model.sh_degree > 1 {
            return bad(format!("SH degree {} unsupported (0 or 1)", self.model.sh_degree));
        }
        let h = &self.model.hash;
        if h.levels == 0 || h.features == 0 || h.table_size == 0 || h.min_res < 2 || h.max_res < h.min_res {
            return bad(format!("invalid hash grid {h:?}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn partial_files_override_defaults() {
        let c = RunConfig::from_toml("[train]\nmotion_iters = 7\n[motion]\ngate_mode = \"fixed-alpha:0.5\"\n").unwrap();
        assert_eq!(c.train.motion_iters, 7);
        assert_eq!(c.train.finetune_iters, 1500);
        assert_eq!(c.motion.gate_mode, GateMode::FixedAlpha(0.5));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "[train]\nlr = 0.0",
            "[motion.path_ratio]\naudio = 0.5\nmasked = 0.5\nvanilla = 0.5",
            "[motion]\nmask_range = [0.4, 0.2]",
            "[motion]\ngate_mode = \"fixed-alpha:1.5\"",
            "[train]\nstatic_iters = -1",
            "[nonsense]\nx = 1",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn paper_scale_restores_long_schedules() {
        let mut c = RunConfig::default();
        c.paper_scale();
        assert_eq!((c.train.motion_iters, c.train.finetune_iters), (50_000, 15_000));
    }
}
