//! `HMTC` checkpoints: magic, `u16` version, `u64` header length, a JSON
//! header, then every parameter's values and Adam moments as little-endian
//! `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::diffmath::{AdamConfig, OptimizerState, ParamEntry, ParamGroup, ParamStore};
use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::synth::SynthConfig;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"HMTC";
pub const VERSION: u16 = 1;

/// Training phase a checkpoint was written in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Static,
    Motion,
    Finetune,
    Done,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Static => "static",
            Stage::Motion => "motion",
            Stage::Finetune => "finetune",
            Stage::Done => "done",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    step_count: u64,
    hyper: AdamConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    stage: Stage,
    iteration: usize,
    config_hash: String,
    train_seed: u64,
    model: ModelConfig,
    params: Vec<ParamMeta>,
}

/// Complete training state. The per-step random streams are derived from
/// `(train_seed, iteration)`, so those two numbers are the whole RNG state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    /// Number of optimizer steps already taken.
    pub iteration: usize,
    pub config_hash: String,
    pub train_seed: u64,
    pub model: ModelConfig,
    pub params: Vec<ParamEntry>,
}

/// Hash binding a checkpoint to the scene and architecture it was trained on.
pub fn config_hash(scene: &SynthConfig, model: &ModelConfig) -> String {
    let text = serde_json::to_string(&(scene, model)).expect("configs serialize");
    sha256_hex(text.as_bytes())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            stage: self.stage,
            iteration: self.iteration,
            config_hash: self.config_hash.clone(),
            train_seed: self.train_seed,
            model: self.model.clone(),
            params: self
                .params
                .iter()
                .map(|e| ParamMeta {
                    name: e.name.clone(),
                    group: e.group,
                    shape: e.value.shape().to_vec(),
                    step_count: e.state.step_count,
                    hyper: e.state.hyper,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(json.len() + 14);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in &self.params {
            for v in e.value.data().iter().chain(&e.state.first_moment).chain(&e.state.second_moment) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 14 || bytes[..4] != MAGIC {
            return Err(fmt("bad magic, not an HMTC file"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Incompatible(format!("checkpoint version {version}, supported {VERSION}")));
        }
        let len = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(14..).ok_or_else(|| fmt("truncated"))?;
        if len > body.len() {
            return Err(fmt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..len]).map_err(|e| fmt(&e.to_string()))?;
        let mut floats = body[len..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        if body[len..].len() % 8 != 0 {
            return Err(fmt("payload is not a whole number of f64 values"));
        }
        let mut params = Vec::with_capacity(header.params.len());
        for m in header.params {
            let n: usize = m.shape.iter().product();
            let mut take = || -> Result<Vec<f64>> {
                let v: Vec<f64> = floats.by_ref().take(n).collect();
                if v.len() != n {
                    return Err(fmt("truncated payload"));
                }
                Ok(v)
            };
            let value = Tensor::new(&m.shape, take()?)?;
            let first_moment = take()?;
            let second_moment = take()?;
            params.push(ParamEntry {
                name: m.name,
                group: m.group,
                value,
                state: OptimizerState { first_moment, second_moment, step_count: m.step_count, hyper: m.hyper },
            });
        }
        if floats.next().is_some() {
            return Err(fmt("trailing payload"));
        }
        Ok(Self {
            stage: header.stage,
            iteration: header.iteration,
            config_hash: header.config_hash,
            train_seed: header.train_seed,
            model: header.model,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Refuses a checkpoint trained against a different scene or model.
    pub fn check_compatible(&self, expected_hash: &str) -> Result<()> {
        if self.config_hash != expected_hash {
            return Err(Error::Incompatible(format!(
                "checkpoint config hash {} does not match {expected_hash}",
                self.config_hash
            )));
        }
        Ok(())
    }

    /// Copies values and optimizer state into a freshly built store with
    /// the same parameter layout.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Incompatible(format!(
                "checkpoint has {} parameter tensors, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (dst, src) in store.entries_mut().iter_mut().zip(&self.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() || dst.group != src.group {
                return Err(Error::Incompatible(format!(
                    "parameter {} {:?} vs checkpoint {} {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut store = ParamStore::new();
        store.add("a.field.mu", ParamGroup::Field, Tensor::new(&[2, 3], vec![0.1, -0.2, 0.3, 1e-300, -0.0, 7.5]).unwrap(), 5e-4);
        store.add("b.0.weight", ParamGroup::Network, Tensor::row(&[1.0, 2.0]), 5e-4);
        let mut params = store.entries().to_vec();
        params[0].state.first_moment[1] = 0.25;
        params[1].state.step_count = 12;
        Checkpoint {
            stage: Stage::Motion,
            iteration: 100,
            config_hash: "abc".into(),
            train_seed: 3,
            model: ModelConfig::default(),
            params,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let c = sample();
        let a = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&a).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), a);
    }

    #[test]
    fn corrupt_magic_is_refused() {
        let mut a = sample().to_bytes().unwrap();
        a[1] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&a), Err(Error::Format(_))));
        let mut v = sample().to_bytes().unwrap();
        v[4] = 7;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::Incompatible(_))));
        let t = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&t[..t.len() - 8]).is_err());
    }

    #[test]
    fn hash_mismatch_is_refused() {
        let c = sample();
        assert!(c.check_compatible("abc").is_ok());
        assert!(matches!(c.check_compatible("abd"), Err(Error::Incompatible(_))));
        let h1 = config_hash(&SynthConfig::default(), &ModelConfig::default());
        let h2 = config_hash(&SynthConfig { seed: 1, ..SynthConfig::default() }, &ModelConfig::default());
        assert_ne!(h1, h2);
    }
}
