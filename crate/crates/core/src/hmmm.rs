//! Hybrid motion modeling: fusion-path sampling, feature masking, gated
//! fusion, region attention and deformation prediction.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmdm::FEATURE_DIM;
use crate::diffmath::{ParamId, ParamStore, Session, Var};
use crate::error::{shape_err, Error, Result};
use crate::nn::{Activation, Mlp};
use crate::tensor::Tensor;

/// Width of the positional encoding fed to the attention and deform MLPs.
pub const ENCODING_DIM: usize = 48;
pub const UPPER_DIM: usize = 7;
/// `dmu (3) ++ ds (3) ++ dq (4)`.
pub const DEFORM_DIM: usize = 10;

/// Which feature pair feeds the fusion step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionPath {
    Audio,
    Masked,
    Vanilla,
}

impl FusionPath {
    pub const ALL: [FusionPath; 3] = [FusionPath::Audio, FusionPath::Masked, FusionPath::Vanilla];

    pub fn name(self) -> &'static str {
        match self {
            FusionPath::Audio => "audio",
            FusionPath::Masked => "masked",
            FusionPath::Vanilla => "vanilla",
        }
    }
}

/// Sampling probabilities of the three paths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathRatio {
    pub audio: f64,
    pub masked: f64,
    pub vanilla: f64,
}

impl Default for PathRatio {
    fn default() -> Self {
        Self {
            audio: 0.4,
            masked: 0.4,
            vanilla: 0.2,
        }
    }
}

impl PathRatio {
    pub fn validate(&self) -> Result<()> {
        let p = [self.audio, self.masked, self.vanilla];
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "path ratio ({}, {}, {}) must be probabilities summing to 1",
                self.audio, self.masked, self.vanilla
            )));
        }
        Ok(())
    }

    pub fn probabilities(&self) -> [f64; 3] {
        [self.audio, self.masked, self.vanilla]
    }
}

/// One categorical draw over (audio, masked, vanilla).
pub fn sample_path<R: Rng>(rng: &mut R, ratio: &PathRatio) -> FusionPath {
    let u: f64 = rng.random();
    if u < ratio.audio {
        FusionPath::Audio
    } else if u < ratio.audio + ratio.masked {
        FusionPath::Masked
    } else {
        FusionPath::Vanilla
    }
}

/// Keep-mask with each entry zeroed independently with probability `rate`.
pub fn sample_mask<R: Rng>(n: usize, rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Contract(format!("mask rate {rate} outside [0, 1]")));
    }
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u < rate {
                0.0
            } else {
                1.0
            }
        })
        .collect())
}

/// Element-wise masking without rescaling.
pub fn mask_features<R: Rng>(c: &[f64], rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    let m = sample_mask(c.len(), rate, rng)?;
    Ok(c.iter().zip(m).map(|(v, k)| v * k).collect())
}

/// Masking rate drawn uniformly from `[lo, hi]`.
pub fn sample_mask_rate<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        return range[0];
    }
    rng.random_range(range[0]..=range[1])
}

/// How the implicit and explicit features are combined.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateMode {
    /// Learned per-channel gate.
    Vector,
    /// Learned single gate shared by all channels.
    Scalar,
    /// Constant gate value.
    FixedAlpha(f64),
    /// `c_f = c_e`.
    PureExplicit,
    /// `c_f = c_i`.
    PureImplicit,
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateMode::Vector => write!(f, "vector"),
            GateMode::Scalar => write!(f, "scalar"),
            GateMode::FixedAlpha(a) => write!(f, "fixed-alpha:{a}"),
            GateMode::PureExplicit => write!(f, "pure-explicit"),
            GateMode::PureImplicit => write!(f, "pure-implicit"),
        }
    }
}

impl FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vector" => Ok(GateMode::Vector),
            "scalar" => Ok(GateMode::Scalar),
            "pure-explicit" => Ok(GateMode::PureExplicit),
            "pure-implicit" => Ok(GateMode::PureImplicit),
            _ => {
                let a = s
                    .strip_prefix("fixed-alpha:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown gate mode `{s}`")))?;
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::Config(format!("fixed alpha {a} outside [0, 1]")));
                }
                Ok(GateMode::FixedAlpha(a))
            }
        }
    }
}

impl Serialize for GateMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for GateMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    #[default]
    Gate,
    Concat,
}

/// Motion features of one frame as graph nodes (`1 x d` rows). Features a
/// path does not need may be absent.
#[derive(Clone, Copy, Debug, Default)]
pub struct MotionFeatures {
    pub c_e_vu: Option<Var>,
    pub c_e_vl: Option<Var>,
    pub c_i_al: Option<Var>,
    pub c_i_al_mask: Option<Var>,
    pub c_e_al: Option<Var>,
}

/// `(c_i*, c_e)` for a path.
pub fn select_pair(path: FusionPath, f: &MotionFeatures) -> Result<(Var, Var)> {
    let need = |v: Option<Var>, name: &str| {
        v.ok_or_else(|| Error::Contract(format!("path {} needs feature {name}", path.name())))
    };
    match path {
        FusionPath::Audio => Ok((need(f.c_i_al, "c_i_al")?, need(f.c_e_al, "c_e_al")?)),
        FusionPath::Masked => Ok((need(f.c_i_al_mask, "c_i_al_mask")?, need(f.c_e_vl, "c_e_vl")?)),
        FusionPath::Vanilla => Ok((need(f.c_i_al, "c_i_al")?, need(f.c_e_vl, "c_e_vl")?)),
    }
}

/// The fusion network: a gate (`MLP_g`) or a concat MLP depending on mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Fusion {
    pub gate_mode: GateMode,
    pub fusion_mode: FusionMode,
    pub gate: Option<Mlp>,
    pub concat: Option<Mlp>,
}

impl Fusion {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        gate_mode: GateMode,
        fusion_mode: FusionMode,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        let d = FEATURE_DIM;
        let (gate, concat) = match fusion_mode {
            FusionMode::Concat => (
                None,
                Some(Mlp::new(
                    store,
                    &format!("{name}.concat"),
                    &[2 * d, 64, d],
                    Activation::Relu,
                    Activation::Identity,
                    false,
                    lr,
                    rng,
                )),
            ),
            FusionMode::Gate => {
                let out = match gate_mode {
                    GateMode::Vector => Some(d),
                    GateMode::Scalar => Some(1),
                    _ => None,
                };
                let gate = out.map(|o| {
                    Mlp::new(
                        store,
                        &format!("{name}.gate"),
                        &[2 * d, 64, o],
                        Activation::Relu,
                        Activation::Sigmoid,
                        false,
                        lr,
                        rng,
                    )
                });
                (gate, None)
            }
        };
        Self {
            gate_mode,
            fusion_mode,
            gate,
            concat,
        }
    }

    /// Returns `c_f` and, for gate fusion, the `1 x 32` gate values.
    pub fn fuse(&self, s: &mut Session, c_i: Var, c_e: Var) -> Result<(Var, Option<Var>)> {
        for v in [c_i, c_e] {
            if s.value(v).shape() != [1, FEATURE_DIM] {
                return shape_err(format!("fusion input {:?}", s.value(v).shape()));
            }
        }
        if let Some(mlp) = &self.concat {
            let x = s.graph.concat_cols(&[c_i, c_e])?;
            return Ok((mlp.forward(s, x)?, None));
        }
        let alpha = match self.gate_mode {
            GateMode::PureExplicit => return Ok((c_e, None)),
            GateMode::PureImplicit => return Ok((c_i, None)),
            GateMode::FixedAlpha(a) => s.constant(Tensor::filled(&[1, FEATURE_DIM], a)),
            GateMode::Vector | GateMode::Scalar => {
                let mlp = self.gate.as_ref().expect("learned gate present");
                let x = s.graph.concat_cols(&[c_i, c_e])?;
                let a = mlp.forward(s, x)?;
                if self.gate_mode == GateMode::Scalar {
                    let ones = s.constant(Tensor::filled(&[1, FEATURE_DIM], 1.0));
                    s.graph.matmul(a, ones)?
                } else {
                    a
                }
            }
        };
        Ok((gated_fuse(s, alpha, c_i, c_e)?, Some(alpha)))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        if let Some(m) = &self.gate {
            ids.extend(m.param_ids());
        }
        if let Some(m) = &self.concat {
            ids.extend(m.param_ids());
        }
        ids
    }
}

/// `alpha * c_e + (1 - alpha) * c_i`, element-wise.
pub fn gated_fuse(s: &mut Session, alpha: Var, c_i: Var, c_e: Var) -> Result<Var> {
    let g = &mut s.graph;
    let e = g.mul(alpha, c_e)?;
    let one_minus = g.one_minus(alpha);
    let i = g.mul(one_minus, c_i)?;
    g.add(e, i)
}

/// Region attention maps `MLP_f` (48 -> 64 -> 32) and `MLP_u` (48 -> 32 -> 7).
#[derive(Clone, Debug, PartialEq)]
pub struct RegionAttention {
    pub mlp_f: Mlp,
    pub mlp_u: Mlp,
}

impl RegionAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, lr: f64, rng: &mut R) -> Self {
        Self {
            mlp_f: Mlp::new(
                store,
                &format!("{name}.attn_f"),
                &[ENCODING_DIM, 64, FEATURE_DIM],
                Activation::Relu,
                Activation::Sigmoid,
                false,
                lr,
                rng,
            ),
            mlp_u: Mlp::new(
                store,
                &format!("{name}.attn_u"),
                &[ENCODING_DIM, 32, UPPER_DIM],
                Activation::Relu,
                Activation::Sigmoid,
                false,
                lr,
                rng,
            ),
        }
    }

    /// `(C_f: N x 32, C_u: N x 7)` from encodings `h` (`N x 48`), `c_f` and
    /// `c_e_vu` (both single rows).
    pub fn forward(&self, s: &mut Session, h: Var, c_f: Var, c_e_vu: Var) -> Result<(Var, Var)> {
        let af = self.mlp_f.forward(s, h)?;
        let au = self.mlp_u.forward(s, h)?;
        let cf = s.graph.mul_row(af, c_f)?;
        let cu = s.graph.mul_row(au, c_e_vu)?;
        Ok((cf, cu))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.mlp_f.param_ids();
        ids.extend(self.mlp_u.param_ids());
        ids
    }
}

/// Per-primitive deformation network `(48 + 7 + 32) -> 128 -> 128 -> 10`
/// with a zero-initialized output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformNet {
    pub mlp: Mlp,
}

impl DeformNet {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, lr: f64, rng: &mut R) -> Self {
        Self {
            mlp: Mlp::new(
                store,
                name,
                &[ENCODING_DIM + UPPER_DIM + FEATURE_DIM, 128, 128, DEFORM_DIM],
                Activation::Relu,
                Activation::Identity,
                true,
                lr,
                rng,
            ),
        }
    }

    /// Returns `(dmu: N x 3, ds: N x 3, dq: N x 4)`.
    pub fn forward(&self, s: &mut Session, h: Var, c_u: Var, c_f: Var) -> Result<(Var, Var, Var)> {
        let x = s.graph.concat_cols(&[h, c_u, c_f])?;
        let out = self.mlp.forward(s, x)?;
        let g = &mut s.graph;
        Ok((g.slice_cols(out, 0, 3)?, g.slice_cols(out, 3, 6)?, g.slice_cols(out, 6, 10)?))
    }
}
