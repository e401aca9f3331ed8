//! Canonical Gaussian primitives for the face and mouth branches, and the
//! per-primitive deformations applied to them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffmath::{sigmoid, Session, Var};
use crate::error::{shape_err, Error, Result};
use crate::render::SH_C0;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Face,
    Mouth,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Face => "face",
            Branch::Mouth => "mouth",
        }
    }
}

/// One primitive of an oracle geometry description.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveSpec {
    pub position: [f64; 3],
    /// Linear (not log) standard deviations along the local axes.
    pub scale: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometrySpec {
    pub branch: Branch,
    pub primitives: Vec<PrimitiveSpec>,
}

/// Number of SH coefficients per primitive for a degree (0 or 1).
pub fn sh_coeff_count(degree: usize) -> usize {
    3 * (degree + 1) * (degree + 1)
}

/// Canonical parameters of one branch: positions, log-scales, unit
/// quaternions, opacity logits and SH coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianField {
    pub mu: Tensor,
    pub log_scale: Tensor,
    pub quat: Tensor,
    pub alpha_logit: Tensor,
    pub sh: Tensor,
    pub sh_degree: usize,
    pub branch: Branch,
}

/// Per-primitive offsets `(d_mu, d_s, d_q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Deformation {
    pub d_mu: Tensor,
    pub d_s: Tensor,
    pub d_q: Tensor,
}

impl Deformation {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_mu: Tensor::zeros(&[n, 3]),
            d_s: Tensor::zeros(&[n, 3]),
            d_q: Tensor::zeros(&[n, 4]),
        }
    }
}

/// Deformed geometry; opacity and color are shared with the canonical field.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformedView {
    pub mu: Tensor,
    pub log_scale: Tensor,
    pub quat: Tensor,
}

/// Standard deviation of the positional jitter applied at initialization.
pub const INIT_JITTER: f64 = 0.01;

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

fn normalize4(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n >= 1e-12) {
        return Err(Error::Contract("zero quaternion in geometry spec".into()));
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

impl GaussianField {
    pub fn len(&self) -> usize {
        self.mu.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn opacities(&self) -> Vec<f64> {
        self.alpha_logit.data().iter().map(|&v| sigmoid(v)).collect()
    }

    /// Builds a field from oracle geometry, jittering positions by
    /// `N(0, INIT_JITTER^2)` (clamped to the unit cube).
    pub fn init_static(spec: &GeometrySpec, sh_degree: usize, seed: u64) -> Result<Self> {
        let n = spec.primitives.len();
        if n == 0 {
            return Err(Error::Contract("a Gaussian field needs at least one primitive".into()));
        }
        if sh_degree > 1 {
            return Err(Error::Config(format!("SH degree {sh_degree} unsupported (0 or 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Normal::new(0.0, INIT_JITTER).expect("valid sigma");
        let c = sh_coeff_count(sh_degree);
        let mut mu = Vec::with_capacity(n * 3);
        let mut ls = Vec::with_capacity(n * 3);
        let mut q = Vec::with_capacity(n * 4);
        let mut a = Vec::with_capacity(n);
        let mut sh = vec![0.0; n * c];
        for (i, p) in spec.primitives.iter().enumerate() {
            for k in 0..3 {
                let v: f64 = p.position[k] + jitter.sample(&mut rng);
                mu.push(v.clamp(-1.0, 1.0));
            }
            for k in 0..3 {
                if !(p.scale[k] > 0.0) {
                    return Err(Error::Contract(format!("primitive {i} has non-positive scale")));
                }
                ls.push(p.scale[k].ln());
            }
            q.extend_from_slice(&normalize4(p.rotation)?);
            a.push(logit(p.opacity));
            for ch in 0..3 {
                sh[i * c + ch] = (p.color[ch] - 0.5) / SH_C0;
            }
        }
        Ok(Self {
            mu: Tensor::new(&[n, 3], mu)?,
            log_scale: Tensor::new(&[n, 3], ls)?,
            quat: Tensor::new(&[n, 4], q)?,
            alpha_logit: Tensor::new(&[n, 1], a)?,
            sh: Tensor::new(&[n, c], sh)?,
            sh_degree,
            branch: spec.branch,
        })
    }

    /// Exact (unjittered) field for an oracle geometry, used for ground truth.
    pub fn from_spec_exact(spec: &GeometrySpec, sh_degree: usize) -> Result<Self> {
        let mut f = Self::init_static(spec, sh_degree, 0)?;
        for (i, p) in spec.primitives.iter().enumerate() {
            f.mu.row_slice_mut(i).copy_from_slice(&p.position);
        }
        Ok(f)
    }

    fn check_delta(&self, delta: &Deformation) -> Result<()> {
        let n = self.len();
        if delta.d_mu.shape() != [n, 3] || delta.d_s.shape() != [n, 3] || delta.d_q.shape() != [n, 4] {
            return shape_err(format!(
                "deformation shapes {:?}/{:?}/{:?} for {n} primitives",
                delta.d_mu.shape(),
                delta.d_s.shape(),
                delta.d_q.shape()
            ));
        }
        Ok(())
    }

    /// `mu + d_mu`, `s + d_s`, `normalize(q + d_q)`; the field is untouched.
    pub fn apply_deformation(&self, delta: &Deformation) -> Result<DeformedView> {
        self.check_delta(delta)?;
        let add = |a: &Tensor, b: &Tensor| {
            Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect())
        };
        let mu = add(&self.mu, &delta.d_mu)?;
        let log_scale = add(&self.log_scale, &delta.d_s)?;
        let mut quat = add(&self.quat, &delta.d_q)?;
        for i in 0..self.len() {
            let row = quat.row_slice_mut(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm >= 1e-12) {
                return Err(Error::DegenerateRotation(i));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(DeformedView { mu, log_scale, quat })
    }

    /// The canonical geometry viewed without deformation.
    pub fn canonical_view(&self) -> DeformedView {
        DeformedView {
            mu: self.mu.clone(),
            log_scale: self.log_scale.clone(),
            quat: self.quat.clone(),
        }
    }
}

/// Graph version of [`GaussianField::apply_deformation`]: gradients flow to
/// both the canonical tensors and the offsets.
pub fn deform_graph(
    s: &mut Session,
    mu: Var,
    log_scale: Var,
    quat: Var,
    d_mu: Var,
    d_s: Var,
    d_q: Var,
) -> Result<(Var, Var, Var)> {
    let m = s.graph.add(mu, d_mu)?;
    let ls = s.graph.add(log_scale, d_s)?;
    let q = s.graph.add(quat, d_q)?;
    let q = s.graph.normalize_rows(q)?;
    Ok((m, ls, q))
}
