//! The full two-branch talking-head model and its per-frame forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cmdm::{au_slot, audio_window, Cmdm, AU_IDS, FEATURE_DIM, LOWER_SLOTS, UPPER_SLOTS};
use crate::config::ModelConfig;
use crate::diffmath::{ParamGroup, ParamId, ParamStore, Session, Var};
use crate::error::{Error, Result};
use crate::gaussian_field::{deform_graph, Branch, GaussianField, GeometrySpec};
use crate::hmmm::{select_pair, DeformNet, Fusion, FusionPath, MotionFeatures, RegionAttention, ENCODING_DIM};
use crate::nn::{Activation, Mlp};
use crate::render::{render_graph, Camera};
use crate::tensor::Tensor;
use crate::triplane::TriPlaneHash;

/// Parameter handles of one branch's canonical field and hash table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchParams {
    pub mu: ParamId,
    pub log_scale: ParamId,
    pub quat: ParamId,
    pub alpha_logit: ParamId,
    pub sh: ParamId,
    pub table: ParamId,
}

/// Prefix shared by all canonical-field parameter names.
pub const FIELD_TAG: &str = ".field.";

fn add_branch(
    store: &mut ParamStore,
    field: &GaussianField,
    hash: &TriPlaneHash,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> BranchParams {
    let b = field.branch.name();
    let mut f = |name: &str, t: &Tensor| store.add(format!("{b}{FIELD_TAG}{name}"), ParamGroup::Field, t.clone(), lr);
    let mu = f("mu", &field.mu);
    let log_scale = f("log_scale", &field.log_scale);
    let quat = f("quat", &field.quat);
    let alpha_logit = f("alpha_logit", &field.alpha_logit);
    let sh = f("sh", &field.sh);
    let table = store.add(format!("{b}.hash"), ParamGroup::HashTable, hash.init_table(rng), lr);
    BranchParams { mu, log_scale, quat, alpha_logit, sh, table }
}

/// Conditioning of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameInput {
    /// Image-derived AUs (`17`).
    pub au: [f64; 17],
    /// `8 x 512` audio window centred on the frame.
    pub window: Tensor,
}

impl FrameInput {
    pub fn new(au: &[f64], audio: &Tensor, t: usize) -> Result<Self> {
        let au: [f64; 17] = au
            .try_into()
            .map_err(|_| Error::Shape(format!("AU vector of length {}", au.len())))?;
        Ok(Self { au, window: audio_window(audio, t)? })
    }

    pub fn upper(&self) -> [f64; 7] {
        UPPER_SLOTS.map(|k| self.au[k])
    }

    pub fn lower(&self) -> [f64; 10] {
        LOWER_SLOTS.map(|k| self.au[k])
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct FrameNodes {
    /// `(H*W) x 4` premultiplied RGBA of each branch.
    pub face: Var,
    pub mouth: Var,
    pub c_e_al: Var,
    pub c_e_vl: Var,
    pub c_f: Var,
    pub alpha: Option<Var>,
    /// Deformed face positions (`N x 3`).
    pub face_mu: Var,
    /// Canonical face positions as bound in this session.
    pub face_mu_canonical: Var,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub face: BranchParams,
    pub mouth: BranchParams,
    pub hash: TriPlaneHash,
    pub cmdm: Cmdm,
    pub fusion: Fusion,
    pub attention: RegionAttention,
    pub deform: DeformNet,
    /// Mouth motion `(48 + 32) -> 64 -> 64 -> 3`, position offsets only.
    pub mouth_net: Mlp,
    /// Per landmark: face primitives within the anchor radius in the initial
    /// geometry, with normalized weights.
    landmark_weights: Vec<Vec<(usize, f64)>>,
}

fn landmark_weights(face: &GeometrySpec) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = crate::synth::LANDMARKS;
    if face.primitives.len() < n {
        return Err(Error::Config(format!("face has {} primitives, needs at least {n}", face.primitives.len())));
    }
    Ok((0..n)
        .map(|a| {
            let c = face.primitives[a].position;
            let r = crate::synth::rig::RADII[a];
            let mut w: Vec<(usize, f64)> = face
                .primitives
                .iter()
                .enumerate()
                .filter_map(|(i, p)| {
                    let d2 = ((p.position[0] - c[0]).powi(2) + (p.position[1] - c[1]).powi(2)) / (r * r);
                    (d2 <= 1.0).then(|| (i, (-2.0 * d2).exp()))
                })
                .collect();
            let total: f64 = w.iter().map(|e| e.1).sum();
            w.iter_mut().for_each(|e| e.1 /= total);
            w
        })
        .collect())
}

impl Model {
    /// Builds all modules. Canonical fields start from the oracle geometry
    /// with positional jitter; everything is seeded by `seed`.
    pub fn new(config: &ModelConfig, face: &GeometrySpec, mouth: &GeometrySpec, lr: f64, seed: u64) -> Result<Self> {
        if face.branch != Branch::Face || mouth.branch != Branch::Mouth {
            return Err(Error::Contract("geometry branches out of order".into()));
        }
        let landmark_weights = landmark_weights(face)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let hash = TriPlaneHash::new(config.hash.clone());
        if hash.output_dim() != ENCODING_DIM {
            return Err(Error::Config(format!(
                "hash grid gives {} features per position, the motion networks expect {ENCODING_DIM}",
                hash.output_dim()
            )));
        }
        let face_field = GaussianField::init_static(face, config.sh_degree, seed)?;
        let mouth_field = GaussianField::init_static(mouth, config.sh_degree, seed.wrapping_add(1))?;
        let face = add_branch(&mut store, &face_field, &hash, lr, &mut rng);
        let mouth = add_branch(&mut store, &mouth_field, &hash, lr, &mut rng);
        let cmdm = Cmdm::new(&mut store, lr, &mut rng);
        let fusion = Fusion::new(&mut store, "hmmm.fusion", config.gate_mode, config.fusion_mode, lr, &mut rng);
        let attention = RegionAttention::new(&mut store, "hmmm", lr, &mut rng);
        let deform = DeformNet::new(&mut store, "face.deform", lr, &mut rng);
        let mouth_net = Mlp::new(
            &mut store,
            "mouth.deform",
            &[ENCODING_DIM + FEATURE_DIM, 64, 64, 3],
            Activation::Relu,
            Activation::Identity,
            true,
            lr,
            &mut rng,
        );
        Ok(Self {
            config: config.clone(),
            store,
            landmark_weights,
            face,
            mouth,
            hash,
            cmdm,
            fusion,
            attention,
            deform,
            mouth_net,
        })
    }

    pub fn sh_degree(&self) -> usize {
        self.config.sh_degree
    }

    pub fn face_len(&self) -> usize {
        self.store.get(self.face.mu).rows()
    }

    /// Explicit and implicit motion features of one frame.
    fn features(&self, s: &mut Session, input: &FrameInput, mask: Option<&[f64]>) -> Result<(MotionFeatures, Var)> {
        let upper = s.constant(Tensor::row(&input.upper()));
        let lower = s.constant(Tensor::row(&input.lower()));
        let c_e_vl = self.cmdm.lower.forward(s, lower)?;
        let c_i_al = self.cmdm.implicit(s, &input.window)?;
        let c_e_al = self.cmdm.a2am.forward(s, c_i_al)?;
        let c_i_al_mask = match mask {
            Some(m) => {
                let m = s.constant(Tensor::row(m));
                Some(s.graph.mul(c_i_al, m)?)
            }
            None => None,
        };
        Ok((
            MotionFeatures {
                c_e_vu: Some(upper),
                c_e_vl: Some(c_e_vl),
                c_i_al: Some(c_i_al),
                c_i_al_mask,
                c_e_al: Some(c_e_al),
            },
            upper,
        ))
    }

    /// Audio-predicted and image-derived lower-face explicit features
    /// `(c_e_al, c_e_vl)` of one frame, without rendering.
    pub fn lower_features(&self, s: &mut Session, input: &FrameInput) -> Result<(Var, Var)> {
        let (f, _) = self.features(s, input, None)?;
        Ok((f.c_e_al.expect("computed"), f.c_e_vl.expect("computed")))
    }

    fn bind_branch(&self, s: &mut Session, b: &BranchParams) -> [Var; 6] {
        [b.mu, b.log_scale, b.quat, b.alpha_logit, b.sh, b.table].map(|id| s.param(id))
    }

    /// Canonical render of both branches, no motion networks involved.
    pub fn forward_static(&self, s: &mut Session, cam: &Camera) -> Result<(Var, Var)> {
        let mut out = [None, None];
        for (k, b) in [self.face, self.mouth].iter().enumerate() {
            let [mu, ls, q, a, sh, _] = self.bind_branch(s, b);
            let q = s.graph.normalize_rows(q)?;
            out[k] = Some(render_graph(s, mu, ls, q, a, sh, self.sh_degree(), cam)?.0);
        }
        Ok((out[0].expect("face"), out[1].expect("mouth")))
    }

    /// Deformed render of both branches for one frame along `path`. `mask`
    /// is the keep-mask of the masked path.
    pub fn forward(
        &self,
        s: &mut Session,
        cam: &Camera,
        input: &FrameInput,
        path: FusionPath,
        mask: Option<&[f64]>,
    ) -> Result<FrameNodes> {
        let (feats, c_e_vu) = self.features(s, input, mask)?;
        let (c_i, c_e) = select_pair(path, &feats)?;
        let (c_f, alpha) = self.fusion.fuse(s, c_i, c_e)?;

        let [mu, ls, q, a, sh, table] = self.bind_branch(s, &self.face);
        let h = self.hash.encode_graph(s, table, mu)?;
        let (cf_map, cu_map) = self.attention.forward(s, h, c_f, c_e_vu)?;
        let (d_mu, d_s, d_q) = self.deform.forward(s, h, cu_map, cf_map)?;
        let (face_mu, face_ls, face_q) = deform_graph(s, mu, ls, q, d_mu, d_s, d_q)?;
        let (face, skip_f) = render_graph(s, face_mu, face_ls, face_q, a, sh, self.sh_degree(), cam)?;

        let [m_mu, m_ls, m_q, m_a, m_sh, m_table] = self.bind_branch(s, &self.mouth);
        let n_m = s.value(m_mu).rows();
        let h_m = self.hash.encode_graph(s, m_table, m_mu)?;
        let cond = s.graph.broadcast_rows(c_f, n_m);
        let x = s.graph.concat_cols(&[h_m, cond])?;
        let d_mu_m = self.mouth_net.forward(s, x)?;
        let mouth_mu = s.graph.add(m_mu, d_mu_m)?;
        let mouth_q = s.graph.normalize_rows(m_q)?;
        let (mouth, skip_m) = render_graph(s, mouth_mu, m_ls, mouth_q, m_a, m_sh, self.sh_degree(), cam)?;

        Ok(FrameNodes {
            face,
            mouth,
            c_e_al: feats.c_e_al.expect("computed"),
            c_e_vl: feats.c_e_vl.expect("computed"),
            c_f,
            alpha,
            face_mu,
            face_mu_canonical: mu,
            skipped: skip_f + skip_m,
        })
    }

    /// Pixel landmarks from a forward pass: the reference neutral landmarks
    /// moved by the weighted mean projected displacement of the face
    /// primitives around each landmark.
    pub fn landmarks(&self, s: &Session, nodes: &FrameNodes, cam: &Camera, neutral: &[f64]) -> Result<Vec<f64>> {
        let n = self.landmark_weights.len();
        if neutral.len() != 2 * n {
            return Err(Error::Shape(format!("{} neutral landmark values", neutral.len())));
        }
        let moved = s.value(nodes.face_mu);
        let base = s.value(nodes.face_mu_canonical);
        let project = |t: &Tensor, i: usize| -> Result<[f64; 2]> {
            let r = t.row_slice(i);
            cam.project_point([r[0], r[1], r[2]])
                .ok_or_else(|| Error::Data(format!("primitive {i} is behind the camera")))
        };
        let mut out = Vec::with_capacity(2 * n);
        for (a, weights) in self.landmark_weights.iter().enumerate() {
            let mut d = [0.0; 2];
            for &(i, w) in weights {
                let (p, q) = (project(moved, i)?, project(base, i)?);
                d[0] += w * (p[0] - q[0]);
                d[1] += w * (p[1] - q[1]);
            }
            out.push(neutral[2 * a] + d[0]);
            out.push(neutral[2 * a + 1] + d[1]);
        }
        Ok(out)
    }

    /// Names of canonical field parameters (stage 1 trains only these).
    pub fn is_field_param(name: &str) -> bool {
        name.contains(FIELD_TAG)
    }

    /// Parameter ids of the audio-to-AU projection.
    pub fn a2am_ids(&self) -> Vec<ParamId> {
        self.cmdm.a2am.mlp.param_ids()
    }
}

/// AU slots in `AU_IDS` order, for diagnostics.
pub fn au_names() -> Vec<String> {
    AU_IDS.iter().map(|id| format!("AU{id:02}")).collect()
}

/// Index of AU26 (jaw drop).
pub fn jaw_slot() -> usize {
    au_slot(26).expect("AU26 is tracked")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmmm::GateMode;
    use crate::synth::{gen_scene, SynthConfig};

    fn tiny() -> (crate::synth::SceneBundle, Model) {
        let b = gen_scene(&SynthConfig {
            frames: 8,
            width: 16,
            height: 16,
            face_prims: 60,
            mouth_prims: 10,
            ..SynthConfig::default()
        })
        .unwrap();
        let m = Model::new(&ModelConfig::default(), &b.face_geom, &b.mouth_geom, 5e-4, 0).unwrap();
        (b, m)
    }

    #[test]
    fn zero_initialized_motion_matches_static_render() {
        let (b, m) = tiny();
        let input = FrameInput::new(b.au_traj.row_slice(3), &b.audio, 3).unwrap();
        let mut s = Session::inference(&m.store);
        let (f0, m0) = m.forward_static(&mut s, &b.camera).unwrap();
        let nodes = m.forward(&mut s, &b.camera, &input, FusionPath::Audio, None).unwrap();
        assert_eq!(s.value(f0), s.value(nodes.face));
        assert_eq!(s.value(m0), s.value(nodes.mouth));
    }

    #[test]
    fn audio_path_reaches_a2am_and_vanilla_only_through_alignment() {
        let (b, mut m) = tiny();
        // break the zero-initialized last layers so gradients can propagate
        for e in m.store.entries_mut() {
            if e.name.ends_with("deform.2.weight") || e.name.ends_with("deform.2.bias") {
                e.value.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 1e-3 * ((i % 7) as f64 - 3.0));
            }
        }
        let input = FrameInput::new(b.au_traj.row_slice(2), &b.audio, 2).unwrap();
        let a2am = m.a2am_ids();
        let grad_norm = |path: FusionPath, with_align: bool| {
            let mut s = Session::new(&m.store, |_| true);
            let n = m.forward(&mut s, &b.camera, &input, path, None).unwrap();
            let img = s.graph.sum(n.face);
            let loss = if with_align {
                let al = s.graph.mean_abs_diff(n.c_e_al, n.c_e_vl).unwrap();
                s.graph.add(img, al).unwrap()
            } else {
                img
            };
            s.graph.backward(loss).unwrap();
            a2am.iter()
                .filter_map(|&id| s.bound(id).and_then(|v| s.graph.grad(v)).map(|g| g.max_abs()))
                .fold(0.0, f64::max)
        };
        assert!(grad_norm(FusionPath::Audio, false) > 0.0);
        assert_eq!(grad_norm(FusionPath::Vanilla, false), 0.0);
        assert!(grad_norm(FusionPath::Vanilla, true) > 0.0);
    }

    #[test]
    fn mismatched_hash_width_is_a_config_error() {
        let (b, _) = tiny();
        let mut cfg = ModelConfig::default();
        cfg.hash.levels = 4;
        assert!(matches!(Model::new(&cfg, &b.face_geom, &b.mouth_geom, 5e-4, 0), Err(Error::Config(_))));
        cfg = ModelConfig { gate_mode: GateMode::PureExplicit, ..ModelConfig::default() };
        assert!(Model::new(&cfg, &b.face_geom, &b.mouth_geom, 5e-4, 0).is_ok());
    }
}
