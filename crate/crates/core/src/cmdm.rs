//! Explicit (AU) and implicit (audio) motion features and the projection
//! from implicit to explicit features.

use rand::Rng;

use crate::diffmath::{ParamId, ParamStore, Session, Var};
use crate::error::{shape_err, Error, Result};
use crate::nn::{Activation, Mlp};
use crate::tensor::Tensor;

/// AU ids in storage order.
pub const AU_IDS: [u8; 17] = [1, 2, 4, 5, 6, 7, 9, 10, 12, 14, 15, 17, 20, 23, 25, 26, 45];
pub const UPPER_IDS: [u8; 7] = [1, 2, 4, 5, 6, 7, 45];
pub const LOWER_IDS: [u8; 10] = [9, 10, 12, 14, 15, 17, 20, 23, 25, 26];
/// Positions of [`UPPER_IDS`] inside [`AU_IDS`].
pub const UPPER_SLOTS: [usize; 7] = slots(&UPPER_IDS);
/// Positions of [`LOWER_IDS`] inside [`AU_IDS`].
pub const LOWER_SLOTS: [usize; 10] = slots(&LOWER_IDS);

pub const AU_MAX: f64 = 5.0;
pub const AUDIO_DIM: usize = 512;
pub const WINDOW: usize = 8;
/// Window rows are frames `t - WINDOW_BEFORE ..= t + WINDOW - 1 - WINDOW_BEFORE`.
pub const WINDOW_BEFORE: usize = 3;
pub const FEATURE_DIM: usize = 32;
pub const LEAKY_SLOPE: f64 = 0.02;

const fn slots<const N: usize>(ids: &[u8; N]) -> [usize; N] {
    let mut out = [0; N];
    let mut i = 0;
    while i < N {
        let mut j = 0;
        while AU_IDS[j] != ids[i] {
            j += 1;
        }
        out[i] = j;
        i += 1;
    }
    out
}

/// Slot of an AU id in the 17-vector.
pub fn au_slot(id: u8) -> Option<usize> {
    AU_IDS.iter().position(|&a| a == id)
}

/// 17 AU intensities in [`AU_IDS`] order, each within `[0, 5]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuVector([f64; 17]);

impl AuVector {
    pub fn new(values: [f64; 17]) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !(0.0..=AU_MAX).contains(v)) {
            return Err(Error::Data(format!("AU{:02} intensity {} outside [0, 5]", AU_IDS[k], values[k])));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; 17] = values
            .try_into()
            .map_err(|_| Error::Shape(format!("AU vector needs 17 values, got {}", values.len())))?;
        Self::new(arr)
    }

    pub fn values(&self) -> &[f64; 17] {
        &self.0
    }

    pub fn get(&self, id: u8) -> Option<f64> {
        au_slot(id).map(|k| self.0[k])
    }
}

/// Splits into the upper (7) and lower (10) subsets, selected by AU id.
pub fn partition_aus(au: &AuVector) -> ([f64; 7], [f64; 10]) {
    (UPPER_SLOTS.map(|k| au.0[k]), LOWER_SLOTS.map(|k| au.0[k]))
}

/// Upper-face explicit feature: the upper AUs unchanged.
pub fn encode_upper(upper: [f64; 7]) -> [f64; 7] {
    upper
}

/// Rows `t-3 ..= t+4` of a `T x 512` track, clamped at both ends.
pub fn audio_window(track: &Tensor, t: usize) -> Result<Tensor> {
    if track.shape().len() != 2 || track.cols() != AUDIO_DIM {
        return shape_err(format!("audio track {:?}, expected T x {AUDIO_DIM}", track.shape()));
    }
    let n = track.rows();
    if t >= n {
        return Err(Error::Contract(format!("frame {t} outside audio track of {n} frames")));
    }
    let mut data = Vec::with_capacity(WINDOW * AUDIO_DIM);
    for k in 0..WINDOW {
        let src = (t + k).saturating_sub(WINDOW_BEFORE).min(n - 1);
        data.extend_from_slice(track.row_slice(src));
    }
    Tensor::new(&[WINDOW, AUDIO_DIM], data)
}

/// Per-frame reduction `512 -> 128 -> 64` with shared weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioNet {
    pub mlp: Mlp,
}

impl AudioNet {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, lr: f64, rng: &mut R) -> Self {
        let act = Activation::LeakyRelu(LEAKY_SLOPE);
        Self {
            mlp: Mlp::new(store, name, &[AUDIO_DIM, 128, 64], act, act, false, lr, rng),
        }
    }

    /// `8 x 512` window to `8 x 64` embeddings.
    pub fn forward(&self, s: &mut Session, window: Var) -> Result<Var> {
        self.mlp.forward(s, window)
    }
}

/// Kernel-3 temporal convolution (`64 -> 32`, edge-replicated padding) followed by
/// softmax attention over the window.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioAttNet {
    /// `(3 * 64) x 32`, taps ordered previous, current, next.
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
    /// `32 x 1` content scoring vector.
    pub score: ParamId,
    /// `8 x 1` per-position logit.
    pub position: ParamId,
}

impl AudioAttNet {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, lr: f64, rng: &mut R) -> Self {
        use crate::diffmath::ParamGroup::Network;
        let fan_in = 3 * 64;
        let b = 1.0 / (fan_in as f64).sqrt();
        let mut uni = |n: usize, b: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-b..b)).collect() };
        let w = uni(fan_in * FEATURE_DIM, b);
        let bias = uni(FEATURE_DIM, b);
        let sb = 1.0 / (FEATURE_DIM as f64).sqrt();
        let score = uni(FEATURE_DIM, sb);
        let mk = |v: Vec<f64>, shape: &[usize]| Tensor::new(shape, v).expect("shape");
        Self {
            conv_weight: store.add(format!("{name}.conv.weight"), Network, mk(w, &[fan_in, FEATURE_DIM]), lr),
            conv_bias: store.add(format!("{name}.conv.bias"), Network, mk(bias, &[1, FEATURE_DIM]), lr),
            score: store.add(format!("{name}.score"), Network, mk(score, &[FEATURE_DIM, 1]), lr),
            position: store.add(format!("{name}.position"), Network, Tensor::zeros(&[WINDOW, 1]), lr),
        }
    }

    /// Returns `(c_i_al: 1 x 32, attention weights: 8 x 1, conv: 8 x 32)`.
    pub fn forward_parts(&self, s: &mut Session, emb: Var) -> Result<(Var, Var, Var)> {
        let w = s.param(self.conv_weight);
        let b = s.param(self.conv_bias);
        let v = s.param(self.score);
        let p = s.param(self.position);
        let g = &mut s.graph;
        let prev = g.shift_rows_clamped(emb, -1);
        let next = g.shift_rows_clamped(emb, 1);
        let stacked = g.concat_cols(&[prev, emb, next])?;
        let conv = g.matmul(stacked, w)?;
        let conv = g.add_row(conv, b)?;
        let content = g.matmul(conv, v)?;
        let logits = g.add(content, p)?;
        let weights = g.softmax(logits);
        let wt = g.transpose(weights);
        let out = g.matmul(wt, conv)?;
        Ok((out, weights, conv))
    }

    pub fn forward(&self, s: &mut Session, emb: Var) -> Result<Var> {
        Ok(self.forward_parts(s, emb)?.0)
    }
}

/// Lower-face encoder: `MLP(lower) (22) ++ lower (10)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerEncoder {
    pub mlp: Mlp,
}

impl LowerEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, hidden: usize, lr: f64, rng: &mut R) -> Self {
        Self {
            mlp: Mlp::new(
                store,
                name,
                &[10, hidden, FEATURE_DIM - 10],
                Activation::LeakyRelu(LEAKY_SLOPE),
                Activation::Identity,
                false,
                lr,
                rng,
            ),
        }
    }

    /// `B x 10` lower AUs to `B x 32` features.
    pub fn forward(&self, s: &mut Session, lower: Var) -> Result<Var> {
        let head = self.mlp.forward(s, lower)?;
        s.graph.concat_cols(&[head, lower])
    }
}

/// Implicit-to-explicit projection `32 -> 64 (ReLU) -> 32`.
#[derive(Clone, Debug, PartialEq)]
pub struct A2am {
    pub mlp: Mlp,
}

impl A2am {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, hidden: usize, lr: f64, rng: &mut R) -> Self {
        Self {
            mlp: Mlp::new(
                store,
                name,
                &[FEATURE_DIM, hidden, FEATURE_DIM],
                Activation::Relu,
                Activation::Identity,
                false,
                lr,
                rng,
            ),
        }
    }

    pub fn forward(&self, s: &mut Session, c_i: Var) -> Result<Var> {
        self.mlp.forward(s, c_i)
    }
}

/// All learned parts of the disentanglement module.
#[derive(Clone, Debug, PartialEq)]
pub struct Cmdm {
    pub audio_net: AudioNet,
    pub att_net: AudioAttNet,
    pub lower: LowerEncoder,
    pub a2am: A2am,
}

impl Cmdm {
    pub fn new<R: Rng>(store: &mut ParamStore, lr: f64, rng: &mut R) -> Self {
        Self {
            audio_net: AudioNet::new(store, "cmdm.audio_net", lr, rng),
            att_net: AudioAttNet::new(store, "cmdm.audio_att", lr, rng),
            lower: LowerEncoder::new(store, "cmdm.lower", 64, lr, rng),
            a2am: A2am::new(store, "cmdm.a2am", 64, lr, rng),
        }
    }

    /// Implicit feature `c_i_al` (`1 x 32`) from an `8 x 512` window.
    pub fn implicit(&self, s: &mut Session, window: &Tensor) -> Result<Var> {
        if window.shape() != [WINDOW, AUDIO_DIM] {
            return shape_err(format!("audio window {:?}", window.shape()));
        }
        let w = s.constant(window.clone());
        let emb = self.audio_net.forward(s, w)?;
        self.att_net.forward(s, emb)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.audio_net.mlp.param_ids();
        ids.extend([self.att_net.conv_weight, self.att_net.conv_bias, self.att_net.score, self.att_net.position]);
        ids.extend(self.lower.mlp.param_ids());
        ids.extend(self.a2am.mlp.param_ids());
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::finite_diff_check;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_all(store: &mut ParamStore) {
        for e in store.entries_mut() {
            e.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn partition_sizes_and_membership() {
        assert_eq!(UPPER_SLOTS.len() + LOWER_SLOTS.len(), 17);
        let mut all: Vec<usize> = UPPER_SLOTS.iter().chain(&LOWER_SLOTS).copied().collect();
        all.sort();
        assert_eq!(all, (0..17).collect::<Vec<_>>());
        let zero = AuVector::new([0.0; 17]).unwrap();
        assert_eq!(partition_aus(&zero), ([0.0; 7], [0.0; 10]));
        let mut v = [0.0; 17];
        v[au_slot(45).unwrap()] = 3.0;
        let (u, l) = partition_aus(&AuVector::new(v).unwrap());
        assert_eq!(u, [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0]);
        assert_eq!(l, [0.0; 10]);
    }

    #[test]
    fn au_vector_range_is_enforced() {
        let mut v = [1.0; 17];
        v[3] = 5.5;
        assert!(AuVector::new(v).is_err());
        assert!(AuVector::from_slice(&[0.0; 16]).is_err());
    }

    #[test]
    fn upper_encoding_is_identity() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 0.0, 0.0];
        assert_eq!(encode_upper(x), x);
        assert_eq!(encode_upper([0.0; 7]), [0.0; 7]);
    }

    #[test]
    fn window_clamps_at_edges() {
        let track = Tensor::new(&[20, 512], (0..20 * 512).map(|i| (i / 512) as f64).collect()).unwrap();
        let frame = |w: &Tensor, r: usize| w.row_slice(r)[0];
        let mid = audio_window(&track, 10).unwrap();
        assert_eq!((0..8).map(|r| frame(&mid, r)).collect::<Vec<_>>(), (7..15).map(|v| v as f64).collect::<Vec<_>>());
        let first = audio_window(&track, 0).unwrap();
        assert!((0..4).all(|r| frame(&first, r) == 0.0));
        let last = audio_window(&track, 19).unwrap();
        assert!((4..8).all(|r| frame(&last, r) == 19.0));
        assert!(audio_window(&track, 20).is_err());
    }

    #[test]
    fn zero_networks_give_zero_features() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Cmdm::new(&mut store, 1e-3, &mut rng);
        zero_all(&mut store);
        let mut s = Session::inference(&store);
        let win = Tensor::filled(&[8, 512], 0.7);
        let wv = s.constant(win.clone());
        let emb = c.audio_net.forward(&mut s, wv).unwrap();
        assert_eq!(s.value(emb).shape(), &[8, 64]);
        assert!(s.value(emb).data().iter().all(|&v| v == 0.0));
        let ci = c.implicit(&mut s, &win).unwrap();
        assert!(s.value(ci).data().iter().all(|&v| v == 0.0));
        let ce = c.a2am.forward(&mut s, ci).unwrap();
        assert_eq!(s.value(ce).shape(), &[1, 32]);
        assert!(s.value(ce).data().iter().all(|&v| v == 0.0));
        let lower: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let l = s.constant(Tensor::row(&lower));
        let f = c.lower.forward(&mut s, l).unwrap();
        assert_eq!(&s.value(f).data()[..22], &[0.0; 22]);
        assert_eq!(&s.value(f).data()[22..], lower.as_slice());
    }

    #[test]
    fn identical_window_rows_give_identical_embeddings() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Cmdm::new(&mut store, 1e-3, &mut rng);
        let mut s = Session::inference(&store);
        let row: Vec<f64> = (0..512).map(|i| (i as f64 * 0.37).sin()).collect();
        let win = Tensor::from_rows(&vec![row; 8]).unwrap();
        let wv = s.constant(win);
        let emb = c.audio_net.forward(&mut s, wv).unwrap();
        let e = s.value(emb).clone();
        for r in 1..8 {
            assert_eq!(e.row_slice(r), e.row_slice(0));
        }
    }

    #[test]
    fn attention_on_identical_frames_returns_the_frame_conv() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Cmdm::new(&mut store, 1e-3, &mut rng);
        // random positional logits so the weights are not uniform
        let pos = c.att_net.position;
        store.get_mut(pos).data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).cos());
        let mut s = Session::inference(&store);
        let row: Vec<f64> = (0..64).map(|i| (i as f64 * 0.11).cos()).collect();
        let emb = s.constant(Tensor::from_rows(&vec![row.clone(); 8]).unwrap());
        let (out, weights, conv) = c.att_net.forward_parts(&mut s, emb).unwrap();
        let total: f64 = s.value(weights).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let conv = s.value(conv).clone();
        for t in 1..8 {
            assert_eq!(conv.row_slice(t), conv.row_slice(0));
        }
        for (o, c) in s.value(out).data().iter().zip(conv.row_slice(0)) {
            assert!((o - c).abs() < 1e-12);
        }
    }

    #[test]
    fn lower_encoder_toy_weights() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = LowerEncoder::new(&mut store, "toy", 1, 1e-3, &mut rng);
        // hidden h = leaky(sum(x) * 0.1 + 0.05); head_k = h * (k + 1) * 0.01 - 0.02
        let l0 = &enc.mlp.layers[0];
        let l1 = &enc.mlp.layers[1];
        store.get_mut(l0.weight).data_mut().iter_mut().for_each(|v| *v = 0.1);
        store.get_mut(l0.bias).data_mut()[0] = 0.05;
        store.get_mut(l1.weight).data_mut().iter_mut().enumerate().for_each(|(k, v)| *v = (k + 1) as f64 * 0.01);
        store.get_mut(l1.bias).data_mut().iter_mut().for_each(|v| *v = -0.02);
        let mut s = Session::inference(&store);
        let x = s.constant(Tensor::row(&[1.0; 10]));
        let y = enc.forward(&mut s, x).unwrap();
        let h = 10.0 * 0.1 + 0.05;
        let out = s.value(y).data();
        assert_eq!(out.len(), 32);
        for k in 0..22 {
            assert!((out[k] - (h * (k + 1) as f64 * 0.01 - 0.02)).abs() < 1e-15);
        }
        assert_eq!(&out[22..], &[1.0; 10]);
    }

    #[test]
    fn a2am_toy_weights() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = A2am::new(&mut store, "toy", 1, 1e-3, &mut rng);
        zero_all(&mut store);
        let (l0, l1) = (&m.mlp.layers[0], &m.mlp.layers[1]);
        store.get_mut(l0.weight).data_mut()[0] = 2.0;
        store.get_mut(l0.bias).data_mut()[0] = -0.5;
        store.get_mut(l1.weight).data_mut()[0] = 3.0;
        store.get_mut(l1.bias).data_mut()[0] = 0.25;
        let mut s = Session::inference(&store);
        let mut x = vec![0.0; 32];
        x[0] = 1.0;
        let xv = s.constant(Tensor::row(&x));
        let y = m.forward(&mut s, xv).unwrap();
        // relu(2*1 - 0.5) * 3 + 0.25
        assert_eq!(s.value(y).data()[0], 4.75);
        assert_eq!(s.value(y).data()[1], 0.0);
    }

    fn param_gradcheck(store: &ParamStore, ids: &[ParamId], f: impl Fn(&mut Session) -> Var) -> f64 {
        let x: Vec<f64> = ids.iter().flat_map(|&id| store.get(id).data().to_vec()).collect();
        finite_diff_check(
            |x| {
                let mut st = store.clone();
                let mut off = 0;
                for &id in ids {
                    let t = st.get_mut(id);
                    let n = t.len();
                    t.data_mut().copy_from_slice(&x[off..off + n]);
                    off += n;
                }
                let mut s = Session::new(&st, |_| true);
                let loss = f(&mut s);
                let v = s.value(loss).item();
                s.graph.backward(loss)?;
                let mut g = Vec::new();
                for &id in ids {
                    let var = s.bound(id).expect("used");
                    g.extend_from_slice(s.graph.grad(var).expect("grad").data());
                }
                Ok((v, g))
            },
            &x,
            1e-6,
        )
        .unwrap()
    }

    #[test]
    fn encoder_and_projection_gradients() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = Cmdm::new(&mut store, 1e-3, &mut rng);
        let lower: Vec<f64> = (0..10).map(|i| 0.4 * i as f64).collect();
        let err = param_gradcheck(&store, &c.lower.mlp.param_ids(), |s| {
            let x = s.constant(Tensor::row(&lower));
            let y = c.lower.forward(s, x).unwrap();
            let y2 = s.graph.mul(y, y).unwrap();
            s.graph.sum(y2)
        });
        assert!(err < 1e-4, "lower encoder {err}");
        let ci: Vec<f64> = (0..32).map(|i| (i as f64 * 0.7).sin()).collect();
        let err = param_gradcheck(&store, &c.a2am.mlp.param_ids(), |s| {
            let x = s.constant(Tensor::row(&ci));
            let y = c.a2am.forward(s, x).unwrap();
            let y2 = s.graph.mul(y, y).unwrap();
            s.graph.sum(y2)
        });
        assert!(err < 1e-4, "a2am {err}");
    }

    #[test]
    fn align_gradient_is_sign_over_32() {
        let mut store = ParamStore::new();
        let a: Vec<f64> = (0..32).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..32).map(|i| 3.2 - i as f64 * 0.1 + 0.05).collect();
        let id = store.add("a", crate::diffmath::ParamGroup::Network, Tensor::row(&a), 1e-3);
        let mut s = Session::new(&store, |_| true);
        let av = s.param(id);
        let bv = s.constant(Tensor::row(&b));
        let l = s.graph.mean_abs_diff(av, bv).unwrap();
        s.graph.backward(l).unwrap();
        let g = s.graph.grad(av).unwrap();
        for k in 0..32 {
            let want = (a[k] - b[k]).signum() / 32.0;
            assert_eq!(g.data()[k], want);
        }
    }

    proptest! {
        #[test]
        fn partition_reconstructs(v in proptest::array::uniform17(0.0f64..5.0)) {
            let au = AuVector::new(v).unwrap();
            let (u, l) = partition_aus(&au);
            let mut back = [f64::NAN; 17];
            for (k, &slot) in UPPER_SLOTS.iter().enumerate() { back[slot] = u[k]; }
            for (k, &slot) in LOWER_SLOTS.iter().enumerate() { back[slot] = l[k]; }
            prop_assert_eq!(back, v);
        }

        #[test]
        fn lower_encoder_passes_raw_aus(v in proptest::array::uniform10(0.0f64..5.0), seed in 0u64..100) {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let enc = LowerEncoder::new(&mut store, "p", 64, 1e-3, &mut rng);
            let mut s = Session::inference(&store);
            let x = s.constant(Tensor::row(&v));
            let y = enc.forward(&mut s, x).unwrap();
            prop_assert_eq!(&s.value(y).data()[22..], &v[..]);
        }

        #[test]
        fn attention_weights_are_a_distribution(seed in 0u64..200) {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let att = AudioAttNet::new(&mut store, "a", 1e-3, &mut rng);
            let mut s = Session::inference(&store);
            let emb: Vec<f64> = (0..8 * 64).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
            let e = s.constant(Tensor::new(&[8, 64], emb).unwrap());
            let (_, w, _) = att.forward_parts(&mut s, e).unwrap();
            let w = s.value(w).data();
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
