//! Tri-plane multiresolution hash encoding of canonical positions.
//!
//! Each of the XY, YZ and XZ planes carries `levels` grids whose resolution
//! grows geometrically from `min_res` to `max_res`. Coarse levels whose
//! vertex count fits in the table are stored densely; finer levels are hashed.
//! A query bilinearly interpolates the four surrounding vertices on every
//! plane and level and concatenates the results.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{CustomOp, Session, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

const PRIME_X: u64 = 1;
const PRIME_Y: u64 = 2_654_435_761;

/// Axis pairs of the three planes.
const PLANES: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashConfig {
    pub levels: usize,
    pub features: usize,
    pub table_size: usize,
    pub min_res: usize,
    pub max_res: usize,
}

impl Default for HashConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            features: 2,
            table_size: 1 << 14,
            min_res: 16,
            max_res: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriPlaneHash {
    config: HashConfig,
    resolutions: Vec<usize>,
    /// Row offset of `(plane, level)` at index `plane * levels + level`.
    offsets: Vec<usize>,
    total_rows: usize,
}

impl TriPlaneHash {
    pub fn new(config: HashConfig) -> Self {
        let l = config.levels.max(1);
        let growth = if l > 1 {
            ((config.max_res as f64).ln() - (config.min_res as f64).ln()) / (l - 1) as f64
        } else {
            0.0
        };
        let resolutions: Vec<usize> = (0..l)
            .map(|i| ((config.min_res as f64) * (growth * i as f64).exp()).round().max(1.0) as usize)
            .collect();
        let mut offsets = Vec::with_capacity(3 * l);
        let mut total = 0;
        for _plane in 0..3 {
            for &r in &resolutions {
                offsets.push(total);
                total += ((r + 1) * (r + 1)).min(config.table_size);
            }
        }
        Self {
            config,
            resolutions,
            offsets,
            total_rows: total,
        }
    }

    pub fn config(&self) -> &HashConfig {
        &self.config
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.resolutions
    }

    pub fn output_dim(&self) -> usize {
        3 * self.config.levels * self.config.features
    }

    /// Shape of the feature table tensor: `[rows, features]`.
    pub fn table_shape(&self) -> [usize; 2] {
        [self.total_rows, self.config.features]
    }

    pub fn is_dense(&self, level: usize) -> bool {
        let r = self.resolutions[level];
        (r + 1) * (r + 1) <= self.config.table_size
    }

    /// Index of vertex `(ix, iy)` within the level's table.
    pub fn hash_index(&self, ix: usize, iy: usize, level: usize) -> usize {
        if self.is_dense(level) {
            iy * (self.resolutions[level] + 1) + ix
        } else {
            let h = (ix as u64).wrapping_mul(PRIME_X) ^ (iy as u64).wrapping_mul(PRIME_Y);
            (h % self.config.table_size as u64) as usize
        }
    }

    /// Uniform `[-1e-4, 1e-4]` table.
    pub fn init_table<R: Rng>(&self, rng: &mut R) -> Tensor {
        let [rows, f] = self.table_shape();
        let data = (0..rows * f).map(|_| rng.random_range(-1e-4..=1e-4)).collect();
        Tensor::new(&[rows, f], data).expect("table shape")
    }

    fn corners(&self, p: &[f64], plane: usize, level: usize) -> Corner {
        let (a, b) = PLANES[plane];
        let r = self.resolutions[level];
        let axis = |v: f64| {
            let clamped = v.clamp(-1.0, 1.0);
            let inside = v > -1.0 && v < 1.0;
            let u = (clamped + 1.0) * 0.5 * r as f64;
            let i0 = (u.floor() as usize).min(r - 1);
            (i0, u - i0 as f64, inside)
        };
        let (ix, fx, in_x) = axis(p[a]);
        let (iy, fy, in_y) = axis(p[b]);
        let base = self.offsets[plane * self.config.levels + level];
        let idx = [
            base + self.hash_index(ix, iy, level),
            base + self.hash_index(ix + 1, iy, level),
            base + self.hash_index(ix, iy + 1, level),
            base + self.hash_index(ix + 1, iy + 1, level),
        ];
        Corner {
            idx,
            fx,
            fy,
            dscale: 0.5 * r as f64,
            in_x,
            in_y,
        }
    }

    /// Feature vector for one position.
    pub fn encode(&self, table: &Tensor, mu: &[f64]) -> Vec<f64> {
        let f = self.config.features;
        let mut out = Vec::with_capacity(self.output_dim());
        for plane in 0..3 {
            for level in 0..self.config.levels {
                let c = self.corners(mu, plane, level);
                let w = c.weights();
                for k in 0..f {
                    let v = (0..4).map(|j| w[j] * table.data()[c.idx[j] * f + k]).sum();
                    out.push(v);
                }
            }
        }
        out
    }

    /// Encodes every row of `mu` (`N x 3`) into an `N x output_dim` node,
    /// differentiable with respect to both the table and the positions.
    pub fn encode_graph(&self, s: &mut Session, table: Var, mu: Var) -> Result<Var> {
        let t = s.value(table);
        if t.shape() != self.table_shape() {
            return shape_err(format!("hash table {:?}, expected {:?}", t.shape(), self.table_shape()));
        }
        let m = s.value(mu);
        if m.cols() != 3 {
            return shape_err("positions must be N x 3");
        }
        let n = m.rows();
        let d = self.output_dim();
        let mut out = Vec::with_capacity(n * d);
        let mut corners = Vec::with_capacity(n * 3 * self.config.levels);
        for i in 0..n {
            let p = m.row_slice(i);
            for plane in 0..3 {
                for level in 0..self.config.levels {
                    let c = self.corners(p, plane, level);
                    let w = c.weights();
                    for k in 0..self.config.features {
                        out.push((0..4).map(|j| w[j] * t.data()[c.idx[j] * self.config.features + k]).sum());
                    }
                    corners.push(c);
                }
            }
        }
        let output = Tensor::new(&[n, d], out)?;
        let op = HashEncodeOp {
            features: self.config.features,
            levels: self.config.levels,
            corners,
        };
        Ok(s.graph.custom(Box::new(op), &[table, mu], output))
    }
}

#[derive(Clone, Copy, Debug)]
struct Corner {
    idx: [usize; 4],
    fx: f64,
    fy: f64,
    dscale: f64,
    in_x: bool,
    in_y: bool,
}

impl Corner {
    /// Bilinear weights for `(x0,y0), (x1,y0), (x0,y1), (x1,y1)`.
    fn weights(&self) -> [f64; 4] {
        let (fx, fy) = (self.fx, self.fy);
        [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy]
    }
}

struct HashEncodeOp {
    features: usize,
    levels: usize,
    corners: Vec<Corner>,
}

impl CustomOp for HashEncodeOp {
    fn name(&self) -> &'static str {
        "triplane_hash_encode"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>> {
        let table = inputs[0];
        let f = self.features;
        let per_row = 3 * self.levels;
        let n = output.rows();
        let d = output.cols();
        let mut g_table = Tensor::zeros(table.shape());
        let mut g_mu = Tensor::zeros(&[n, 3]);
        for i in 0..n {
            for slot in 0..per_row {
                let c = &self.corners[i * per_row + slot];
                let w = c.weights();
                let plane = slot / self.levels;
                let (a, b) = PLANES[plane];
                for k in 0..f {
                    let g = grad_out.data()[i * d + slot * f + k];
                    if g == 0.0 {
                        continue;
                    }
                    for j in 0..4 {
                        g_table.data_mut()[c.idx[j] * f + k] += w[j] * g;
                    }
                    let e = |j: usize| table.data()[c.idx[j] * f + k];
                    let d_fx = (1.0 - c.fy) * (e(1) - e(0)) + c.fy * (e(3) - e(2));
                    let d_fy = (1.0 - c.fx) * (e(2) - e(0)) + c.fx * (e(3) - e(1));
                    if c.in_x {
                        g_mu.data_mut()[i * 3 + a] += g * d_fx * c.dscale;
                    }
                    if c.in_y {
                        g_mu.data_mut()[i * 3 + b] += g * d_fy * c.dscale;
                    }
                }
            }
        }
        vec![Some(g_table), Some(g_mu)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{finite_diff_check, ParamStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn enc() -> TriPlaneHash {
        TriPlaneHash::new(HashConfig::default())
    }

    #[test]
    fn output_is_48_wide() {
        assert_eq!(enc().output_dim(), 48);
        let table = Tensor::zeros(&enc().table_shape());
        assert_eq!(enc().encode(&table, &[0.1, 0.2, 0.3]).len(), 48);
    }

    #[test]
    fn zero_tables_give_zero_features() {
        let table = Tensor::zeros(&enc().table_shape());
        assert!(enc().encode(&table, &[0.3, -0.4, 0.9]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resolutions_span_configured_range() {
        let e = enc();
        assert_eq!(e.resolutions()[0], 16);
        assert_eq!(*e.resolutions().last().unwrap(), 256);
        assert!(e.is_dense(0));
        assert!(!e.is_dense(7));
    }

    #[test]
    fn dense_and_hashed_indices() {
        let e = enc();
        assert_eq!(e.hash_index(1, 2, 0), 2 * 17 + 1);
        assert_eq!(e.hash_index(0, 0, 7), 0);
        assert_eq!(e.hash_index(5, 9, 7), e.hash_index(5, 9, 7));
        let expected = ((5u64) ^ (9u64 * 2_654_435_761)) % (1 << 14);
        assert_eq!(e.hash_index(5, 9, 7) as u64, expected);
    }

    #[test]
    fn indices_stay_in_table() {
        let e = enc();
        for level in 0..8 {
            let r = e.resolutions()[level];
            for &(x, y) in &[(0, 0), (r, r), (r, 0), (0, r), (r / 2, r / 3)] {
                let idx = e.hash_index(x, y, level);
                let cap = ((r + 1) * (r + 1)).min(1 << 14);
                assert!(idx < cap, "level {level}: {idx} >= {cap}");
            }
        }
    }

    #[test]
    fn knot_query_returns_vertex_entry() {
        let e = enc();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let table = e.init_table(&mut rng);
        // x = y = z = 0 sits on vertex (8, 8) at the 16-resolution level.
        let feat = e.encode(&table, &[0.0, 0.0, 0.0]);
        let row = e.hash_index(8, 8, 0);
        assert_eq!(feat[0], table.data()[row * 2]);
        assert_eq!(feat[1], table.data()[row * 2 + 1]);
    }

    #[test]
    fn out_of_range_positions_are_clamped() {
        let e = enc();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let table = e.init_table(&mut rng);
        assert_eq!(e.encode(&table, &[3.0, -7.0, 1.5]), e.encode(&table, &[1.0, -1.0, 1.0]));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let e = TriPlaneHash::new(HashConfig { levels: 3, table_size: 64, min_res: 4, max_res: 16, features: 2 });
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let table: Tensor = e.init_table(&mut rng).map(|v| v * 1e4);
        let mu = Tensor::new(&[2, 3], vec![0.13, -0.42, 0.71, -0.66, 0.05, 0.28]).unwrap();
        let weights: Vec<f64> = (0..2 * e.output_dim()).map(|i| ((i * 7) as f64).sin()).collect();
        let nt = table.len();
        let eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let store = ParamStore::new();
            let mut s = Session::inference(&store);
            let t = s.graph.param(Tensor::new(e.table_shape().as_ref(), x[..nt].to_vec())?);
            let m = s.graph.param(Tensor::new(&[2, 3], x[nt..].to_vec())?);
            let h = e.encode_graph(&mut s, t, m)?;
            let w = s.constant(Tensor::new(&[2, e.output_dim()], weights.clone())?);
            let p = s.graph.mul(h, w)?;
            let l = s.graph.sum(p);
            s.graph.backward(l)?;
            let mut g = s.graph.grad(t).unwrap().data().to_vec();
            g.extend_from_slice(s.graph.grad(m).unwrap().data());
            Ok((s.value(l).item(), g))
        };
        let mut x = table.data().to_vec();
        x.extend_from_slice(mu.data());
        let err = finite_diff_check(eval, &x, 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
