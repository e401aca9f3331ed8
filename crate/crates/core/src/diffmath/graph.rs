//! Tape-style reverse-mode automatic differentiation.
//!
//! Nodes are appended in evaluation order, so the node index is a valid
//! topological order: `backward` walks indices from the loss down to zero and
//! accumulates into parents in a fixed order. Two identical graphs therefore
//! produce bitwise-identical gradients.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose forward pass is computed outside the graph and whose
/// backward pass is supplied by the implementor.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input (`None` where the input gets nothing).
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor)
        -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    BroadcastRows(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    MeanAbsDiff(Var, Var),
    SoftmaxCol(Var),
    NormalizeRows(Var),
    Reshape(Var),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A computation graph over [`Tensor`] values.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return shape_err(format!("{what}: {:?} vs {:?}", x.shape(), y.shape()));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add")?;
        let v = self.zip(a, b, |p, q| p + q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "sub")?;
        let v = self.zip(a, b, |p, q| p - q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "mul")?;
        let v = self.zip(a, b, |p, q| p * q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.scale(a, -1.0);
        self.add_scalar(n, 1.0)
    }

    /// `(m x k) * (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a));
        let (k2, n) = dims2(self.value(b));
        if k != k2 {
            return shape_err(format!("matmul inner dims {k} vs {k2}"));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn row_broadcast_check(&self, a: Var, r: Var, what: &str) -> Result<(usize, usize)> {
        let (m, n) = dims2(self.value(a));
        if self.value(r).len() != n {
            return shape_err(format!(
                "{what}: row of {} against {m}x{n}",
                self.value(r).len()
            ));
        }
        Ok((m, n))
    }

    /// `a (m x n) + r (1 x n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (m, n) = self.row_broadcast_check(a, r, "add_row")?;
        let rv = self.value(r).data();
        let mut out = self.value(a).clone();
        for i in 0..m {
            for (o, b) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(rv) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(r);
        Ok(self.push(out, Op::AddRow(a, r), rg))
    }

    /// `a (m x n) * r (1 x n)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (m, n) = self.row_broadcast_check(a, r, "mul_row")?;
        let rv = self.value(r).data();
        let mut out = self.value(a).clone();
        for i in 0..m {
            for (o, b) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(rv) {
                *o *= b;
            }
        }
        let rg = self.rg(a) || self.rg(r);
        Ok(self.push(out, Op::MulRow(a, r), rg))
    }

    /// `a (m x n) * c (m x 1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(a));
        if self.value(c).len() != m {
            return shape_err(format!("mul_col: column of {} against {m}x{n}", self.value(c).len()));
        }
        let cv = self.value(c).data();
        let mut out = self.value(a).clone();
        for i in 0..m {
            for o in &mut out.data_mut()[i * n..(i + 1) * n] {
                *o *= cv[i];
            }
        }
        let rg = self.rg(a) || self.rg(c);
        Ok(self.push(out, Op::MulCol(a, c), rg))
    }

    /// Repeats a `1 x n` row `m` times.
    pub fn broadcast_rows(&mut self, a: Var, m: usize) -> Var {
        let r = self.value(a).data().to_vec();
        let n = r.len();
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(&r);
        }
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[m, n], data).expect("shape"),
            Op::BroadcastRows(a),
            rg,
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(v, Op::LeakyRelu(a, slope), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = match parts.first() {
            Some(p) => self.value(*p).rows(),
            None => return shape_err("concat of nothing"),
        };
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        if parts.iter().any(|p| self.value(*p).rows() != m) {
            return shape_err("concat_cols: row counts differ");
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Tensor::new(&[m, n], data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = dims2(self.value(a));
        if start > end || end > n {
            return shape_err(format!("slice [{start},{end}) of {n} columns"));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&[m, w], data)?, Op::SliceCols(a, start), rg))
    }

    /// `out[i] = a[i + offset]`, zero where `i + offset` falls outside.
    pub fn shift_rows(&mut self, a: Var, offset: isize) -> Var {
        let m = self.value(a).rows() as isize;
        let src = (0..m)
            .map(|i| {
                let j = i + offset;
                (0..m).contains(&j).then_some(j as usize)
            })
            .collect();
        self.gather_rows(a, src)
    }

    /// `out[i] = a[clamp(i + offset)]`: edge rows are replicated.
    pub fn shift_rows_clamped(&mut self, a: Var, offset: isize) -> Var {
        let m = self.value(a).rows() as isize;
        let src = (0..m).map(|i| Some((i + offset).clamp(0, m - 1) as usize)).collect();
        self.gather_rows(a, src)
    }

    /// `out[i] = a[src[i]]`, or a zero row for `None`.
    pub fn gather_rows(&mut self, a: Var, src: Vec<Option<usize>>) -> Var {
        let (m, n) = dims2(self.value(a));
        let data_in = self.value(a).data();
        let mut data = vec![0.0; src.len() * n];
        for (i, j) in src.iter().enumerate() {
            if let Some(j) = *j {
                assert!(j < m, "gather_rows: row {j} out of {m}");
                data[i * n..(i + 1) * n].copy_from_slice(&data_in[j * n..(j + 1) * n]);
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[src.len(), n], data).expect("shape"),
            Op::GatherRows(a, src),
            rg,
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = dims2(self.value(a));
        let v = transpose(self.value(a).data(), m, n);
        let rg = self.rg(a);
        self.push(Tensor::new(&[n, m], v).expect("shape"), Op::Transpose(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Mean absolute difference, a scalar.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return shape_err("mean_abs_diff: element counts differ");
        }
        let x = self.value(a).data();
        let y = self.value(b).data();
        let s = x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len().max(1) as f64;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s), Op::MeanAbsDiff(a, b), rg))
    }

    /// Softmax over all entries of `a` (used on `m x 1` score columns).
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mx = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = t.data().iter().map(|v| (v - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        let out = Tensor::new(t.shape(), e.into_iter().map(|v| v / z).collect()).expect("shape");
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxCol(a), rg)
    }

    /// Divides every row by its Euclidean norm; rows with norm below `1e-12`
    /// are rejected.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(a));
        let mut out = self.value(a).clone();
        for i in 0..m {
            let row = &mut out.data_mut()[i * n..(i + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm >= 1e-12) {
                return Err(Error::DegenerateRotation(i));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::NormalizeRows(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// Records a custom operation whose forward value was computed by the caller.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], output: Tensor) -> Var {
        let rg = inputs.iter().any(|v| self.rg(*v));
        self.push(output, Op::Custom(op, inputs.to_vec()), rg)
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(existing) => existing.add_assign(&g),
            None => {
                let g = if g.shape() == node.value.shape() {
                    g
                } else {
                    g.reshape(node.value.shape()).expect("grad size matches value")
                };
                node.grad = Some(g);
            }
        }
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate into any
    /// existing ones; call [`Graph::zero_grad`] between independent sweeps.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let seed = Tensor::filled(self.value(loss).shape(), 1.0);
        self.accumulate(loss, seed);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = match self.nodes[idx].grad.take() {
                Some(g) => g,
                None => continue,
            };
            let contributions = self.local_grads(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (v, cg) in contributions {
                self.accumulate(v, cg);
            }
        }
        Ok(())
    }

    fn local_grads(&self, idx: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut res = Vec::new();
        let want = |v: &Var| self.rg(*v);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(a) {
                    res.push((*a, g.clone()));
                }
                if want(b) {
                    res.push((*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    res.push((*a, g.clone()));
                }
                if want(b) {
                    res.push((*b, g.map(|x| -x)));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    res.push((*a, elementwise(g, self.value(*b), |p, q| p * q)));
                }
                if want(b) {
                    res.push((*b, elementwise(g, self.value(*a), |p, q| p * q)));
                }
            }
            Op::Scale(a, k) => {
                if want(a) {
                    let k = *k;
                    res.push((*a, g.map(|x| x * k)));
                }
            }
            Op::AddScalar(a) => {
                if want(a) {
                    res.push((*a, g.clone()));
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.value(*a));
                let n = self.value(*b).cols();
                if want(a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.value(*b).data(), true, &mut ga, false);
                    res.push((*a, Tensor::new(&[m, k], ga).expect("shape")));
                }
                if want(b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, g.data(), false, &mut gb, false);
                    res.push((*b, Tensor::new(&[k, n], gb).expect("shape")));
                }
            }
            Op::AddRow(a, r) => {
                if want(a) {
                    res.push((*a, g.clone()));
                }
                if want(r) {
                    res.push((*r, column_sums(g)));
                }
            }
            Op::MulRow(a, r) => {
                let (m, n) = dims2(g);
                let rv = self.value(*r).data();
                if want(a) {
                    let mut ga = g.clone();
                    for i in 0..m {
                        for (o, b) in ga.data_mut()[i * n..(i + 1) * n].iter_mut().zip(rv) {
                            *o *= b;
                        }
                    }
                    res.push((*a, ga));
                }
                if want(r) {
                    let prod = elementwise(g, self.value(*a), |p, q| p * q);
                    res.push((*r, column_sums(&prod)));
                }
            }
            Op::MulCol(a, c) => {
                let (m, n) = dims2(g);
                let cv = self.value(*c).data();
                if want(a) {
                    let mut ga = g.clone();
                    for i in 0..m {
                        for o in &mut ga.data_mut()[i * n..(i + 1) * n] {
                            *o *= cv[i];
                        }
                    }
                    res.push((*a, ga));
                }
                if want(c) {
                    let av = self.value(*a).data();
                    let gc: Vec<f64> = (0..m)
                        .map(|i| {
                            (0..n).map(|j| g.data()[i * n + j] * av[i * n + j]).sum::<f64>()
                        })
                        .collect();
                    res.push((*c, Tensor::new(&[m, 1], gc).expect("shape")));
                }
            }
            Op::BroadcastRows(a) => {
                if want(a) {
                    res.push((*a, column_sums(g)));
                }
            }
            Op::Relu(a) => {
                if want(a) {
                    res.push((*a, elementwise(g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })));
                }
            }
            Op::LeakyRelu(a, slope) => {
                if want(a) {
                    let s = *slope;
                    res.push((*a, elementwise(g, self.value(*a), |gv, x| if x > 0.0 { gv } else { s * gv })));
                }
            }
            Op::Sigmoid(a) => {
                if want(a) {
                    res.push((*a, elementwise(g, out, |gv, y| gv * y * (1.0 - y))));
                }
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let n = g.cols();
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if want(p) {
                        let mut d = Vec::with_capacity(m * w);
                        for i in 0..m {
                            d.extend_from_slice(&g.data()[i * n + off..i * n + off + w]);
                        }
                        res.push((*p, Tensor::new(&[m, w], d).expect("shape")));
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                if want(a) {
                    let (m, n) = dims2(self.value(*a));
                    let w = g.cols();
                    let mut ga = Tensor::zeros(&[m, n]);
                    for i in 0..m {
                        ga.data_mut()[i * n + start..i * n + start + w]
                            .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    res.push((*a, ga));
                }
            }
            Op::GatherRows(a, src) => {
                if want(a) {
                    let n = g.cols();
                    let m = self.nodes[a.0].value.rows();
                    let mut ga = Tensor::zeros(&[m, n]);
                    for (i, j) in src.iter().enumerate() {
                        if let Some(j) = *j {
                            for c in 0..n {
                                ga.data_mut()[j * n + c] += g.data()[i * n + c];
                            }
                        }
                    }
                    res.push((*a, ga));
                }
            }
            Op::Transpose(a) => {
                if want(a) {
                    let (m, n) = dims2(g);
                    res.push((*a, Tensor::new(&[n, m], transpose(g.data(), m, n)).expect("shape")));
                }
            }
            Op::Sum(a) => {
                if want(a) {
                    res.push((*a, Tensor::filled(self.value(*a).shape(), g.item())));
                }
            }
            Op::Mean(a) => {
                if want(a) {
                    let n = self.value(*a).len().max(1) as f64;
                    res.push((*a, Tensor::filled(self.value(*a).shape(), g.item() / n)));
                }
            }
            Op::MeanAbsDiff(a, b) => {
                let x = self.value(*a);
                let y = self.value(*b);
                let k = g.item() / x.len().max(1) as f64;
                let sign = elementwise(x, y, |p, q| k * sgn(p - q));
                if want(b) {
                    res.push((*b, sign.map(|v| -v)));
                }
                if want(a) {
                    res.push((*a, sign));
                }
            }
            Op::SoftmaxCol(a) => {
                if want(a) {
                    let dot: f64 = g.data().iter().zip(out.data()).map(|(p, q)| p * q).sum();
                    res.push((*a, elementwise(g, out, |gv, s| s * (gv - dot))));
                }
            }
            Op::NormalizeRows(a) => {
                if want(a) {
                    let (m, n) = dims2(out);
                    let x = self.value(*a).data();
                    let mut ga = Tensor::zeros(&[m, n]);
                    for i in 0..m {
                        let xr = &x[i * n..(i + 1) * n];
                        let yr = &out.data()[i * n..(i + 1) * n];
                        let gr = &g.data()[i * n..(i + 1) * n];
                        let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let yg: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..n {
                            ga.data_mut()[i * n + c] = (gr[c] - yr[c] * yg) / norm;
                        }
                    }
                    res.push((*a, ga));
                }
            }
            Op::Reshape(a) => {
                if want(a) {
                    res.push((*a, g.clone()));
                }
            }
            Op::Custom(op, inputs) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let grads = op.backward(&vals, out, g);
                for (v, gv) in inputs.iter().zip(grads) {
                    if let Some(gv) = gv {
                        if want(v) {
                            res.push((*v, gv));
                        }
                    }
                }
            }
        }
        res
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

fn column_sums(g: &Tensor) -> Tensor {
    let (m, n) = dims2(g);
    let mut s = vec![0.0; n];
    for i in 0..m {
        for (acc, v) in s.iter_mut().zip(&g.data()[i * n..(i + 1) * n]) {
            *acc += v;
        }
    }
    Tensor::new(&[1, n], s).expect("shape")
}

fn transpose(src: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_derivative_six_at_three() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn identity_has_unit_derivative() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(5.0));
        let y = g.sum(x);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 1.0);
    }

    #[test]
    fn total_opacity_derivative_matches_hand_result() {
        // A = a1 + a2 (1 - a1)  =>  dA/da1 = 1 - a2
        let mut g = Graph::new();
        let a1 = g.param(Tensor::scalar(0.5));
        let a2 = g.param(Tensor::scalar(0.5));
        let t = g.one_minus(a1);
        let second = g.mul(a2, t).unwrap();
        let total = g.add(a1, second).unwrap();
        assert_eq!(g.value(total).item(), 0.75);
        g.backward(total).unwrap();
        assert_eq!(g.grad(a1).unwrap().item(), 0.5);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.param(Tensor::scalar(4.0));
        let y = g.mul(c, x).unwrap();
        g.backward(y).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().item(), 2.0);
    }

    #[test]
    fn repeated_backward_after_zeroing_is_bitwise_identical() {
        let mut g = Graph::new();
        let w = g.param(Tensor::new(&[3, 2], vec![0.3, -0.2, 0.7, 0.1, -0.5, 0.9]).unwrap());
        let x = g.constant(Tensor::new(&[4, 3], (0..12).map(|v| (v as f64).cos()).collect()).unwrap());
        let h = g.matmul(x, w).unwrap();
        let s = g.sigmoid(h);
        let l = g.mean(s);
        g.backward(l).unwrap();
        let first = g.grad(w).unwrap().clone();
        g.zero_grad();
        g.backward(l).unwrap();
        let second = g.grad(w).unwrap();
        for (a, b) in first.data().iter().zip(second.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn normalize_rejects_zero_rows() {
        let mut g = Graph::new();
        let q = g.param(Tensor::new(&[2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        assert!(matches!(g.normalize_rows(q), Err(Error::DegenerateRotation(1))));
    }
}
