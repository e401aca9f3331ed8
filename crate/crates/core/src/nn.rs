//! Fully connected layers on top of the autodiff graph.

use rand::Rng;

use crate::diffmath::{ParamGroup, ParamId, ParamStore, Session, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    pub fn apply(self, s: &mut Session, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => s.graph.relu(x),
            Activation::LeakyRelu(k) => s.graph.leaky_relu(x, k),
            Activation::Sigmoid => s.graph.sigmoid(x),
        }
    }
}

/// `y = x W + b` with `W` stored as `fan_in x fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b: Vec<f64> = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self::from_values(store, name, fan_in, fan_out, w, b, lr)
    }

    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, lr: f64) -> Self {
        Self::from_values(
            store,
            name,
            fan_in,
            fan_out,
            vec![0.0; fan_in * fan_out],
            vec![0.0; fan_out],
            lr,
        )
    }

    fn from_values(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        w: Vec<f64>,
        b: Vec<f64>,
        lr: f64,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            ParamGroup::Network,
            Tensor::new(&[fan_in, fan_out], w).expect("weight shape"),
            lr,
        );
        let bias = store.add(
            format!("{name}.bias"),
            ParamGroup::Network,
            Tensor::new(&[1, fan_out], b).expect("bias shape"),
            lr,
        );
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let xw = s.graph.matmul(x, w)?;
        s.graph.add_row(xw, b)
    }
}

/// A stack of [`Linear`] layers with one hidden activation and one output activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    /// `widths` lists every layer width including input and output. With
    /// `zero_last`, the final layer starts at exactly zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        zero_last: bool,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let lname = format!("{name}.{i}");
                if zero_last && i == n - 1 {
                    Linear::zeros(store, &lname, widths[i], widths[i + 1], lr)
                } else {
                    Linear::new(store, &lname, widths[i], widths[i + 1], lr, rng)
                }
            })
            .collect();
        Self {
            layers,
            hidden,
            output,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(s, h)?;
            let act = if i == last { self.output } else { self.hidden };
            h = act.apply(s, h);
        }
        Ok(h)
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_last_layer_outputs_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&mut store, "m", &[4, 8, 3], Activation::Relu, Activation::Identity, true, 1e-3, &mut rng);
        let mut s = Session::inference(&store);
        let x = s.constant(Tensor::new(&[2, 4], vec![1.0, -2.0, 0.5, 3.0, 0.1, 0.2, 0.3, 0.4]).unwrap());
        let y = mlp.forward(&mut s, x).unwrap();
        assert_eq!(s.value(y).shape(), &[2, 3]);
        assert!(s.value(y).data().iter().all(|&v| v == 0.0));
    }
}
