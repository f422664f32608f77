use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{ColumnStats, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(s) => tape.leaky_relu(x, s),
            Activation::Tanh => tape.tanh(x),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    /// Absent when batch normalisation follows (its shift subsumes a bias).
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Batch normalisation over the row (node) dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(1, width, 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, width)),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    /// Training mode normalises with batch statistics and returns them.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, training: bool) -> Result<(Var, Option<ColumnStats>)> {
        let (norm, stats) = if training {
            let (n, s) = tape.normalize_batch(x, BN_EPS);
            (n, Some(s))
        } else {
            let frozen = ColumnStats {
                mean: self.running_mean.clone(),
                var: self.running_var.clone(),
            };
            (tape.normalize_fixed(x, &frozen, BN_EPS)?, None)
        };
        let scaled = tape.mul_row(norm, vars[self.gamma.0])?;
        Ok((tape.add_row(scaled, vars[self.beta.0])?, stats))
    }

    /// Exponential moving update; `momentum = 1` copies the batch statistics.
    pub fn update_running(&mut self, stats: &ColumnStats, momentum: f64) {
        for (r, b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = ((1.0 - momentum) * *r + momentum * b).max(f64::MIN_POSITIVE);
        }
    }
}

/// Fully connected stack: hidden layers get (optional batch norm then)
/// the hidden activation; the output layer is linear unless
/// `activate_output` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub activate_output: bool,
    pub norms: Vec<Option<BatchNorm>>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        activation: Activation,
        batch_norm: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self::build(store, name, dims, activation, batch_norm, false, rng)
    }

    /// Like [`Mlp::new`] but the output layer is also normalised and
    /// activated.
    pub fn with_normalized_output(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        Self::build(store, name, dims, activation, true, true, rng)
    }

    fn build(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        activation: Activation,
        hidden_norm: bool,
        output_norm: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        for (l, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let hidden = l + 2 < dims.len();
            let normed = if hidden { hidden_norm } else { output_norm };
            let weight = store.add_uniform(format!("{name}.{l}.weight"), fan_in, fan_out, fan_in, rng);
            let bias = (!normed).then(|| store.add_uniform(format!("{name}.{l}.bias"), 1, fan_out, fan_in, rng));
            layers.push(Linear {
                weight,
                bias,
                fan_in,
                fan_out,
            });
            norms.push(normed.then(|| BatchNorm::new(store, &format!("{name}.{l}.bn"), fan_out)));
        }
        Self {
            layers,
            activation,
            activate_output: output_norm,
            norms,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    /// Returns the output node and, in training mode, the batch statistics of
    /// each normalised layer (for [`Mlp::update_running`]).
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        input: Var,
        training: bool,
    ) -> Result<(Var, Vec<Option<ColumnStats>>)> {
        let width = tape.value(input).cols();
        if width != self.input_dim() {
            return Err(Error::Shape(format!(
                "MLP expects {} input columns, got {width}",
                self.input_dim()
            )));
        }
        let mut h = input;
        let mut stats = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            h = tape.matmul(h, vars[layer.weight.0])?;
            if let Some(b) = layer.bias {
                h = tape.add_row(h, vars[b.0])?;
            }
            let mut s = None;
            if let Some(bn) = &self.norms[l] {
                let (out, st) = bn.forward(tape, vars, h, training)?;
                h = out;
                s = st;
            }
            stats.push(s);
            if l < last || self.activate_output {
                h = self.activation.apply(tape, h);
            }
        }
        Ok((h, stats))
    }

    pub fn update_running(&mut self, stats: &[Option<ColumnStats>], momentum: f64) {
        for (norm, s) in self.norms.iter_mut().zip(stats) {
            if let (Some(bn), Some(s)) = (norm, s) {
                bn.update_running(s, momentum);
            }
        }
    }

    /// Convenience forward on plain tensors in inference mode.
    pub fn eval(&self, store: &ParamStore, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = store.bind_constant(&mut tape);
        let x = tape.constant(input.clone());
        let (out, _) = self.forward(&mut tape, &vars, x, false)?;
        Ok(tape.value(out).clone())
    }
}
