use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use super::graph::{gelu, sigmoid, Graph, Var};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Probabilities produced by a sigmoid head are kept inside this band.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Identity,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => gelu(x),
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP),
        }
    }

    fn on_graph(self, g: &mut Graph, v: Var) -> Var {
        match self {
            Activation::Relu => g.relu(v),
            Activation::Gelu => g.gelu(v),
            Activation::Identity => v,
            Activation::Sigmoid => {
                let s = g.sigmoid(v);
                g.clamp(s, PROB_CLAMP, 1.0 - PROB_CLAMP)
            }
        }
    }
}

/// Fully connected network with a shared hidden activation.
///
/// Weights are stored `fan_in × fan_out`, so a batch `x (n×fan_in)` maps to
/// `x·W + b`. Biases are `1 × fan_out` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    hidden: Activation,
    output: Activation,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array2<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(
        layer_dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "an MLP needs at least two positive layer widths, got {layer_dims:?}"
            )));
        }
        if matches!(hidden, Activation::Sigmoid) {
            return Err(Error::Config(
                "sigmoid is only supported as an output activation".into(),
            ));
        }
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot limit");
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.sample(dist)
            }));
            biases.push(Array2::zeros((1, fan_out)));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            hidden,
            output,
            weights,
            biases,
        })
    }

    /// `input → hidden×depth → output`.
    pub fn with_hidden(
        input: usize,
        width: usize,
        depth: usize,
        output: usize,
        hidden: Activation,
        out_act: Activation,
        rng: &mut SimRng,
    ) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(width, depth));
        dims.push(output);
        Self::new(&dims, hidden, out_act, rng)
    }

    /// Build from explicit parameters (checkpoint loading, tests).
    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array2<f64>>,
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Config(
                "weights and biases must pair up per layer".into(),
            ));
        }
        let mut dims = vec![weights[0].nrows()];
        for (w, b) in weights.iter().zip(&biases) {
            let prev = *dims.last().unwrap();
            if w.nrows() != prev {
                return Err(Error::Dimension {
                    context: "layer fan-in",
                    expected: prev,
                    actual: w.nrows(),
                });
            }
            if b.dim() != (1, w.ncols()) {
                return Err(Error::Dimension {
                    context: "bias width",
                    expected: w.ncols(),
                    actual: b.len(),
                });
            }
            dims.push(w.ncols());
        }
        Ok(Self {
            layer_dims: dims,
            hidden,
            output,
            weights,
            biases,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array2<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.biases
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Number of parameter blocks (`2 × layers`: W0, b0, W1, b1, ...).
    pub fn num_blocks(&self) -> usize {
        2 * self.weights.len()
    }

    /// Parameter blocks in `W0, b0, W1, b1, ...` order.
    pub fn blocks(&self) -> Vec<Array2<f64>> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.clone(), b.clone()])
            .collect()
    }

    pub fn set_blocks(&mut self, blocks: &[Array2<f64>]) {
        assert_eq!(blocks.len(), self.num_blocks());
        for (l, pair) in blocks.chunks(2).enumerate() {
            self.weights[l].assign(&pair[0]);
            self.biases[l].assign(&pair[1]);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|m| m.iter().all(|x| x.is_finite()))
    }

    /// Single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "mlp input",
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Row-stacked batch; pure and safe to call concurrently.
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                context: "mlp batch input",
                expected: self.input_dim(),
                actual: input.ncols(),
            });
        }
        let last = self.weights.len() - 1;
        let mut h = input.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.dot(w) + b;
            let act = if l == last { self.output } else { self.hidden };
            if act != Activation::Identity {
                h.mapv_inplace(|x| act.apply(x));
            }
        }
        Ok(h)
    }

    /// Same computation recorded on a graph. `params` are this network's
    /// blocks in [`Mlp::blocks`] order.
    pub fn forward_graph(&self, g: &mut Graph, params: &[Var], input: Var) -> Var {
        debug_assert_eq!(params.len(), self.num_blocks());
        let last = self.weights.len() - 1;
        let mut h = input;
        for (l, pair) in params.chunks(2).enumerate() {
            let z = g.matmul(h, pair[0]);
            let z = g.add_row(z, pair[1]);
            let act = if l == last { self.output } else { self.hidden };
            h = act.on_graph(g, z);
        }
        h
    }

    /// Pre-activation of the output layer (logits for a sigmoid head).
    pub fn forward_graph_logits(&self, g: &mut Graph, params: &[Var], input: Var) -> Var {
        let last = self.weights.len() - 1;
        let mut h = input;
        for (l, pair) in params.chunks(2).enumerate() {
            let z = g.matmul(h, pair[0]);
            let z = g.add_row(z, pair[1]);
            h = if l == last {
                z
            } else {
                self.hidden.on_graph(g, z)
            };
        }
        h
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            layer_dims: self.layer_dims.clone(),
            activations: vec![self.hidden, self.output],
            weights: self
                .weights
                .iter()
                .map(|w| w.iter().copied().collect())
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().copied().collect())
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &MlpCheckpoint) -> Result<Self> {
        let dims = &ckpt.layer_dims;
        if dims.len() < 2
            || ckpt.weights.len() != dims.len() - 1
            || ckpt.biases.len() != dims.len() - 1
        {
            return Err(Error::Config(
                "checkpoint layer count is inconsistent".into(),
            ));
        }
        let (hidden, output) = match ckpt.activations.as_slice() {
            [h, o] => (*h, *o),
            other => {
                return Err(Error::Config(format!(
                    "checkpoint needs [hidden, output] activations, got {other:?}"
                )))
            }
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in dims.windows(2).enumerate() {
            let w = Array2::from_shape_vec((pair[0], pair[1]), ckpt.weights[l].clone())
                .map_err(|e| Error::Config(format!("layer {l} weights: {e}")))?;
            let b = Array2::from_shape_vec((1, pair[1]), ckpt.biases[l].clone())
                .map_err(|e| Error::Config(format!("layer {l} biases: {e}")))?;
            weights.push(w);
            biases.push(b);
        }
        Self::from_parts(weights, biases, hidden, output)
    }
}

/// On-disk form: `{"layer_dims", "activations", "weights", "biases"}` with
/// row-major weight matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Convenience: a batch from rows of equal length.
pub fn rows_to_array(rows: &[Vec<f64>], width: usize) -> Array2<f64> {
    let mut flat = Vec::with_capacity(rows.len() * width);
    for r in rows {
        debug_assert_eq!(r.len(), width);
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), width), flat).expect("rows have equal width")
}

pub fn column(values: &[f64]) -> Array2<f64> {
    Array1::from(values.to_vec()).insert_axis(ndarray::Axis(1))
}
