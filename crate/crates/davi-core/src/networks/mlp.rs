//! Plain feed-forward network with an explicit forward/backward contract.
//!
//! Parameters live in one flat buffer (per layer: row-major weights, then
//! biases) so the optimizer and checkpoints treat every network uniformly.
//! `forward` records the activations needed by `backward`, which computes
//! exact reverse-mode derivatives for a caller-supplied upstream gradient.
//! Activations are smooth on purpose: finite-difference checks stay clean.

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Silu,
    Softplus,
}

impl Activation {
    fn value(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

/// Activations recorded by a forward pass; required input to `backward`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// a[l] is the input of layer l (a[0] is the network input).
    activations: Vec<Vec<f64>>,
    /// z[l] is the pre-activation output of layer l.
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.pre_activations
            .last()
            .expect("trace has at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths, input first: [in, hidden..., out].
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

impl Mlp {
    /// Random hidden layers (scaled by fan-in), zero output layer. The zero
    /// last layer makes residual wrappers exact identities at initialization.
    pub fn zero_output_init(dims: Vec<usize>, activation: Activation, seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert!(dims.iter().all(|d| *d > 0), "zero-width layer");
        let mut rng = SeededRng::new(seed);
        let n_layers = dims.len() - 1;
        let mut params = Vec::with_capacity(Self::param_count(&dims));
        for l in 0..n_layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let last = l == n_layers - 1;
            let scale = (1.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(if last {
                    0.0
                } else {
                    scale * rng.standard_normal()
                });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Mlp {
            dims,
            activation,
            params,
        }
    }

    fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of layer l's weight block in the flat buffer.
    fn layer_offset(&self, layer: usize) -> usize {
        self.dims
            .windows(2)
            .take(layer)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> ForwardTrace {
        assert_eq!(x.len(), self.input_dim(), "input width mismatch");
        let n_layers = self.dims.len() - 1;
        let mut activations = Vec::with_capacity(n_layers);
        let mut pre_activations = Vec::with_capacity(n_layers);
        let mut a = x.to_vec();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut z = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                z.push(b[o] + row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>());
            }
            activations.push(std::mem::take(&mut a));
            a = if l + 1 < n_layers {
                z.iter().map(|v| self.activation.value(*v)).collect()
            } else {
                z.clone()
            };
            pre_activations.push(z);
        }
        ForwardTrace {
            activations,
            pre_activations,
        }
    }

    pub fn forward_value(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).output().to_vec()
    }

    /// Reverse-mode pass. `upstream` is dL/d(output); returns
    /// (dL/d(params), dL/d(input)).
    pub fn backward(&self, trace: &ForwardTrace, upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(upstream.len(), self.output_dim(), "upstream width mismatch");
        let n_layers = self.dims.len() - 1;
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.layer_offset(l);
            let a_in = &trace.activations[l];
            // weight and bias gradients
            for o in 0..fan_out {
                let g = delta[o];
                let row = &mut grads[off + o * fan_in..off + (o + 1) * fan_in];
                for (slot, ai) in row.iter_mut().zip(a_in) {
                    *slot += g * ai;
                }
                grads[off + fan_in * fan_out + o] += g;
            }
            // propagate to the layer input
            let w = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let g = delta[o];
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += wi * g;
                }
            }
            if l > 0 {
                let z_prev = &trace.pre_activations[l - 1];
                for (p, z) in prev.iter_mut().zip(z_prev) {
                    *p *= self.activation.derivative(*z);
                }
            }
            delta = prev;
        }
        (grads, delta)
    }
}
