//! Multilayer perceptrons with hand-written backpropagation.
//!
//! Hidden layers use a leaky rectifier (slope 0.01). A net is either a
//! plain head (identity output) or a variance head, whose raw output is
//! a log-variance clamped to [-10, 10] and exponentiated, so variance
//! nets always produce values in [e^-10, e^10].

use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;
use crate::numerics::rng::RngStream;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputHead {
    Identity,
    /// exp(clamp(raw, -10, 10)): strictly positive variances.
    Variance,
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Matrix, // out × in
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    head: OutputHead,
}

/// Per-layer gradients, same shapes as the corresponding [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<DenseLayer>,
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_deriv(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

impl Mlp {
    /// Glorot-uniform weights (±sqrt(6/(fan_in+fan_out))), zero biases.
    pub fn new(sizes: &[usize], head: OutputHead, rng: &mut RngStream) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Dimension(
                "mlp needs at least input and output sizes".into(),
            ));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Dimension("zero-width mlp layer".into()));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for win in sizes.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut weight = Matrix::zeros(fan_out, fan_in);
            for v in weight.data_mut() {
                *v = rng.uniform(-bound, bound);
            }
            layers.push(DenseLayer {
                weight,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(Mlp { layers, head })
    }

    pub fn from_layers(layers: Vec<DenseLayer>, head: OutputHead) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("mlp needs at least one layer".into()));
        }
        for win in layers.windows(2) {
            if win[1].weight.cols() != win[0].weight.rows() {
                return Err(Error::Dimension("mlp layer shapes do not chain".into()));
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.weight.rows() {
                return Err(Error::Dimension("bias length != layer output".into()));
            }
        }
        Ok(Mlp { layers, head })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    /// Appends all parameters (per layer: weight row-major, then bias).
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
    }

    /// Reads parameters back in [`write_params`] order; returns count consumed.
    pub fn read_params(&mut self, src: &[f64]) -> Result<usize> {
        let need = self.param_count();
        if src.len() < need {
            return Err(Error::Dimension(format!(
                "mlp read_params: need {need}, got {}",
                src.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let w = layer.weight.data_mut();
            w.copy_from_slice(&src[offset..offset + w.len()]);
            offset += w.len();
            let blen = layer.bias.len();
            layer.bias.copy_from_slice(&src[offset..offset + blen]);
            offset += blen;
        }
        Ok(need)
    }

    /// Shifts the final layer's biases by a constant, e.g. to start a
    /// variance head at a chosen scale.
    pub fn offset_output_biases(&mut self, delta: f64) {
        for b in self.layers.last_mut().unwrap().bias.iter_mut() {
            *b += delta;
        }
    }

    /// Deterministic forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.0)
    }

    fn forward_cached(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "mlp forward: input length {} != {}",
                input.len(),
                self.input_dim()
            )));
        }
        let depth = self.layers.len();
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(depth);
        let mut pre_acts: Vec<Vec<f64>> = Vec::with_capacity(depth);
        let mut x = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut pre = layer.weight.matvec(&x)?;
            for (p, b) in pre.iter_mut().zip(layer.bias.iter()) {
                *p += b;
            }
            activations.push(x);
            let last = k + 1 == depth;
            x = if last {
                match self.head {
                    OutputHead::Identity => pre.clone(),
                    OutputHead::Variance => pre
                        .iter()
                        .map(|&v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX).exp())
                        .collect(),
                }
            } else {
                pre.iter().map(|&v| leaky(v)).collect()
            };
            pre_acts.push(pre);
        }
        Ok((
            x,
            ForwardCache {
                activations,
                pre_acts,
            },
        ))
    }

    /// Gradients of the scalar loss whose gradient at the output equals
    /// `upstream`; returns (parameter grads, input grad).
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Dimension(format!(
                "mlp backward: upstream length {} != {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let (output, cache) = self.forward_cached(input)?;
        let depth = self.layers.len();
        let mut grads = MlpGrads::zeros_like(self);

        // Head backward on the final pre-activation.
        let final_pre = &cache.pre_acts[depth - 1];
        let mut delta: Vec<f64> = match self.head {
            OutputHead::Identity => upstream.to_vec(),
            OutputHead::Variance => upstream
                .iter()
                .zip(final_pre.iter())
                .zip(output.iter())
                .map(|((&g, &pre), &out)| {
                    if pre > LOG_VAR_MIN && pre < LOG_VAR_MAX {
                        g * out
                    } else {
                        0.0
                    }
                })
                .collect(),
        };

        for k in (0..depth).rev() {
            let layer = &self.layers[k];
            let layer_input = &cache.activations[k];
            grads.layers[k]
                .weight
                .add_scaled_outer(1.0, &delta, layer_input);
            for (gb, d) in grads.layers[k].bias.iter_mut().zip(delta.iter()) {
                *gb += d;
            }
            let mut input_grad = layer.weight.matvec_t(&delta)?;
            if k > 0 {
                let pre_prev = &cache.pre_acts[k - 1];
                for (g, p) in input_grad.iter_mut().zip(pre_prev.iter()) {
                    *g *= leaky_deriv(*p);
                }
            }
            delta = input_grad;
        }
        Ok((grads, delta))
    }
}

struct ForwardCache {
    /// Input to each layer.
    activations: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre_acts: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data().iter()) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(b.bias.iter()) {
                *x += scale * y;
            }
        }
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
    }
}
