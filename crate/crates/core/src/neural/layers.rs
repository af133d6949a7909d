//! Layers with explicit forward and backward passes over a single sample.
//!
//! Activations are flat vectors; convolution activations are channel-major
//! `(channels, length)`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            // NaN passes through so overflow stays visible downstream.
            Activation::Relu => {
                if x < 0.0 {
                    0.0
                } else {
                    x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the layer input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    /// `weight` has shape `[outputs, inputs]`.
    Dense { weight: Tensor, bias: Tensor },
    /// Valid cross-correlation; `weight` has shape `[filters, in_channels, kernel]`, input length is `length`.
    Conv1d { weight: Tensor, bias: Tensor, length: usize },
    Activation { function: Activation },
    /// Inverted dropout; identity outside training.
    Dropout { rate: f64 },
}

impl Layer {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Layer::Dense { weight: Tensor::zeros(&[outputs, inputs]), bias: Tensor::zeros(&[outputs]) }
    }

    pub fn conv1d(in_channels: usize, filters: usize, kernel: usize, length: usize) -> Self {
        assert!(kernel <= length, "kernel longer than input");
        Layer::Conv1d {
            weight: Tensor::zeros(&[filters, in_channels, kernel]),
            bias: Tensor::zeros(&[filters]),
            length,
        }
    }

    pub fn input_len(&self, previous: usize) -> usize {
        match self {
            Layer::Dense { weight, .. } => weight.shape[1],
            Layer::Conv1d { weight, length, .. } => weight.shape[1] * length,
            _ => previous,
        }
    }

    pub fn output_len(&self, input: usize) -> usize {
        match self {
            Layer::Dense { weight, .. } => weight.shape[0],
            Layer::Conv1d { weight, length, .. } => weight.shape[0] * (length + 1 - weight.shape[2]),
            _ => input,
        }
    }

    /// Trainable buffers as (weight, bias), if any.
    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv1d { weight, bias, .. } => Some((weight, bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv1d { weight, bias, .. } => Some((weight, bias)),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match self {
            Layer::Dense { weight, .. } => weight.shape[1],
            Layer::Conv1d { weight, .. } => weight.shape[1] * weight.shape[2],
            _ => 0,
        }
    }

    /// He-uniform weights `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn init_he_uniform(&mut self, rng: &mut Rng) {
        let limit = (6.0 / self.fan_in().max(1) as f64).sqrt();
        if let Some((w, b)) = self.params_mut() {
            w.values.iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
            b.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `mask` is filled for dropout layers when `rng` is given (training mode).
    pub fn forward(&self, x: &[f64], out: &mut Vec<f64>, mask: &mut Vec<f64>, rng: Option<&mut Rng>) {
        out.clear();
        match self {
            Layer::Dense { weight, bias } => {
                let n_in = weight.shape[1];
                for (o, row) in weight.values.chunks_exact(n_in).enumerate() {
                    out.push(bias.values[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
                }
            }
            Layer::Conv1d { weight, bias, length } => {
                let (filters, channels, k) = (weight.shape[0], weight.shape[1], weight.shape[2]);
                let out_len = length + 1 - k;
                for f in 0..filters {
                    for t in 0..out_len {
                        let mut s = bias.values[f];
                        for c in 0..channels {
                            let w = &weight.values[(f * channels + c) * k..][..k];
                            let xs = &x[c * length + t..][..k];
                            s += w.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                        }
                        out.push(s);
                    }
                }
            }
            Layer::Activation { function } => out.extend(x.iter().map(|&v| function.apply(v))),
            Layer::Dropout { rate } => match rng {
                Some(rng) if *rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    mask.clear();
                    mask.extend(x.iter().map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep }));
                    out.extend(x.iter().zip(mask.iter()).map(|(v, m)| v * m));
                }
                _ => {
                    mask.clear();
                    out.extend_from_slice(x);
                }
            },
        }
    }

    /// Accumulates parameter gradients into `grads` (weight, bias) and writes the input gradient to `dx`.
    pub fn backward(
        &self,
        x: &[f64],
        y: &[f64],
        mask: &[f64],
        dy: &[f64],
        dx: &mut Vec<f64>,
        grads: Option<(&mut [f64], &mut [f64])>,
    ) {
        dx.clear();
        match self {
            Layer::Dense { weight, .. } => {
                let n_in = weight.shape[1];
                dx.resize(n_in, 0.0);
                let (gw, gb) = grads.expect("dense layer has parameters");
                for (o, row) in weight.values.chunks_exact(n_in).enumerate() {
                    let g = dy[o];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    let gw_row = &mut gw[o * n_in..][..n_in];
                    for i in 0..n_in {
                        gw_row[i] += g * x[i];
                        dx[i] += row[i] * g;
                    }
                }
            }
            Layer::Conv1d { weight, length, .. } => {
                let (filters, channels, k) = (weight.shape[0], weight.shape[1], weight.shape[2]);
                let out_len = length + 1 - k;
                dx.resize(channels * length, 0.0);
                let (gw, gb) = grads.expect("conv layer has parameters");
                for f in 0..filters {
                    for t in 0..out_len {
                        let g = dy[f * out_len + t];
                        if g == 0.0 {
                            continue;
                        }
                        gb[f] += g;
                        for c in 0..channels {
                            let base = (f * channels + c) * k;
                            for j in 0..k {
                                gw[base + j] += g * x[c * length + t + j];
                                dx[c * length + t + j] += weight.values[base + j] * g;
                            }
                        }
                    }
                }
            }
            Layer::Activation { function } => {
                dx.extend(x.iter().zip(y).zip(dy).map(|((&xi, &yi), &g)| g * function.derivative(xi, yi)));
            }
            Layer::Dropout { .. } => {
                if mask.is_empty() {
                    dx.extend_from_slice(dy);
                } else {
                    dx.extend(dy.iter().zip(mask).map(|(g, m)| g * m));
                }
            }
        }
    }
}
