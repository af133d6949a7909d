//! Feed-forward and single-pixel 1-D convolutional networks trained with Adam
//! on mean cross-entropy.

pub mod adam;
pub mod layers;
pub mod tensor;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::AdamState;
pub use layers::{Activation, Layer};
pub use tensor::Tensor;

use crate::classic::weights::{compute_balanced_weights, ClassWeights};
use crate::classifier::{Classifier, Prediction};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{CloudClass5, RadianceVector, N_BANDS};
use crate::seed::{rng, rng_for, Rng};

const K: usize = CloudClass5::COUNT;
pub const CONV_FILTERS: [usize; 3] = [6, 12, 24];
pub const CONV_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub dropout: f64,
    /// Activation of the dense hidden layers; convolutions always use relu.
    pub activation: Activation,
    /// Inverse-frequency weighting of the cross-entropy.
    pub class_weighting: bool,
    /// Standardize inputs per band before the first layer (kelvins are fed raw otherwise).
    pub standardize_inputs: bool,
}

impl Default for NnParams {
    fn default() -> Self {
        NnParams {
            epochs: 10,
            batch_size: 256,
            lr: 1e-3,
            hidden: 32,
            dropout: 0.1,
            activation: Activation::Relu,
            class_weighting: false,
            standardize_inputs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: [f64; N_BANDS],
    pub sd: [f64; N_BANDS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnModel {
    pub architecture: Architecture,
    pub params: NnParams,
    pub seed: u64,
    pub input_scaling: Option<InputScaling>,
    pub network: Network,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn dense_head(layers: &mut Vec<Layer>, inputs: usize, p: &NnParams) {
    layers.push(Layer::dense(inputs, p.hidden));
    layers.push(Layer::Activation { function: p.activation });
    layers.push(Layer::Dropout { rate: p.dropout });
    layers.push(Layer::dense(p.hidden, p.hidden));
    layers.push(Layer::Activation { function: p.activation });
    layers.push(Layer::Dropout { rate: p.dropout });
    layers.push(Layer::dense(p.hidden, K));
}

impl Network {
    /// 8 → hidden → hidden → 5 with zero parameters.
    pub fn mlp(p: &NnParams) -> Self {
        let mut layers = Vec::new();
        dense_head(&mut layers, N_BANDS, p);
        Network { layers }
    }

    /// Three valid convolutions over the band axis (8 → 6 → 4 → 2) then the dense head.
    pub fn cnn(p: &NnParams) -> Self {
        let mut layers = Vec::new();
        let (mut channels, mut length) = (1, N_BANDS);
        for filters in CONV_FILTERS {
            layers.push(Layer::conv1d(channels, filters, CONV_KERNEL, length));
            layers.push(Layer::Activation { function: Activation::Relu });
            channels = filters;
            length = length + 1 - CONV_KERNEL;
        }
        dense_head(&mut layers, channels * length, p);
        Network { layers }
    }

    pub fn build(arch: Architecture, p: &NnParams) -> Self {
        match arch {
            Architecture::Mlp => Network::mlp(p),
            Architecture::Cnn => Network::cnn(p),
        }
    }

    /// `(length, channels)` after the last convolution, if any.
    pub fn conv_output_shape(&self) -> Option<(usize, usize)> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Conv1d { weight, length, .. } => Some((length + 1 - weight.shape[2], weight.shape[0])),
            _ => None,
        })
    }

    pub fn init_he_uniform(&mut self, rng: &mut Rng) {
        self.layers.iter_mut().for_each(|l| l.init_he_uniform(rng));
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().filter_map(Layer::params).map(|(w, b)| w.len() + b.len()).sum()
    }

    fn param_sizes(&self) -> Vec<usize> {
        self.layers.iter().filter_map(Layer::params).flat_map(|(w, b)| [w.len(), b.len()]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().filter_map(Layer::params).all(|(w, b)| w.is_finite() && b.is_finite())
    }

    pub fn workspace(&self) -> Workspace {
        let n = self.layers.len();
        Workspace {
            acts: vec![Vec::new(); n + 1],
            masks: vec![Vec::new(); n],
            grads: self
                .layers
                .iter()
                .map(|l| l.params().map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()])))
                .collect(),
            dy: Vec::new(),
            dx: Vec::new(),
        }
    }

    /// Runs the layers; logits end up in `ws.acts[n]`.
    pub fn forward_logits<'a>(&self, x: &[f64], ws: &'a mut Workspace, mut rng: Option<&mut Rng>) -> &'a [f64] {
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(i + 1);
            layer.forward(&head[i], &mut tail[0], &mut ws.masks[i], rng.as_deref_mut());
        }
        &ws.acts[self.layers.len()]
    }

    /// Backpropagates `dlogits` through the activations cached in `ws`, accumulating into `ws.grads`.
    pub fn backward(&self, dlogits: &[f64], ws: &mut Workspace) {
        ws.dy.clear();
        ws.dy.extend_from_slice(dlogits);
        for i in (0..self.layers.len()).rev() {
            let grads = ws.grads[i].as_mut().map(|(w, b)| (w.as_mut_slice(), b.as_mut_slice()));
            self.layers[i].backward(&ws.acts[i], &ws.acts[i + 1], &ws.masks[i], &ws.dy, &mut ws.dx, grads);
            std::mem::swap(&mut ws.dy, &mut ws.dx);
        }
    }
}

/// Reusable activation, mask, and gradient buffers.
#[derive(Debug, Clone)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    grads: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    dy: Vec<f64>,
    dx: Vec<f64>,
}

impl Workspace {
    pub fn zero_grads(&mut self) {
        for (w, b) in self.grads.iter_mut().flatten() {
            w.iter_mut().for_each(|v| *v = 0.0);
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Accumulated gradients, one (weight, bias) pair per parametrized layer.
    pub fn grads(&self) -> Vec<(&[f64], &[f64])> {
        self.grads.iter().flatten().map(|(w, b)| (w.as_slice(), b.as_slice())).collect()
    }
}

pub fn softmax(logits: &[f64]) -> Result<[f64; K]> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NumericOverflow(format!("non-finite logits {logits:?}")));
    }
    let mut p = [0.0; K];
    let mut total = 0.0;
    for (pi, l) in p.iter_mut().zip(logits) {
        *pi = (l - max).exp();
        total += *pi;
    }
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

fn log_softmax_at(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[class] - lse
}

impl NnModel {
    fn scale(&self, x: &RadianceVector) -> [f64; N_BANDS] {
        match &self.input_scaling {
            Some(s) => std::array::from_fn(|b| (x.0[b] - s.mean[b]) / s.sd[b]),
            None => x.0,
        }
    }
}

/// Class probabilities; train mode applies dropout masks drawn from `seed`.
pub fn forward_nn(model: &NnModel, x: &RadianceVector, mode: Mode, seed: u64) -> Result<[f64; K]> {
    let mut ws = model.network.workspace();
    let input = model.scale(x);
    let logits = match mode {
        Mode::Eval => model.network.forward_logits(&input, &mut ws, None),
        Mode::Train => model.network.forward_logits(&input, &mut ws, Some(&mut rng(seed))),
    };
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow("non-finite activations".into()));
    }
    softmax(logits)
}

pub fn forward_mlp(model: &NnModel, x: &RadianceVector, mode: Mode, seed: u64) -> Result<[f64; K]> {
    debug_assert_eq!(model.architecture, Architecture::Mlp);
    forward_nn(model, x, mode, seed)
}

pub fn forward_cnn(model: &NnModel, x: &RadianceVector, mode: Mode, seed: u64) -> Result<[f64; K]> {
    debug_assert_eq!(model.architecture, Architecture::Cnn);
    forward_nn(model, x, mode, seed)
}

/// Eval-mode argmax; a model producing non-finite activations predicts
/// ConvectionCore with NaN scores.
pub fn predict_nn(model: &NnModel, x: &RadianceVector) -> Prediction {
    match forward_nn(model, x, Mode::Eval, 0) {
        Ok(p) => Prediction::from_scores(p),
        Err(_) => Prediction { class: CloudClass5::ConvectionCore, scores: [f64::NAN; K] },
    }
}

impl Classifier for NnModel {
    fn predict(&self, x: &RadianceVector) -> Prediction {
        predict_nn(self, x)
    }
}

/// Mean weighted cross-entropy of a batch in eval mode (no dropout); gradients
/// accumulate in `ws`.
pub fn batch_loss_and_grad<X: AsRef<[f64]>>(
    network: &Network,
    xs: &[X],
    ys: &[CloudClass5],
    weights: &[f64],
    ws: &mut Workspace,
    mut rng: Option<&mut Rng>,
) -> f64 {
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = [0.0; K];
    for ((x, y), w) in xs.iter().zip(ys).zip(weights) {
        let logits = network.forward_logits(x.as_ref(), ws, rng.as_deref_mut());
        let c = y.index();
        loss -= w * log_softmax_at(logits, c);
        let p = softmax(logits).unwrap_or([f64::NAN; K]);
        for k in 0..K {
            dlogits[k] = w * (p[k] - if k == c { 1.0 } else { 0.0 }) / n;
        }
        network.backward(&dlogits, ws);
    }
    loss / n
}

fn param_at(net: &mut Network, layer: usize, part: usize, i: usize) -> &mut f64 {
    let (w, b) = net.layers[layer].params_mut().expect("parametrized layer");
    if part == 0 {
        &mut w.values[i]
    } else {
        &mut b.values[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Largest `|a − n| / max(|a|, |n|, 1e-6)` over compared parameters.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose ±h probe flips a relu input sign somewhere in the batch;
    /// the loss is not differentiable across that step, so they are not compared.
    pub skipped_at_kinks: usize,
}

fn relu_pattern<X: AsRef<[f64]>>(network: &Network, xs: &[X], ws: &mut Workspace) -> Vec<bool> {
    let mut pattern = Vec::new();
    for x in xs {
        network.forward_logits(x.as_ref(), ws, None);
        for (i, layer) in network.layers.iter().enumerate() {
            if matches!(layer, Layer::Activation { function: Activation::Relu }) {
                pattern.extend(ws.acts[i].iter().map(|&v| v > 0.0));
            }
        }
    }
    pattern
}

/// Compares analytic gradients of the eval-mode batch loss with central
/// differences for every parameter.
pub fn gradient_check<X: AsRef<[f64]>>(network: &Network, xs: &[X], ys: &[CloudClass5], h: f64) -> GradientCheck {
    let weights = vec![1.0; xs.len()];
    let mut ws = network.workspace();
    ws.zero_grads();
    batch_loss_and_grad(network, xs, ys, &weights, &mut ws, None);
    let analytic: Vec<Vec<f64>> = ws.grads().into_iter().flat_map(|(w, b)| [w.to_vec(), b.to_vec()]).collect();
    let mut scratch = network.workspace();
    let base_pattern = relu_pattern(network, xs, &mut scratch);
    let mut probe = network.clone();
    let mut result = GradientCheck { max_rel_error: 0.0, checked: 0, skipped_at_kinks: 0 };
    let mut slot = 0;
    for li in 0..probe.layers.len() {
        let Some((w, b)) = probe.layers[li].params() else { continue };
        let lens = [w.len(), b.len()];
        for (part, len) in lens.into_iter().enumerate() {
            for i in 0..len {
                let orig = *param_at(&mut probe, li, part, i);
                let mut eval = |value: f64, probe: &mut Network| {
                    *param_at(probe, li, part, i) = value;
                    let smooth = relu_pattern(probe, xs, &mut scratch) == base_pattern;
                    (batch_loss_and_grad(probe, xs, ys, &weights, &mut scratch, None), smooth)
                };
                let (up, smooth_up) = eval(orig + h, &mut probe);
                let (down, smooth_down) = eval(orig - h, &mut probe);
                *param_at(&mut probe, li, part, i) = orig;
                if !(smooth_up && smooth_down) {
                    result.skipped_at_kinks += 1;
                    continue;
                }
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[slot][i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                result.max_rel_error = result.max_rel_error.max(rel);
                result.checked += 1;
            }
            slot += 1;
        }
    }
    result
}

/// He-uniform initialization, epoch-shuffled mini-batches, Adam updates.
pub fn train_nn(arch: Architecture, data: &Dataset, params: &NnParams, seed: u64) -> Result<NnModel> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no training pixels".into()));
    }
    if params.epochs == 0 || params.batch_size == 0 || !(params.lr > 0.0) || !(0.0..1.0).contains(&params.dropout) {
        return Err(Error::Config("nn needs epochs > 0, batch_size > 0, lr > 0 and dropout in [0, 1)".into()));
    }
    let mut network = Network::build(arch, params);
    network.init_he_uniform(&mut rng_for(seed, &[0]));
    let input_scaling = params.standardize_inputs.then(|| {
        let (mean, sd) = data.band_moments();
        InputScaling { mean, sd }
    });
    let mut model =
        NnModel { architecture: arch, params: *params, seed, input_scaling, network, loss_curve: Vec::new() };
    let xs: Vec<Vec<f64>> = data.x.iter().map(|x| model.scale(&RadianceVector(*x)).to_vec()).collect();
    let class_weights =
        if params.class_weighting { compute_balanced_weights(&data.y) } else { ClassWeights::uniform(&data.y) };
    let sample_weights: Vec<f64> = data.y.iter().map(|c| class_weights.get(*c)).collect();

    let mut adam = AdamState::new(params.lr, &model.network.param_sizes());
    let mut ws = model.network.workspace();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let (mut bx, mut by, mut bw): (Vec<&[f64]>, _, _) = (Vec::new(), Vec::new(), Vec::new());
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng_for(seed, &[1, epoch as u64]));
        let mut dropout_rng = rng_for(seed, &[2, epoch as u64]);
        let mut total = 0.0;
        for batch in order.chunks(params.batch_size) {
            bx.clear();
            by.clear();
            bw.clear();
            for &i in batch {
                bx.push(&xs[i]);
                by.push(data.y[i]);
                bw.push(sample_weights[i]);
            }
            ws.zero_grads();
            let loss = batch_loss_and_grad(&model.network, &bx, &by, &bw, &mut ws, Some(&mut dropout_rng));
            total += loss * batch.len() as f64;
            adam.begin_step();
            let mut slot = 0;
            for (layer, grads) in model.network.layers.iter_mut().zip(ws.grads.iter()) {
                if let (Some((w, b)), Some((gw, gb))) = (layer.params_mut(), grads) {
                    adam.update(slot, &mut w.values, gw);
                    adam.update(slot + 1, &mut b.values, gb);
                    slot += 2;
                }
            }
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || !model.network.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1, loss: mean });
        }
        model.loss_curve.push(mean);
    }
    Ok(model)
}
