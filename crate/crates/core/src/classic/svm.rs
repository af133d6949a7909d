//! One-vs-rest linear SVM trained by stochastic subgradient descent on the
//! class-weighted hinge objective.
//!
//! Each binary problem minimizes `reg/2 · |w|² + (1/N) Σ s_i · max(0, 1 − y_i w·x_i)`
//! over standardized features with an appended constant 1, so the bias is
//! regularized like any other coordinate.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::weights::{compute_balanced_weights, ClassWeights};
use crate::classifier::{Classifier, Prediction};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{CloudClass5, RadianceVector, N_BANDS};
use crate::seed::{rng_for, Rng};

const K: usize = CloudClass5::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub reg: f64,
    pub epochs: usize,
    pub restarts: usize,
    pub balanced: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { reg: 1.0, epochs: 5, restarts: 5, balanced: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub weights: [f64; N_BANDS],
    pub bias: f64,
    pub objective: f64,
    /// Objective of every restart, chosen one included.
    pub restart_objectives: Vec<f64>,
    /// Per-epoch objective of the chosen restart.
    pub epoch_objectives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub params: SvmParams,
    pub class_weights: ClassWeights,
    pub feature_means: [f64; N_BANDS],
    pub feature_sds: [f64; N_BANDS],
    /// `None` for classes absent from the training data.
    pub classes: Vec<Option<BinarySvm>>,
}

/// Result of one subgradient run on a dense binary problem.
#[derive(Debug, Clone)]
pub struct HingeSolution {
    /// Coefficients; the last entry multiplies the constant feature.
    pub w: Vec<f64>,
    pub objective: f64,
    pub epoch_objectives: Vec<f64>,
}

pub fn hinge_objective(w: &[f64], x: &[Vec<f64>], y: &[f64], s: &[f64], reg: f64) -> f64 {
    let n = x.len().max(1) as f64;
    let loss: f64 = x
        .iter()
        .zip(y)
        .zip(s)
        .map(|((xi, yi), si)| si * (1.0 - yi * dot(w, xi)).max(0.0))
        .sum();
    0.5 * reg * dot(w, w) + loss / n
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Step size 1/(reg·t); returns the better of the last iterate and the
/// average of the second half of iterates.
pub fn solve_hinge(x: &[Vec<f64>], y: &[f64], s: &[f64], reg: f64, epochs: usize, rng: &mut Rng) -> HingeSolution {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    let mut w = vec![0.0; d];
    let mut avg = vec![0.0; d];
    let mut averaged = 0usize;
    let total_steps = epochs * n;
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0usize;
    let mut epoch_objectives = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (reg * t as f64);
            let margin = y[i] * dot(&w, &x[i]);
            let shrink = 1.0 - eta * reg;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                let step = eta * s[i] * y[i];
                w.iter_mut().zip(&x[i]).for_each(|(v, xi)| *v += step * xi);
            }
            if 2 * t > total_steps {
                averaged += 1;
                let a = 1.0 / averaged as f64;
                avg.iter_mut().zip(&w).for_each(|(m, v)| *m += (v - *m) * a);
            }
        }
        epoch_objectives.push(hinge_objective(&w, x, y, s, reg));
    }
    let last = hinge_objective(&w, x, y, s, reg);
    let averaged_obj = hinge_objective(&avg, x, y, s, reg);
    if averaged > 0 && averaged_obj < last {
        HingeSolution { w: avg, objective: averaged_obj, epoch_objectives }
    } else {
        HingeSolution { w, objective: last, epoch_objectives }
    }
}

pub fn train_linear_svm(data: &Dataset, params: &SvmParams, seed: u64) -> Result<LinearSvmModel> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no training pixels".into()));
    }
    if !(params.reg > 0.0) || params.epochs == 0 || params.restarts == 0 {
        return Err(Error::Config("svm needs reg > 0, epochs > 0 and restarts > 0".into()));
    }
    if data.classes_present() < 2 {
        return Err(Error::DegenerateModel("training data has fewer than 2 classes".into()));
    }
    let class_weights =
        if params.balanced { compute_balanced_weights(&data.y) } else { ClassWeights::uniform(&data.y) };
    let (feature_means, feature_sds) = data.band_moments();
    let x: Vec<Vec<f64>> = data
        .x
        .iter()
        .map(|row| {
            let mut z: Vec<f64> = (0..N_BANDS).map(|b| (row[b] - feature_means[b]) / feature_sds[b]).collect();
            z.push(1.0);
            z
        })
        .collect();
    let s: Vec<f64> = data.y.iter().map(|c| class_weights.get(*c)).collect();
    let counts = data.class_counts();
    let classes = CloudClass5::ALL
        .iter()
        .map(|&class| {
            if counts[class.index()] == 0 {
                return None;
            }
            let y: Vec<f64> = data.y.iter().map(|c| if *c == class { 1.0 } else { -1.0 }).collect();
            let runs: Vec<HingeSolution> = (0..params.restarts)
                .map(|r| {
                    let mut rng = rng_for(seed, &[class.index() as u64, r as u64]);
                    solve_hinge(&x, &y, &s, params.reg, params.epochs, &mut rng)
                })
                .collect();
            let restart_objectives: Vec<f64> = runs.iter().map(|r| r.objective).collect();
            let best = runs
                .into_iter()
                .min_by(|a, b| a.objective.total_cmp(&b.objective))
                .expect("at least one restart");
            let mut weights = [0.0; N_BANDS];
            weights.copy_from_slice(&best.w[..N_BANDS]);
            Some(BinarySvm {
                weights,
                bias: best.w[N_BANDS],
                objective: best.objective,
                restart_objectives,
                epoch_objectives: best.epoch_objectives,
            })
        })
        .collect();
    Ok(LinearSvmModel { params: *params, class_weights, feature_means, feature_sds, classes })
}

/// Scores are one-vs-rest margins; absent classes score −∞.
pub fn predict_linear_svm(model: &LinearSvmModel, x: &RadianceVector) -> Prediction {
    let z: [f64; N_BANDS] = std::array::from_fn(|b| (x.0[b] - model.feature_means[b]) / model.feature_sds[b]);
    let mut scores = [f64::NEG_INFINITY; K];
    for (c, svm) in model.classes.iter().enumerate() {
        if let Some(svm) = svm {
            scores[c] = dot(&svm.weights, &z) + svm.bias;
        }
    }
    Prediction::from_scores(scores)
}

impl Classifier for LinearSvmModel {
    fn predict(&self, x: &RadianceVector) -> Prediction {
        predict_linear_svm(self, x)
    }
}
