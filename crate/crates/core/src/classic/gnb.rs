//! Gaussian naive Bayes in log space.

use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, Prediction};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{CloudClass5, RadianceVector, N_BANDS};

const K: usize = CloudClass5::COUNT;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnbParams {
    /// Variance floor as a fraction of the largest per-band variance.
    pub var_floor_fraction: f64,
}

impl Default for GnbParams {
    fn default() -> Self {
        GnbParams { var_floor_fraction: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGaussian {
    pub prior: f64,
    pub means: [f64; N_BANDS],
    /// Population variances, floored at `var_floor`.
    pub variances: [f64; N_BANDS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnbModel {
    pub var_floor: f64,
    /// `None` for classes absent from training.
    pub classes: Vec<Option<ClassGaussian>>,
}

pub fn train_gnb(data: &Dataset, params: &GnbParams) -> Result<GnbModel> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no training pixels".into()));
    }
    let counts = data.class_counts();
    if counts.contains(&1) {
        return Err(Error::InsufficientData("every present class needs at least 2 samples".into()));
    }
    let max_var = max_band_variance(data).max(0.0);
    let var_floor = if max_var > 0.0 { params.var_floor_fraction * max_var } else { params.var_floor_fraction };
    let n = data.len() as f64;
    let mut sums = [[0.0; N_BANDS]; K];
    for (row, c) in data.x.iter().zip(&data.y) {
        for b in 0..N_BANDS {
            sums[c.index()][b] += row[b];
        }
    }
    let means: Vec<[f64; N_BANDS]> =
        (0..K).map(|c| sums[c].map(|s| if counts[c] > 0 { s / counts[c] as f64 } else { 0.0 })).collect();
    let mut sq = [[0.0; N_BANDS]; K];
    for (row, c) in data.x.iter().zip(&data.y) {
        for b in 0..N_BANDS {
            sq[c.index()][b] += (row[b] - means[c.index()][b]).powi(2);
        }
    }
    let classes = (0..K)
        .map(|c| {
            (counts[c] > 0).then(|| ClassGaussian {
                prior: counts[c] as f64 / n,
                means: means[c],
                variances: sq[c].map(|s| (s / counts[c] as f64).max(var_floor)),
            })
        })
        .collect();
    Ok(GnbModel { var_floor, classes })
}

fn max_band_variance(data: &Dataset) -> f64 {
    let n = data.len() as f64;
    (0..N_BANDS)
        .map(|b| {
            let mean = data.x.iter().map(|r| r[b]).sum::<f64>() / n;
            data.x.iter().map(|r| (r[b] - mean).powi(2)).sum::<f64>() / n
        })
        .fold(0.0, f64::max)
}

/// Unnormalized log joint `ln p(c) + Σ_b ln N(x_b; μ, σ²)`.
pub fn log_joint(class: &ClassGaussian, x: &[f64; N_BANDS]) -> f64 {
    let mut s = class.prior.ln();
    for b in 0..N_BANDS {
        let v = class.variances[b];
        s -= 0.5 * (LN_2PI + v.ln() + (x[b] - class.means[b]).powi(2) / v);
    }
    s
}

/// Scores are normalized log-posteriors; absent classes score −∞.
pub fn predict_gnb(model: &GnbModel, x: &RadianceVector) -> Prediction {
    let mut scores = [f64::NEG_INFINITY; K];
    for (c, g) in model.classes.iter().enumerate() {
        if let Some(g) = g {
            scores[c] = log_joint(g, &x.0);
        }
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Prediction::from_scores(scores.map(|s| s - lse))
}

impl Classifier for GnbModel {
    fn predict(&self, x: &RadianceVector) -> Prediction {
        predict_gnb(self, x)
    }
}
