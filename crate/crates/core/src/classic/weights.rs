use serde::{Deserialize, Serialize};

use crate::model::CloudClass5;

/// Per-class sample weights; `None` for classes absent from training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [Option<f64>; CloudClass5::COUNT]);

impl ClassWeights {
    pub fn get(&self, class: CloudClass5) -> f64 {
        self.0[class.index()].unwrap_or(0.0)
    }

    /// Weight 1 for every present class.
    pub fn uniform(labels: &[CloudClass5]) -> Self {
        let mut w = [None; CloudClass5::COUNT];
        labels.iter().for_each(|c| w[c.index()] = Some(1.0));
        ClassWeights(w)
    }
}

/// w_c = N / (K · N_c) over the K classes present.
pub fn compute_balanced_weights(labels: &[CloudClass5]) -> ClassWeights {
    let mut counts = [0usize; CloudClass5::COUNT];
    labels.iter().for_each(|c| counts[c.index()] += 1);
    let k = counts.iter().filter(|&&c| c > 0).count() as f64;
    let n = labels.len() as f64;
    ClassWeights(counts.map(|c| (c > 0).then(|| n / (k * c as f64))))
}
