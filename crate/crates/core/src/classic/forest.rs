//! Random decision forest: bootstrap-aggregated CART trees with Gini splits.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::weights::{compute_balanced_weights, ClassWeights};
use crate::classifier::{Classifier, Prediction};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{CloudClass5, RadianceVector, N_BANDS};
use crate::seed::rng_for;

const K: usize = CloudClass5::COUNT;
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Bands considered at each split.
    pub max_features: usize,
    pub bootstrap: bool,
    /// Balanced class weights when true, unit weights otherwise.
    pub balanced: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 32, max_depth: 14, max_features: 3, bootstrap: true, balanced: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split { band: usize, threshold: f64, left: u32, right: u32 },
    /// Normalized class-weighted histogram of the training samples reaching the leaf.
    Leaf { probs: [f64; K] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_probs(&self, x: &[f64; N_BANDS]) -> &[f64; K] {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { probs } => return probs,
                Node::Split { band, threshold, left, right } => {
                    i = if x[*band] <= *threshold { *left } else { *right } as usize;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub class_weights: ClassWeights,
    pub trees: Vec<Tree>,
}

#[derive(Clone, Copy)]
struct Sample {
    idx: u32,
    class: u8,
    weight: f64,
}

struct Split {
    band: usize,
    threshold: f64,
    gain: f64,
}

fn histogram(samples: &[Sample]) -> [f64; K] {
    let mut h = [0.0; K];
    samples.iter().for_each(|s| h[s.class as usize] += s.weight);
    h
}

/// Σ_c W_c² / W, the quantity whose weighted increase equals the Gini gain.
fn purity(h: &[f64; K]) -> f64 {
    let total: f64 = h.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    h.iter().map(|w| w * w).sum::<f64>() / total
}

pub fn gini(h: &[f64; K]) -> f64 {
    let total: f64 = h.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - h.iter().map(|w| (w / total).powi(2)).sum::<f64>()
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

fn best_split_on_band(
    data: &Dataset,
    samples: &[Sample],
    band: usize,
    parent: &[f64; K],
    buf: &mut Vec<(f64, u8, f64)>,
) -> Option<Split> {
    buf.clear();
    buf.extend(samples.iter().map(|s| (data.x[s.idx as usize][band], s.class, s.weight)));
    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = parent.iter().sum();
    let base = purity(parent);
    let mut left = [0.0; K];
    let mut best: Option<Split> = None;
    for i in 0..buf.len() - 1 {
        let (v, c, w) = buf[i];
        left[c as usize] += w;
        let next = buf[i + 1].0;
        if next <= v {
            continue;
        }
        let mut right = [0.0; K];
        for c in 0..K {
            right[c] = parent[c] - left[c];
        }
        let gain = (purity(&left) + purity(&right) - base) / total;
        if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
            best = Some(Split { band, threshold: midpoint(v, next), gain });
        }
    }
    best
}

fn build_tree(data: &Dataset, mut samples: Vec<Sample>, params: &ForestParams, rng: &mut crate::seed::Rng) -> Tree {
    let mut nodes = Vec::new();
    let mut buf = Vec::with_capacity(samples.len());
    // (range start, range end, depth, node slot)
    let mut stack = vec![(0usize, samples.len(), 0usize, 0usize)];
    nodes.push(Node::Leaf { probs: [0.0; K] });
    let n_features = params.max_features.clamp(1, N_BANDS);
    while let Some((lo, hi, depth, slot)) = stack.pop() {
        let node_samples = &mut samples[lo..hi];
        let hist = histogram(node_samples);
        let total: f64 = hist.iter().sum();
        let pure = hist.iter().filter(|&&w| w > 0.0).count() <= 1;
        let mut split = None;
        if depth < params.max_depth && hi - lo >= 2 && !pure {
            let mut bands = sample(rng, N_BANDS, n_features).into_vec();
            bands.sort_unstable();
            for band in bands {
                if let Some(s) = best_split_on_band(data, node_samples, band, &hist, &mut buf) {
                    if split.as_ref().is_none_or(|b: &Split| s.gain > b.gain) {
                        split = Some(s);
                    }
                }
            }
        }
        match split {
            None => {
                let probs = if total > 0.0 { hist.map(|w| w / total) } else { [1.0 / K as f64; K] };
                nodes[slot] = Node::Leaf { probs };
            }
            Some(s) => {
                let mut mid = 0;
                for i in 0..node_samples.len() {
                    if data.x[node_samples[i].idx as usize][s.band] <= s.threshold {
                        node_samples.swap(i, mid);
                        mid += 1;
                    }
                }
                let left = nodes.len();
                nodes.push(Node::Leaf { probs: [0.0; K] });
                nodes.push(Node::Leaf { probs: [0.0; K] });
                nodes[slot] = Node::Split { band: s.band, threshold: s.threshold, left: left as u32, right: left as u32 + 1 };
                stack.push((lo + mid, hi, depth + 1, left + 1));
                stack.push((lo, lo + mid, depth + 1, left));
            }
        }
    }
    Tree { nodes }
}

fn tree_samples(data: &Dataset, weights: &ClassWeights, bootstrap: bool, rng: &mut crate::seed::Rng) -> Vec<Sample> {
    let n = data.len();
    let mut multiplicity = vec![0u32; n];
    if bootstrap {
        for _ in 0..n {
            multiplicity[rng.random_range(0..n)] += 1;
        }
    } else {
        multiplicity.iter_mut().for_each(|m| *m = 1);
    }
    multiplicity
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0)
        .map(|(i, &m)| Sample { idx: i as u32, class: data.y[i].index() as u8, weight: m as f64 * weights.get(data.y[i]) })
        .collect()
}

pub fn train_rdf(data: &Dataset, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no training pixels".into()));
    }
    if params.n_trees == 0 {
        return Err(Error::Config("n_trees must be positive".into()));
    }
    if data.classes_present() < 2 {
        return Err(Error::DegenerateModel("training data has fewer than 2 classes".into()));
    }
    let class_weights =
        if params.balanced { compute_balanced_weights(&data.y) } else { ClassWeights::uniform(&data.y) };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, &[t as u64]);
            let samples = tree_samples(data, &class_weights, params.bootstrap, &mut rng);
            build_tree(data, samples, params, &mut rng)
        })
        .collect();
    Ok(ForestModel { params: *params, class_weights, trees })
}

/// Ensemble probability is the mean of per-tree leaf distributions.
pub fn predict_rdf(model: &ForestModel, x: &RadianceVector) -> Prediction {
    let mut probs = [0.0; K];
    for tree in &model.trees {
        let p = tree.leaf_probs(&x.0);
        for c in 0..K {
            probs[c] += p[c];
        }
    }
    let n = model.trees.len().max(1) as f64;
    Prediction::from_scores(probs.map(|p| p / n))
}

impl Classifier for ForestModel {
    fn predict(&self, x: &RadianceVector) -> Prediction {
        predict_rdf(self, x)
    }
}
