//! K-means over standardized science variables and silhouette scoring.
//!
//! Science data is dominated by exact duplicates (every clear-sky pixel is
//! the zero vector), so points are deduplicated into weighted unique points
//! before clustering. Weighted Lloyd iterations on unique points produce the
//! same assignments and inertia as on the full multiset.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScienceVector;
use crate::seed;

pub const MAX_ITERATIONS: usize = 300;
pub const RESTARTS: usize = 10;
pub const DEFAULT_SAMPLE_CAP: usize = 10_000;

const DIM: usize = 3;
type Point = [f64; DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub feature_means: [f64; DIM],
    pub feature_sds: [f64; DIM],
    /// Centroids in standardized space.
    pub centroids: Vec<[f64; DIM]>,
    pub inertia: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ClusterModel {
    pub fn standardize(&self, p: &ScienceVector) -> Point {
        let a = p.to_array();
        std::array::from_fn(|d| (a[d] - self.feature_means[d]) / self.feature_sds[d])
    }

    pub fn destandardize(&self, z: &Point) -> ScienceVector {
        ScienceVector::from_array(std::array::from_fn(|d| z[d] * self.feature_sds[d] + self.feature_means[d]))
    }

    /// Centroids in raw science units.
    pub fn raw_centroids(&self) -> Vec<ScienceVector> {
        self.centroids.iter().map(|c| self.destandardize(c)).collect()
    }
}

/// Per-feature mean and population sd; zero-variance features get sd 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub means: [f64; DIM],
    pub sds: [f64; DIM],
}

impl Standardizer {
    pub fn fit(points: &[ScienceVector]) -> (Self, Vec<String>) {
        let n = points.len().max(1) as f64;
        let mut means = [0.0; DIM];
        for p in points {
            for (m, v) in means.iter_mut().zip(p.to_array()) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = [0.0; DIM];
        for p in points {
            for d in 0..DIM {
                vars[d] += (p.to_array()[d] - means[d]).powi(2);
            }
        }
        let mut warnings = Vec::new();
        let names = ["iwp", "particle_size", "cloud_top_height"];
        let sds = std::array::from_fn(|d| {
            let sd = (vars[d] / n).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                warnings.push(format!("feature `{}` has zero variance; using sd = 1", names[d]));
                1.0
            }
        });
        (Standardizer { means, sds }, warnings)
    }

    pub fn apply(&self, p: &ScienceVector) -> Point {
        let a = p.to_array();
        std::array::from_fn(|d| (a[d] - self.means[d]) / self.sds[d])
    }
}

/// Distinct standardized points with multiplicities, in first-seen order.
#[derive(Debug, Clone)]
pub struct WeightedPoints {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    /// Index into `points` for each original input.
    pub index_of: Vec<usize>,
}

impl WeightedPoints {
    pub fn from_standardized(raw: impl IntoIterator<Item = Point>) -> Self {
        let mut seen: HashMap<[u64; DIM], usize> = HashMap::new();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut index_of = Vec::new();
        for p in raw {
            // -0.0 and 0.0 are the same point.
            let key = p.map(|v| if v == 0.0 { 0u64 } else { v.to_bits() });
            let idx = *seen.entry(key).or_insert_with(|| {
                points.push(p);
                weights.push(0.0);
                points.len() - 1
            });
            weights[idx] += 1.0;
            index_of.push(idx);
        }
        WeightedPoints { points, weights, index_of }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[inline]
fn sq_dist(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

#[inline]
fn dist(a: &Point, b: &Point) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Nearest centroid; ties go to the lowest index.
pub fn nearest(centroids: &[Point], p: &Point) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Result of one Lloyd run.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub centroids: Vec<Point>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub history: Vec<f64>,
}

fn kmeans_pp_init(data: &WeightedPoints, k: usize, rng: &mut seed::Rng) -> Vec<Point> {
    let total: f64 = data.weights.iter().sum();
    let pick = |rng: &mut seed::Rng, scores: &[f64], sum: f64| -> usize {
        let mut target = rng.random_range(0.0..sum);
        for (i, s) in scores.iter().enumerate() {
            if target < *s {
                return i;
            }
            target -= s;
        }
        scores.iter().rposition(|s| *s > 0.0).unwrap_or(0)
    };
    let first = pick(rng, &data.weights, total);
    let mut centroids = vec![data.points[first]];
    let mut d2: Vec<f64> = data.points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let scores: Vec<f64> = d2.iter().zip(&data.weights).map(|(d, w)| d * w).collect();
        let sum: f64 = scores.iter().sum();
        if !(sum > 0.0) {
            break;
        }
        let next = data.points[pick(rng, &scores, sum)];
        for (d, p) in d2.iter_mut().zip(&data.points) {
            *d = d.min(sq_dist(p, &next));
        }
        centroids.push(next);
    }
    centroids
}

/// Weighted Lloyd iterations from the given centroids until the assignment
/// stops changing or `MAX_ITERATIONS` is reached.
pub fn lloyd(data: &WeightedPoints, mut centroids: Vec<Point>) -> LloydRun {
    let k = centroids.len();
    let mut assignment = vec![usize::MAX; data.len()];
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in data.points.iter().enumerate() {
            let (c, d) = nearest(&centroids, p);
            inertia += data.weights[i] * d;
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![[0.0; DIM]; k];
        let mut mass = vec![0.0; k];
        for (i, p) in data.points.iter().enumerate() {
            let c = assignment[i];
            mass[c] += data.weights[i];
            for d in 0..DIM {
                sums[c][d] += data.weights[i] * p[d];
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous centroid.
            if mass[c] > 0.0 {
                centroids[c] = sums[c].map(|s| s / mass[c]);
            }
        }
    }
    let inertia = *history.last().unwrap_or(&0.0);
    LloydRun { centroids, assignment, inertia, history }
}

/// Best of `RESTARTS` k-means++ initialized Lloyd runs on weighted points.
pub fn fit_weighted(data: &WeightedPoints, k: usize, seed: u64) -> Result<LloydRun> {
    if k == 0 {
        return Err(Error::DegenerateInput("k must be at least 1".into()));
    }
    if data.len() < k {
        return Err(Error::DegenerateInput(format!("{} distinct point(s) cannot form {k} clusters", data.len())));
    }
    let mut best: Option<LloydRun> = None;
    for restart in 0..RESTARTS {
        let mut rng = seed::rng_for(seed, &[restart as u64]);
        let init = kmeans_pp_init(data, k, &mut rng);
        if init.len() < k {
            continue;
        }
        let run = lloyd(data, init);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.ok_or_else(|| Error::DegenerateInput(format!("could not seed {k} distinct centroids")))
}

pub fn fit_kmeans(points: &[ScienceVector], k: usize, seed: u64) -> Result<ClusterModel> {
    if k == 0 || points.len() < k {
        return Err(Error::DegenerateInput(format!("need len(points) >= k >= 1, got {} points, k = {k}", points.len())));
    }
    let (scaler, warnings) = Standardizer::fit(points);
    let data = WeightedPoints::from_standardized(points.iter().map(|p| scaler.apply(p)));
    let run = fit_weighted(&data, k, seed)?;
    Ok(ClusterModel {
        k,
        feature_means: scaler.means,
        feature_sds: scaler.sds,
        centroids: run.centroids,
        inertia: run.inertia,
        warnings,
    })
}

/// Index of the nearest centroid in standardized space; ties go to the lowest index.
pub fn assign(model: &ClusterModel, point: &ScienceVector) -> usize {
    nearest(&model.centroids, &model.standardize(point)).0
}

/// Accumulate, for each sampled point, the summed distance to every cluster.
///
/// `sampled` indexes unique points; `labels[u]` is the cluster of unique point `u`.
fn cluster_distance_sums(data: &WeightedPoints, labels: &[usize], k: usize, sampled: &[usize]) -> Vec<Vec<f64>> {
    sampled
        .iter()
        .map(|&s| {
            let p = &data.points[s];
            let mut sums = vec![0.0; k];
            for (u, q) in data.points.iter().enumerate() {
                sums[labels[u]] += data.weights[u] * dist(p, q);
            }
            sums
        })
        .collect()
}

fn silhouette_from_sums(own: usize, sums: &[f64], sizes: &[f64]) -> f64 {
    if sizes[own] <= 1.0 {
        return 0.0;
    }
    let a = sums[own] / (sizes[own] - 1.0);
    let b = sums
        .iter()
        .zip(sizes)
        .enumerate()
        .filter(|(c, (_, n))| *c != own && **n > 0.0)
        .map(|(_, (s, n))| s / n)
        .fold(f64::INFINITY, f64::min);
    let denom = a.max(b);
    if denom > 0.0 {
        (b - a) / denom
    } else {
        0.0
    }
}

/// Draw `cap` input indices uniformly without replacement (all of them if `cap >= n`).
fn sample_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if cap >= n {
        return (0..n).collect();
    }
    let mut rng = seed::rng_for(seed, &[0x5111]);
    let mut picked = rand::seq::index::sample(&mut rng, n, cap).into_vec();
    picked.sort_unstable();
    picked
}

fn validate_assignments(n: usize, assignments: &[usize]) -> Result<usize> {
    if assignments.len() != n {
        return Err(Error::DegenerateInput(format!("{} assignments for {n} points", assignments.len())));
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut present = vec![false; k];
    assignments.iter().for_each(|&a| present[a] = true);
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::UndefinedScore("silhouette needs at least two non-empty clusters".into()));
    }
    Ok(k)
}

/// Mean silhouette over up to `sample_cap` uniformly sampled points. Distances
/// are standardized Euclidean and always measured against the full point set.
pub fn silhouette_score(points: &[ScienceVector], assignments: &[usize], sample_cap: usize, seed: u64) -> Result<f64> {
    let k = validate_assignments(points.len(), assignments)?;
    let (scaler, _) = Standardizer::fit(points);
    let data = WeightedPoints::from_standardized(points.iter().map(|p| scaler.apply(p)));
    // Identical points always share a cluster when assignments come from a
    // clusterer; if they do not, fall back to the exact per-point form.
    let mut unique_label = vec![usize::MAX; data.len()];
    let mut consistent = true;
    for (i, &u) in data.index_of.iter().enumerate() {
        if unique_label[u] == usize::MAX {
            unique_label[u] = assignments[i];
        } else if unique_label[u] != assignments[i] {
            consistent = false;
            break;
        }
    }
    let sample = sample_indices(points.len(), sample_cap, seed);
    let mut sizes = vec![0.0; k];
    assignments.iter().for_each(|&a| sizes[a] += 1.0);
    let total: f64 = if consistent {
        let unique_sample: Vec<usize> = sample.iter().map(|&i| data.index_of[i]).collect();
        let sums = cluster_distance_sums(&data, &unique_label, k, &unique_sample);
        sample.iter().zip(&sums).map(|(&i, s)| silhouette_from_sums(assignments[i], s, &sizes)).sum()
    } else {
        let z: Vec<Point> = points.iter().map(|p| scaler.apply(p)).collect();
        sample
            .iter()
            .map(|&i| {
                let mut sums = vec![0.0; k];
                for (j, q) in z.iter().enumerate() {
                    sums[assignments[j]] += dist(&z[i], q);
                }
                silhouette_from_sums(assignments[i], &sums, &sizes)
            })
            .sum()
    };
    Ok(total / sample.len() as f64)
}

/// One point of the k-sweep curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub score: f64,
}

/// Fit and score every k in `k_range`. Fits use per-k sub-seeds; the
/// silhouette sample is shared across k so distances are computed once.
pub fn sweep_k(
    points: &[ScienceVector],
    k_range: std::ops::RangeInclusive<usize>,
    sample_cap: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if *k_range.start() < 2 || *k_range.end() >= points.len() {
        return Err(Error::DegenerateInput(format!(
            "k range {k_range:?} must lie within [2, {})",
            points.len()
        )));
    }
    let (scaler, _) = Standardizer::fit(points);
    let data = WeightedPoints::from_standardized(points.iter().map(|p| scaler.apply(p)));
    let sample = sample_indices(points.len(), sample_cap, seed::derive_named(seed, "silhouette"));
    // Multiplicity of each unique point within the sample.
    let mut sample_weight: HashMap<usize, f64> = HashMap::new();
    for &i in &sample {
        *sample_weight.entry(data.index_of[i]).or_default() += 1.0;
    }
    let mut sampled_unique: Vec<(usize, f64)> = sample_weight.into_iter().collect();
    sampled_unique.sort_unstable_by_key(|(u, _)| *u);

    let mut fits = Vec::new();
    for k in k_range {
        let run = fit_weighted(&data, k, seed::derive(seed, &[k as u64]))?;
        fits.push((k, run));
    }
    // One pass over (sample × unique points) serves every k.
    let mut per_k_totals = vec![0.0; fits.len()];
    for &(s, mult) in &sampled_unique {
        let p = &data.points[s];
        let mut sums: Vec<Vec<f64>> = fits.iter().map(|(k, _)| vec![0.0; *k]).collect();
        for (u, q) in data.points.iter().enumerate() {
            let wd = data.weights[u] * dist(p, q);
            for (f, (_, run)) in fits.iter().enumerate() {
                sums[f][run.assignment[u]] += wd;
            }
        }
        for (f, (k, run)) in fits.iter().enumerate() {
            let mut sizes = vec![0.0; *k];
            for (u, w) in data.weights.iter().enumerate() {
                sizes[run.assignment[u]] += w;
            }
            per_k_totals[f] += mult * silhouette_from_sums(run.assignment[s], &sums[f], &sizes);
        }
    }
    Ok(fits
        .iter()
        .zip(per_k_totals)
        .map(|((k, _), total)| SweepPoint { k: *k, score: total / sample.len() as f64 })
        .collect())
}

/// Cluster index per input point, via the weighted representation.
pub fn assignments_for(model: &ClusterModel, points: &[ScienceVector]) -> Vec<usize> {
    points.iter().map(|p| assign(model, p)).collect()
}

/// Silhouette under a fitted model's assignments, with the sample drawn as in [`sweep_k`].
pub fn model_silhouette(model: &ClusterModel, points: &[ScienceVector], sample_cap: usize, seed: u64) -> Result<f64> {
    silhouette_score(points, &assignments_for(model, points), sample_cap, seed)
}
