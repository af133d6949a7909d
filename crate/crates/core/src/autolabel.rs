//! Cluster → cloud-class mapping by centroid ordering.
//!
//! The all-zero cluster is clear sky. The remaining clusters are ranked by
//! centroid ice water path and assigned thin cirrus through convection core
//! in that order. Particle size and cloud-top height are checked against the
//! same order and any disagreement is reported, never silently reconciled.

use serde::{Deserialize, Serialize};

use crate::clustering::{assign, ClusterModel};
use crate::error::{Error, Result};
use crate::model::{CloudClass5, PixelRecord, ScienceVector};

pub const DEFAULT_ZERO_EPSILON: f64 = 1e-6;

const CLOUDY: [CloudClass5; 4] =
    [CloudClass5::ThinCirrus, CloudClass5::Cirrus, CloudClass5::RainyAnvil, CloudClass5::ConvectionCore];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    pub cluster: usize,
    pub centroid: ScienceVector,
    pub members: u64,
    /// Per-feature population sd of the members, raw units.
    pub member_sd: [f64; 3],
    pub label: CloudClass5,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    /// Class for each cluster index.
    pub assignments: Vec<CloudClass5>,
    pub diagnostics: Vec<ClusterDiagnostics>,
    pub monotonicity_warnings: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub zero_epsilon: f64,
}

impl LabelMap {
    pub fn label_of(&self, cluster: usize) -> CloudClass5 {
        self.assignments[cluster]
    }
}

fn norm(v: &ScienceVector) -> f64 {
    v.to_array().iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Class for each of `m` iwp-ranked cloudy clusters.
///
/// With fewer than four clusters the weakest classes are used in order. With
/// more, four anchor ranks spread evenly over the ranking (always including
/// the first and last) take the four classes, and every other cluster joins
/// the anchor nearest to it in centroid iwp.
fn ranked_classes(iwps: &[f64]) -> Vec<CloudClass5> {
    let m = iwps.len();
    if m <= CLOUDY.len() {
        return CLOUDY[..m].to_vec();
    }
    let anchors: Vec<usize> = (0..CLOUDY.len()).map(|i| ((i * (m - 1)) as f64 / 3.0).round() as usize).collect();
    (0..m)
        .map(|r| {
            let mut best = 0;
            for (a, &rank) in anchors.iter().enumerate() {
                // Ties go to the stronger class.
                if (iwps[r] - iwps[rank]).abs() <= (iwps[r] - iwps[anchors[best]]).abs() {
                    best = a;
                }
            }
            CLOUDY[best]
        })
        .collect()
}

pub fn derive_label_map(model: &ClusterModel, points: &[ScienceVector]) -> Result<LabelMap> {
    derive_label_map_with(model, points, DEFAULT_ZERO_EPSILON)
}

pub fn derive_label_map_with(model: &ClusterModel, points: &[ScienceVector], zero_epsilon: f64) -> Result<LabelMap> {
    if model.k < 2 {
        return Err(Error::InsufficientClusters(model.k));
    }
    let centroids = model.raw_centroids();
    let mut warnings = Vec::new();

    let zero = centroids
        .iter()
        .enumerate()
        .filter(|(_, c)| norm(c) < zero_epsilon)
        .min_by(|a, b| norm(a.1).total_cmp(&norm(b.1)))
        .map(|(i, _)| i);
    let clear = match zero {
        Some(i) => i,
        None => {
            let i = centroids
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.iwp.total_cmp(&b.1.iwp))
                .map(|(i, _)| i)
                .expect("k >= 2");
            warnings.push(format!(
                "no cluster centroid within {zero_epsilon:e} of zero; cluster {i} (lowest iwp {:.4}) assigned ClearSky",
                centroids[i].iwp
            ));
            i
        }
    };

    let mut ranked: Vec<usize> = (0..model.k).filter(|&i| i != clear).collect();
    ranked.sort_by(|&a, &b| centroids[a].iwp.total_cmp(&centroids[b].iwp).then(a.cmp(&b)));
    let iwps: Vec<f64> = ranked.iter().map(|&i| centroids[i].iwp).collect();
    let classes = ranked_classes(&iwps);
    if ranked.len() < CLOUDY.len() {
        warnings.push(format!(
            "only {} cloudy cluster(s) for 4 cloudy classes; {} left unassigned",
            ranked.len(),
            CLOUDY[ranked.len()..].iter().map(|c| c.name()).collect::<Vec<_>>().join(", ")
        ));
    } else if ranked.len() > CLOUDY.len() {
        warnings.push(format!("{} cloudy clusters merged into 4 cloudy classes by iwp proximity", ranked.len()));
    }

    let mut assignments = vec![CloudClass5::ClearSky; model.k];
    for (&cluster, &class) in ranked.iter().zip(&classes) {
        assignments[cluster] = class;
    }

    let mut monotonicity_warnings = Vec::new();
    for w in ranked.windows(2) {
        let (lo, hi) = (&centroids[w[0]], &centroids[w[1]]);
        if !(hi.particle_size > lo.particle_size) {
            monotonicity_warnings.push(format!(
                "particle_size not ascending: cluster {} ({:.3}) -> cluster {} ({:.3})",
                w[0], lo.particle_size, w[1], hi.particle_size
            ));
        }
        if !(hi.cloud_top_height < lo.cloud_top_height) {
            monotonicity_warnings.push(format!(
                "cloud_top_height not descending: cluster {} ({:.3}) -> cluster {} ({:.3})",
                w[0], lo.cloud_top_height, w[1], hi.cloud_top_height
            ));
        }
    }

    let mut members = vec![0u64; model.k];
    let mut sums = vec![[0.0; 3]; model.k];
    let mut sq = vec![[0.0; 3]; model.k];
    for p in points {
        let c = assign(model, p);
        members[c] += 1;
        for (d, v) in p.to_array().into_iter().enumerate() {
            sums[c][d] += v;
            sq[c][d] += v * v;
        }
    }
    let diagnostics = (0..model.k)
        .map(|c| {
            let n = members[c].max(1) as f64;
            let member_sd = std::array::from_fn(|d| {
                let mean = sums[c][d] / n;
                (sq[c][d] / n - mean * mean).max(0.0).sqrt()
            });
            ClusterDiagnostics { cluster: c, centroid: centroids[c], members: members[c], member_sd, label: assignments[c] }
        })
        .collect();

    Ok(LabelMap { assignments, diagnostics, monotonicity_warnings, warnings, zero_epsilon })
}

/// Relabel pixels from their science vectors; radiances are untouched.
pub fn label_pixels(model: &ClusterModel, map: &LabelMap, pixels: &[PixelRecord]) -> Result<Vec<PixelRecord>> {
    let missing: Vec<usize> = pixels.iter().enumerate().filter(|(_, p)| p.science.is_none()).map(|(i, _)| i).collect();
    if !missing.is_empty() {
        return Err(Error::MissingScience(missing));
    }
    Ok(pixels
        .iter()
        .map(|p| {
            let science = p.science.expect("checked above");
            PixelRecord { label: Some(map.label_of(assign(model, &science))), ..*p }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RadianceVector;

    /// Model with identity standardization so raw and standardized centroids coincide.
    fn model_with(centroids: &[[f64; 3]]) -> ClusterModel {
        ClusterModel {
            k: centroids.len(),
            feature_means: [0.0; 3],
            feature_sds: [1.0; 3],
            centroids: centroids.to_vec(),
            inertia: 0.0,
            warnings: vec![],
        }
    }

    #[test]
    fn five_cluster_ordering() {
        // Shuffled so cluster index differs from rank.
        let model = model_with(&[
            [5.0, 90.0, 9000.0],
            [0.0, 0.0, 0.0],
            [20.0, 150.0, 6500.0],
            [0.1, 30.0, 14000.0],
            [1.0, 50.0, 11500.0],
        ]);
        let map = derive_label_map(&model, &[]).unwrap();
        assert_eq!(
            map.assignments,
            vec![
                CloudClass5::RainyAnvil,
                CloudClass5::ClearSky,
                CloudClass5::ConvectionCore,
                CloudClass5::ThinCirrus,
                CloudClass5::Cirrus
            ]
        );
        assert!(map.monotonicity_warnings.is_empty());
        assert!(map.warnings.is_empty());
    }

    #[test]
    fn two_clusters_under_resolve_with_warning() {
        let model = model_with(&[[3.0, 40.0, 10000.0], [0.0, 0.0, 0.0]]);
        let map = derive_label_map(&model, &[]).unwrap();
        assert_eq!(map.assignments, vec![CloudClass5::ThinCirrus, CloudClass5::ClearSky]);
        assert_eq!(map.warnings.len(), 1);
    }

    #[test]
    fn single_cluster_rejected() {
        let model = model_with(&[[0.0; 3]]);
        assert!(matches!(derive_label_map(&model, &[]), Err(Error::InsufficientClusters(1))));
    }

    #[test]
    fn missing_zero_cluster_falls_back_to_lowest_iwp() {
        let model = model_with(&[[2.0, 40.0, 10000.0], [0.01, 5.0, 100.0], [5.0, 80.0, 8000.0]]);
        let map = derive_label_map(&model, &[]).unwrap();
        assert_eq!(map.assignments[1], CloudClass5::ClearSky);
        assert!(map.warnings[0].contains("assigned ClearSky"));
    }

    #[test]
    fn monotonicity_violations_reported() {
        let model = model_with(&[[0.0; 3], [1.0, 80.0, 9000.0], [2.0, 50.0, 12000.0]]);
        let map = derive_label_map(&model, &[]).unwrap();
        assert_eq!(map.monotonicity_warnings.len(), 2);
    }

    #[test]
    fn extra_clusters_merge_by_iwp() {
        let model = model_with(&[
            [0.0, 0.0, 0.0],
            [0.1, 30.0, 14000.0],
            [0.12, 31.0, 13900.0],
            [1.0, 50.0, 11000.0],
            [5.0, 90.0, 9000.0],
            [19.0, 140.0, 6600.0],
            [20.0, 150.0, 6500.0],
        ]);
        let map = derive_label_map(&model, &[]).unwrap();
        use CloudClass5::*;
        assert_eq!(map.assignments, vec![ClearSky, ThinCirrus, ThinCirrus, Cirrus, RainyAnvil, ConvectionCore, ConvectionCore]);
    }

    #[test]
    fn diagnostics_count_members() {
        let model = model_with(&[[0.0; 3], [10.0, 10.0, 10.0]]);
        let pts = vec![ScienceVector::ZERO, ScienceVector::ZERO, ScienceVector::new(9.0, 10.0, 10.0), ScienceVector::new(11.0, 10.0, 10.0)];
        let map = derive_label_map(&model, &pts).unwrap();
        assert_eq!(map.diagnostics[0].members, 2);
        assert_eq!(map.diagnostics[1].members, 2);
        assert!((map.diagnostics[1].member_sd[0] - 1.0).abs() < 1e-12);
    }

    fn pixel(science: Option<ScienceVector>) -> PixelRecord {
        PixelRecord { image_id: 1, row: 0, col: 0, radiance: RadianceVector([250.0; 8]), science, label: None }
    }

    #[test]
    fn label_pixels_examples() {
        let model = model_with(&[
            [0.0, 0.0, 0.0],
            [0.5, 30.0, 14000.0],
            [1.5, 50.0, 11500.0],
            [3.0, 90.0, 9000.0],
            [7.0, 150.0, 6500.0],
        ]);
        let map = derive_label_map(&model, &[]).unwrap();
        let pixels = vec![pixel(Some(ScienceVector::ZERO)), pixel(Some(ScienceVector::new(7.0, 150.0, 6500.0)))];
        let labeled = label_pixels(&model, &map, &pixels).unwrap();
        assert_eq!(labeled[0].label, Some(CloudClass5::ClearSky));
        assert_eq!(labeled[1].label, Some(CloudClass5::ConvectionCore));
        assert_eq!(labeled[1].radiance, pixels[1].radiance);
        assert_eq!(label_pixels(&model, &map, &labeled).unwrap(), labeled);
    }

    #[test]
    fn label_pixels_reports_missing_science() {
        let model = model_with(&[[0.0; 3], [1.0, 1.0, 1.0]]);
        let map = derive_label_map(&model, &[]).unwrap();
        let pixels = vec![pixel(Some(ScienceVector::ZERO)), pixel(None), pixel(None)];
        match label_pixels(&model, &map, &pixels) {
            Err(Error::MissingScience(idx)) => assert_eq!(idx, vec![1, 2]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
