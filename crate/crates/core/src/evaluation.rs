//! Image-level splits, cross-validation, and 5/3/2-class confusion reporting.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, ModelFile, TrainerConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::io::hash_pixels;
use crate::model::{collapse_matrix, ClassMapping, CloudClass5, ConfusionMatrix, PixelRecord, Region};
use crate::noise::NoiseSpec;
use crate::seed::{derive, rng_for};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub region: Option<Region>,
    pub train_image_ids: Vec<u32>,
    pub test_image_ids: Vec<u32>,
}

impl SplitPlan {
    pub fn new(region: Option<Region>, train: impl IntoIterator<Item = u32>, test: impl IntoIterator<Item = u32>) -> Self {
        SplitPlan { region, train_image_ids: train.into_iter().collect(), test_image_ids: test.into_iter().collect() }
    }

    /// Images 1–10 train, 11–13 test.
    pub fn tropical_default() -> Self {
        SplitPlan::new(Some(Region::Tropical), 1..=10, 11..=13)
    }

    /// Cutouts 1–20 train, 21–29 test.
    pub fn nontropical_default() -> Self {
        SplitPlan::new(Some(Region::NonTropical), 1..=20, 21..=29)
    }

    /// The noise experiment's variant: images 1–8 train, 9–13 test.
    pub fn tropical_first_eight() -> Self {
        SplitPlan::new(Some(Region::Tropical), 1..=8, 9..=13)
    }

    pub fn default_for(region: Region) -> Self {
        match region {
            Region::Tropical => SplitPlan::tropical_default(),
            Region::NonTropical => SplitPlan::nontropical_default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_image_ids.is_empty() {
            return Err(Error::InvalidPlan("no training images".into()));
        }
        let train: BTreeSet<u32> = self.train_image_ids.iter().copied().collect();
        let test: BTreeSet<u32> = self.test_image_ids.iter().copied().collect();
        if train.len() != self.train_image_ids.len() || test.len() != self.test_image_ids.len() {
            return Err(Error::InvalidPlan("image ids repeated within a side".into()));
        }
        let overlap: Vec<u32> = train.intersection(&test).copied().collect();
        if !overlap.is_empty() {
            return Err(Error::InvalidPlan(format!("images {overlap:?} are in both train and test")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<PixelRecord>,
    pub test: Vec<PixelRecord>,
    pub warnings: Vec<String>,
}

/// Partitions pixels by image membership; pixels of images in neither list are dropped.
pub fn make_split(pixels: &[PixelRecord], plan: &SplitPlan) -> Result<Split> {
    plan.validate()?;
    let present: BTreeSet<u32> = pixels.iter().map(|p| p.image_id).collect();
    let missing: Vec<u32> =
        plan.train_image_ids.iter().chain(&plan.test_image_ids).filter(|id| !present.contains(id)).copied().collect();
    if !missing.is_empty() {
        return Err(Error::InvalidPlan(format!("images {missing:?} not found in the data")));
    }
    let train_ids: BTreeSet<u32> = plan.train_image_ids.iter().copied().collect();
    let test_ids: BTreeSet<u32> = plan.test_image_ids.iter().copied().collect();
    let train: Vec<PixelRecord> = pixels.iter().filter(|p| train_ids.contains(&p.image_id)).copied().collect();
    let test: Vec<PixelRecord> = pixels.iter().filter(|p| test_ids.contains(&p.image_id)).copied().collect();
    let mut warnings = Vec::new();
    if test.is_empty() {
        warnings.push("split plan has no test images; test set is empty".to_string());
    }
    Ok(Split { train, test, warnings })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub model_hash: Option<String>,
    pub dataset_hash: Option<String>,
    pub noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_pixels: u64,
    pub matrix5: ConfusionMatrix,
    pub matrix3: ConfusionMatrix,
    pub matrix2: ConfusionMatrix,
    /// Recall per class, aligned with each matrix's class names; `None` for empty rows.
    pub recalls5: Vec<Option<f64>>,
    pub recalls3: Vec<Option<f64>>,
    pub recalls2: Vec<Option<f64>>,
    pub accuracy5: f64,
    pub accuracy3: f64,
    pub accuracy2: f64,
    pub nonstorm_recall: Option<f64>,
    pub storm_recall: Option<f64>,
    pub metadata: EvalMetadata,
}

impl EvalReport {
    pub fn from_matrix(matrix5: ConfusionMatrix) -> Self {
        let matrix3 = collapse_matrix(&matrix5, &ClassMapping::five_to_three()).expect("five-class names");
        let matrix2 = collapse_matrix(&matrix5, &ClassMapping::five_to_two()).expect("five-class names");
        EvalReport {
            n_pixels: matrix5.total(),
            recalls5: matrix5.recalls(),
            recalls3: matrix3.recalls(),
            recalls2: matrix2.recalls(),
            accuracy5: matrix5.accuracy().unwrap_or(0.0),
            accuracy3: matrix3.accuracy().unwrap_or(0.0),
            accuracy2: matrix2.accuracy().unwrap_or(0.0),
            nonstorm_recall: matrix2.recall(0),
            storm_recall: matrix2.recall(1),
            matrix5,
            matrix3,
            matrix2,
            metadata: EvalMetadata::default(),
        }
    }

    pub fn from_labels(truth: &[CloudClass5], predicted: &[CloudClass5]) -> Self {
        EvalReport::from_matrix(ConfusionMatrix::from_labels(truth, predicted))
    }

    pub fn recall5(&self, class: CloudClass5) -> Option<f64> {
        self.recalls5[class.index()]
    }
}

pub fn predict_all<C: Classifier + Sync + ?Sized>(model: &C, pixels: &[PixelRecord]) -> Vec<CloudClass5> {
    pixels.par_iter().with_min_len(1024).map(|p| model.predict(&p.radiance).class).collect()
}

/// Scores labeled pixels; records the dataset hash in the metadata.
pub fn evaluate<C: Classifier + Sync + ?Sized>(model: &C, pixels: &[PixelRecord]) -> Result<EvalReport> {
    let truth = Dataset::from_pixels(pixels)?.y;
    let predicted = predict_all(model, pixels);
    let mut report = EvalReport::from_labels(&truth, &predicted);
    report.metadata.dataset_hash = Some(hash_pixels(pixels));
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Some(MeanSd { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub validation_images: Vec<u32>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    /// Mean and sd across folds of accuracies and recalls; keys such as
    /// `accuracy3`, `storm_recall`, `recall5:RainyAnvil`. Folds where a recall
    /// is undefined are skipped for that key.
    pub summary: BTreeMap<String, MeanSd>,
}

/// Shuffled image ids dealt round-robin into `folds` groups.
pub fn assign_folds(image_ids: &[u32], folds: usize, seed: u64) -> Result<Vec<Vec<u32>>> {
    let mut ids: Vec<u32> = image_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if folds < 2 || ids.len() < folds {
        return Err(Error::InfeasibleFolds { images: ids.len(), folds });
    }
    ids.shuffle(&mut rng_for(seed, &[0xF01D]));
    let mut out = vec![Vec::new(); folds];
    for (i, id) in ids.into_iter().enumerate() {
        out[i % folds].push(id);
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    Ok(out)
}

/// Folds partition images, never pixels.
pub fn cross_validate(trainer: &TrainerConfig, pixels: &[PixelRecord], folds: usize, seed: u64) -> Result<CvReport> {
    let ids: Vec<u32> = pixels.iter().map(|p| p.image_id).collect();
    let assignment = assign_folds(&ids, folds, seed)?;
    let results: Vec<Result<FoldResult>> = assignment
        .par_iter()
        .enumerate()
        .map(|(fold, held_out)| {
            let held: BTreeSet<u32> = held_out.iter().copied().collect();
            let (val, train): (Vec<PixelRecord>, Vec<PixelRecord>) = pixels.iter().partition(|p| held.contains(&p.image_id));
            let model = ModelFile::train(trainer, &Dataset::from_pixels(&train)?, derive(seed, &[fold as u64]))?;
            Ok(FoldResult { fold, validation_images: held_out.clone(), report: evaluate(&model, &val)? })
        })
        .collect();
    let folds: Vec<FoldResult> = results.into_iter().collect::<Result<_>>()?;
    Ok(CvReport { summary: summarize(&folds), folds })
}

fn summarize(folds: &[FoldResult]) -> BTreeMap<String, MeanSd> {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for f in folds {
        let r = &f.report;
        let mut push = |key: String, v: Option<f64>| {
            if let Some(v) = v {
                values.entry(key).or_default().push(v);
            }
        };
        push("accuracy5".into(), Some(r.accuracy5));
        push("accuracy3".into(), Some(r.accuracy3));
        push("accuracy2".into(), Some(r.accuracy2));
        push("storm_recall".into(), r.storm_recall);
        push("nonstorm_recall".into(), r.nonstorm_recall);
        for (name, v) in r.matrix5.class_names.iter().zip(&r.recalls5) {
            push(format!("recall5:{name}"), *v);
        }
    }
    values.into_iter().filter_map(|(k, v)| MeanSd::of(&v).map(|m| (k, m))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RadianceVector, N_BANDS};
    use proptest::prelude::*;
    use CloudClass5::*;

    fn pixels(images: u32, per_image: u32) -> Vec<PixelRecord> {
        let mut out = Vec::new();
        for image in 1..=images {
            for i in 0..per_image {
                let label = CloudClass5::from_index(((i + image) % 5) as usize).unwrap();
                out.push(PixelRecord {
                    image_id: image,
                    row: i / 10,
                    col: i % 10,
                    radiance: RadianceVector([260.0 - 10.0 * label.index() as f64 + (i % 3) as f64; N_BANDS]),
                    science: None,
                    label: Some(label),
                });
            }
        }
        out
    }

    #[test]
    fn default_plan_tests_on_last_three_images() {
        let p = pixels(13, 20);
        let s = make_split(&p, &SplitPlan::tropical_default()).unwrap();
        assert!(s.test.iter().all(|p| (11..=13).contains(&p.image_id)));
        assert_eq!(s.test.len(), 60);
        assert_eq!(s.train.len(), 200);
        let train_keys: BTreeSet<_> = s.train.iter().map(PixelRecord::key).collect();
        assert!(s.test.iter().all(|p| !train_keys.contains(&p.key())));
    }

    #[test]
    fn all_train_plan_warns() {
        let p = pixels(3, 5);
        let s = make_split(&p, &SplitPlan::new(None, 1..=3, [])).unwrap();
        assert!(s.test.is_empty());
        assert_eq!(s.warnings.len(), 1);
        let mut union = s.train.clone();
        union.extend(&s.test);
        assert_eq!(union, p);
    }

    #[test]
    fn overlapping_or_missing_ids_rejected() {
        let p = pixels(4, 5);
        assert!(matches!(make_split(&p, &SplitPlan::new(None, [1, 2], [2, 3])), Err(Error::InvalidPlan(_))));
        assert!(matches!(make_split(&p, &SplitPlan::new(None, [1], [9])), Err(Error::InvalidPlan(_))));
        assert!(matches!(make_split(&p, &SplitPlan::new(None, [], [1])), Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn perfect_predictions() {
        let labels = [ClearSky, Cirrus, RainyAnvil, ConvectionCore, ThinCirrus];
        let r = EvalReport::from_labels(&labels, &labels);
        assert!(r.recalls5.iter().all(|v| *v == Some(1.0)));
        assert_eq!(r.accuracy5, 1.0);
        assert_eq!(r.accuracy2, 1.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r.matrix3.counts[i][j] > 0, i == j);
            }
        }
    }

    #[test]
    fn hand_tally_with_two_errors() {
        let truth = [ClearSky, ClearSky, Cirrus, RainyAnvil, ConvectionCore, ConvectionCore];
        let pred = [ClearSky, Cirrus, Cirrus, RainyAnvil, RainyAnvil, ConvectionCore];
        let r = EvalReport::from_labels(&truth, &pred);
        assert_eq!(r.matrix5.counts[0], vec![1, 0, 1, 0, 0]);
        assert_eq!(r.matrix5.counts[4], vec![0, 0, 0, 1, 1]);
        assert_eq!(r.matrix5.correct(), 4);
        assert_eq!(r.recall5(ConvectionCore), Some(0.5));
        assert_eq!(r.recall5(ThinCirrus), None);
        // ClearSky→Cirrus is correct at 3 classes; the core→anvil slip is correct at 2.
        assert!((r.accuracy3 - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.accuracy2, 1.0);
        assert_eq!(r.storm_recall, Some(1.0));
    }

    proptest! {
        #[test]
        fn collapse_is_weighted_merge(pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..200)) {
            let truth: Vec<_> = pairs.iter().map(|p| CloudClass5::from_index(p.0).unwrap()).collect();
            let pred: Vec<_> = pairs.iter().map(|p| CloudClass5::from_index(p.1).unwrap()).collect();
            let r = EvalReport::from_labels(&truth, &pred);
            prop_assert_eq!(r.matrix2.total(), r.matrix5.total());
            prop_assert!(r.accuracy2 >= r.accuracy5);
            prop_assert!(r.accuracy3 >= r.accuracy5);
            // Storm row of the 2-class matrix = sum of the 5-class storm rows, counted into storm columns.
            let storm_hits: u64 = (3..5).map(|i| r.matrix5.counts[i][3] + r.matrix5.counts[i][4]).sum();
            let storm_rows: u64 = (3..5).map(|i| r.matrix5.row_sum(i)).sum();
            if storm_rows > 0 {
                prop_assert!((r.storm_recall.unwrap() - storm_hits as f64 / storm_rows as f64).abs() < 1e-15);
            }
            let json = serde_json::to_string(&r).unwrap();
            let back: EvalReport = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back, r);
        }
    }

    #[test]
    fn folds_partition_images() {
        let ids: Vec<u32> = (1..=10).collect();
        let folds = assign_folds(&ids, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<u32> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(folds, assign_folds(&ids, 5, 3).unwrap());
        assert!(matches!(assign_folds(&ids[..4], 5, 0), Err(Error::InfeasibleFolds { images: 4, folds: 5 })));
    }

    #[test]
    fn constant_predictor_accuracy_is_class_frequency() {
        let p = pixels(10, 23);
        let cv = cross_validate(&TrainerConfig::Constant { class: Cirrus }, &p, 5, 8).unwrap();
        let mut expected = Vec::new();
        for f in &cv.folds {
            let val: Vec<_> = p.iter().filter(|x| f.validation_images.contains(&x.image_id)).collect();
            let freq = val.iter().filter(|x| x.label == Some(Cirrus)).count() as f64 / val.len() as f64;
            assert!((f.report.accuracy5 - freq).abs() < 1e-15);
            expected.push(freq);
        }
        let mean = expected.iter().sum::<f64>() / expected.len() as f64;
        assert!((cv.summary["accuracy5"].mean - mean).abs() < 1e-15);
    }

    #[test]
    fn cross_validation_is_deterministic() {
        let p = pixels(6, 30);
        let t = TrainerConfig::Rdf(crate::classic::ForestParams { n_trees: 3, ..Default::default() });
        assert_eq!(cross_validate(&t, &p, 3, 1).unwrap(), cross_validate(&t, &p, 3, 1).unwrap());
    }

    #[test]
    fn unlabeled_pixel_rejected() {
        let mut p = pixels(1, 4);
        p[2].label = None;
        let model = TrainedClassifierConst(Cirrus);
        assert!(matches!(evaluate(&model, &p), Err(Error::MissingLabel(v)) if v == vec![2]));
    }

    struct TrainedClassifierConst(CloudClass5);

    impl Classifier for TrainedClassifierConst {
        fn predict(&self, _: &RadianceVector) -> crate::classifier::Prediction {
            let mut s = [0.0; 5];
            s[self.0.index()] = 1.0;
            crate::classifier::Prediction::from_scores(s)
        }
    }
}
