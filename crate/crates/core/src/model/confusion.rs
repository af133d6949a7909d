use serde::{Deserialize, Serialize};

use super::classes::{ClassMapping, CloudClass5};
use crate::error::{Error, Result};

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(class_names: Vec<String>) -> Self {
        let n = class_names.len();
        ConfusionMatrix { class_names, counts: vec![vec![0; n]; n] }
    }

    pub fn five_class() -> Self {
        Self::zeros(CloudClass5::names())
    }

    pub fn from_labels(truth: &[CloudClass5], predicted: &[CloudClass5]) -> Self {
        assert_eq!(truth.len(), predicted.len(), "label slices differ in length");
        let mut cm = Self::five_class();
        for (t, p) in truth.iter().zip(predicted) {
            cm.counts[t.index()][p.index()] += 1;
        }
        cm
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Diagonal over row sum; `None` for classes absent from the truth.
    pub fn recall(&self, i: usize) -> Option<f64> {
        let row = self.row_sum(i);
        (row > 0).then(|| self.counts[i][i] as f64 / row as f64)
    }

    pub fn recalls(&self) -> Vec<Option<f64>> {
        (0..self.len()).map(|i| self.recall(i)).collect()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.correct() as f64 / total as f64)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for n in &self.class_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                out.push(',');
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Sum counts over the preimage blocks of `mapping`.
pub fn collapse_matrix(cm: &ConfusionMatrix, mapping: &ClassMapping) -> Result<ConfusionMatrix> {
    let index: Vec<usize> = cm
        .class_names
        .iter()
        .map(|name| {
            let target = mapping
                .get(name)
                .ok_or_else(|| Error::InvalidMapping(format!("class `{name}` is not covered by the mapping")))?;
            Ok(mapping.targets().iter().position(|t| t == target).expect("mapping targets are closed"))
        })
        .collect::<Result<_>>()?;
    let mut out = ConfusionMatrix::zeros(mapping.targets().to_vec());
    for (i, row) in cm.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            out.counts[index[i]][index[j]] += c;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix { class_names: CloudClass5::names(), counts }
    }

    #[test]
    fn identity_collapses_to_merged_diagonal() {
        let mut counts = vec![vec![0; 5]; 5];
        for (i, row) in counts.iter_mut().enumerate() {
            row[i] = (i as u64 + 1) * 10;
        }
        let c3 = collapse_matrix(&matrix(counts), &ClassMapping::five_to_three()).unwrap();
        assert_eq!(c3.class_names, ["NonStorm", "RainyAnvil", "ConvectionCore"]);
        assert_eq!(c3.counts, vec![vec![60, 0, 0], vec![0, 40, 0], vec![0, 0, 50]]);
    }

    #[test]
    fn off_diagonal_nonstorm_confusion_becomes_correct() {
        let mut counts = vec![vec![0; 5]; 5];
        counts[CloudClass5::ClearSky.index()][CloudClass5::Cirrus.index()] = 1;
        let c3 = collapse_matrix(&matrix(counts), &ClassMapping::five_to_three()).unwrap();
        assert_eq!(c3.counts, vec![vec![1, 0, 0], vec![0, 0, 0], vec![0, 0, 0]]);
    }

    #[test]
    fn uncovered_class_is_an_error() {
        let cm = ConfusionMatrix::zeros(vec!["Mystery".into()]);
        assert!(matches!(collapse_matrix(&cm, &ClassMapping::five_to_three()), Err(Error::InvalidMapping(_))));
    }

    #[test]
    fn recall_undefined_for_empty_rows() {
        let cm = ConfusionMatrix::from_labels(
            &[CloudClass5::ClearSky, CloudClass5::ClearSky, CloudClass5::Cirrus],
            &[CloudClass5::ClearSky, CloudClass5::Cirrus, CloudClass5::Cirrus],
        );
        assert_eq!(cm.recall(0), Some(0.5));
        assert_eq!(cm.recall(2), Some(1.0));
        assert_eq!(cm.recall(4), None);
        assert_eq!(cm.total(), 3);
    }

    fn arb_matrix() -> impl Strategy<Value = ConfusionMatrix> {
        proptest::collection::vec(proptest::collection::vec(0u64..1000, 5), 5).prop_map(matrix)
    }

    proptest! {
        #[test]
        fn collapse_conserves_total(cm in arb_matrix()) {
            let c3 = collapse_matrix(&cm, &ClassMapping::five_to_three()).unwrap();
            prop_assert_eq!(c3.total(), cm.total());
        }

        #[test]
        fn collapse_commutes_with_composition(cm in arb_matrix()) {
            let m53 = ClassMapping::five_to_three();
            let m32 = ClassMapping::three_to_two();
            let stepwise = collapse_matrix(&collapse_matrix(&cm, &m53).unwrap(), &m32).unwrap();
            let direct = collapse_matrix(&cm, &m53.then(&m32).unwrap()).unwrap();
            prop_assert_eq!(stepwise, direct);
        }

        #[test]
        fn coarsening_never_lowers_accuracy(cm in arb_matrix()) {
            prop_assume!(cm.total() > 0);
            let c2 = collapse_matrix(&cm, &ClassMapping::five_to_two()).unwrap();
            prop_assert!(c2.accuracy().unwrap() >= cm.accuracy().unwrap());
        }
    }
}
