//! Feature matrix + label view over labeled pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CloudClass5, PixelRecord, RadianceVector, N_BANDS};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<[f64; N_BANDS]>,
    pub y: Vec<CloudClass5>,
}

impl Dataset {
    pub fn new(x: Vec<[f64; N_BANDS]>, y: Vec<CloudClass5>) -> Self {
        assert_eq!(x.len(), y.len(), "features and labels differ in length");
        Dataset { x, y }
    }

    pub fn from_pixels(pixels: &[PixelRecord]) -> Result<Self> {
        let missing: Vec<usize> = pixels.iter().enumerate().filter(|(_, p)| p.label.is_none()).map(|(i, _)| i).collect();
        if !missing.is_empty() {
            return Err(Error::MissingLabel(missing));
        }
        Ok(Dataset {
            x: pixels.iter().map(|p| p.radiance.0).collect(),
            y: pixels.iter().map(|p| p.label.expect("checked")).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn class_counts(&self) -> [usize; CloudClass5::COUNT] {
        let mut counts = [0; CloudClass5::COUNT];
        self.y.iter().for_each(|c| counts[c.index()] += 1);
        counts
    }

    pub fn classes_present(&self) -> usize {
        self.class_counts().iter().filter(|&&c| c > 0).count()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { x: idx.iter().map(|&i| self.x[i]).collect(), y: idx.iter().map(|&i| self.y[i]).collect() }
    }

    pub fn radiance(&self, i: usize) -> RadianceVector {
        RadianceVector(self.x[i])
    }

    /// Per-band mean and population sd (sd of a constant band is 1).
    pub fn band_moments(&self) -> ([f64; N_BANDS], [f64; N_BANDS]) {
        let n = self.len().max(1) as f64;
        let mut mean = [0.0; N_BANDS];
        for row in &self.x {
            for b in 0..N_BANDS {
                mean[b] += row[b];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; N_BANDS];
        for row in &self.x {
            for b in 0..N_BANDS {
                var[b] += (row[b] - mean[b]).powi(2);
            }
        }
        let sd = var.map(|v| {
            let s = (v / n).sqrt();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        });
        (mean, sd)
    }
}
