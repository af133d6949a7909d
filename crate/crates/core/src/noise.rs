//! Band-specific Gaussian instrument noise and the clean-vs-noisy experiment.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{ModelFile, TrainerConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, make_split, EvalReport, SplitPlan};
use crate::model::{BandId, PixelRecord, N_BANDS};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation per band, kelvin.
    pub sigma: BTreeMap<BandId, f64>,
    pub seed: u64,
}

impl Default for NoiseSpec {
    /// 5 K on every Tb380 sub-band, 1 K elsewhere.
    fn default() -> Self {
        NoiseSpec::from_fn(0, |b| if b.is_tb380() { 5.0 } else { 1.0 })
    }
}

impl NoiseSpec {
    pub fn from_fn(seed: u64, f: impl Fn(BandId) -> f64) -> Self {
        NoiseSpec { sigma: BandId::ALL.iter().map(|&b| (b, f(b))).collect(), seed }
    }

    pub fn zero(seed: u64) -> Self {
        NoiseSpec::from_fn(seed, |_| 0.0)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn scaled(&self, factor: f64) -> Self {
        NoiseSpec { sigma: self.sigma.iter().map(|(b, s)| (*b, s * factor)).collect(), seed: self.seed }
    }

    /// Missing bands get sigma 0.
    pub fn sigmas(&self) -> [f64; N_BANDS] {
        std::array::from_fn(|i| self.sigma.get(&BandId::ALL[i]).copied().unwrap_or(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        match self.sigma.iter().find(|(_, s)| !(**s >= 0.0 && s.is_finite())) {
            Some((b, s)) => Err(Error::InvalidSpec(format!("sigma for {b} must be finite and >= 0, got {s}"))),
            None => Ok(()),
        }
    }
}

/// Adds independent N(0, σ_b²) draws; each pixel's draws come from a stream
/// keyed by (seed, image_id, row, col), so results do not depend on order or threading.
pub fn apply_noise(pixels: &[PixelRecord], spec: &NoiseSpec) -> Result<Vec<PixelRecord>> {
    spec.validate()?;
    let sigmas = spec.sigmas();
    Ok(pixels
        .par_iter()
        .map(|p| {
            let mut out = *p;
            if sigmas.iter().any(|&s| s > 0.0) {
                let mut rng = rng_for(spec.seed, &[p.image_id as u64, p.row as u64, p.col as u64]);
                for b in 0..N_BANDS {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    out.radiance.0[b] += sigmas[b] * z;
                }
            }
            out
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub clean: EvalReport,
    pub noisy: EvalReport,
    /// Clean minus noisy overall 3-class accuracy.
    pub delta: f64,
}

/// Trains once on clean training pixels, then evaluates on clean and noisy test pixels.
pub fn noise_experiment(
    trainer: &TrainerConfig,
    pixels: &[PixelRecord],
    plan: &SplitPlan,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<NoiseReport> {
    let split = make_split(pixels, plan)?;
    let model = ModelFile::train(trainer, &Dataset::from_pixels(&split.train)?, seed)?;
    noise_experiment_with_model(&model, &split.test, spec)
}

pub fn noise_experiment_with_model(model: &ModelFile, test: &[PixelRecord], spec: &NoiseSpec) -> Result<NoiseReport> {
    let clean = evaluate(model, test)?;
    let noisy_pixels = apply_noise(test, spec)?;
    let mut noisy = evaluate(model, &noisy_pixels)?;
    noisy.metadata.noise = Some(spec.clone());
    let delta = clean.accuracy3 - noisy.accuracy3;
    Ok(NoiseReport { clean, noisy, delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CloudClass5, RadianceVector};

    fn grid(n: u32) -> Vec<PixelRecord> {
        (0..n)
            .map(|i| PixelRecord {
                image_id: 1 + i / 1000,
                row: (i % 1000) / 40,
                col: i % 40,
                radiance: RadianceVector([250.0; N_BANDS]),
                science: None,
                label: Some(CloudClass5::Cirrus),
            })
            .collect()
    }

    #[test]
    fn default_sigmas() {
        let s = NoiseSpec::default();
        assert_eq!(s.sigma[&BandId::Tb380M18], 5.0);
        assert_eq!(s.sigma[&BandId::Tb250P00], 1.0);
        assert_eq!(s.sigmas(), [1.0, 1.0, 5.0, 5.0, 5.0, 5.0, 5.0, 1.0]);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let p = grid(500);
        assert_eq!(apply_noise(&p, &NoiseSpec::zero(4)).unwrap(), p);
    }

    #[test]
    fn negative_sigma_rejected() {
        let mut s = NoiseSpec::default();
        s.sigma.insert(BandId::Tb670P00, -1.0);
        assert!(matches!(apply_noise(&grid(3), &s), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn empirical_sd_matches_sigma() {
        let p = grid(100_000);
        let spec = NoiseSpec::default().with_seed(17);
        let noisy = apply_noise(&p, &spec).unwrap();
        let sig = spec.sigmas();
        for b in 0..N_BANDS {
            let d: Vec<f64> = noisy.iter().zip(&p).map(|(n, c)| n.radiance.0[b] - c.radiance.0[b]).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
            assert!((sd / sig[b] - 1.0).abs() < 0.02, "band {b}: sd {sd}");
        }
    }

    #[test]
    fn keyed_by_pixel_not_position() {
        let p = grid(300);
        let spec = NoiseSpec::default().with_seed(2);
        let a = apply_noise(&p, &spec).unwrap();
        let mut reversed = p.clone();
        reversed.reverse();
        let mut b = apply_noise(&reversed, &spec).unwrap();
        b.reverse();
        assert_eq!(a, b);
        assert_ne!(a, apply_noise(&p, &spec.clone().with_seed(3)).unwrap());
    }

    #[test]
    fn labels_and_science_untouched() {
        let p = grid(100);
        let noisy = apply_noise(&p, &NoiseSpec::default()).unwrap();
        assert!(noisy.iter().zip(&p).all(|(n, c)| n.label == c.label && n.science == c.science && n.key() == c.key()));
    }

    #[test]
    fn spec_json_uses_band_names() {
        let json = serde_json::to_string(&NoiseSpec::default()).unwrap();
        assert!(json.contains("\"Tb380-0.8\":5.0"), "{json}");
        let back: NoiseSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, NoiseSpec::default());
    }
}
