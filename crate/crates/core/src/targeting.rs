//! Duty-cycle-limited sampling: random selection versus classifier-guided priority.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::predict_all;
use crate::model::{CloudClass5, PixelRecord};
use crate::seed::rng_for;

const K: usize = CloudClass5::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    PredictedClassPriority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetingPolicy {
    pub kind: PolicyKind,
    /// Classes taken in order under `PredictedClassPriority`; ignored by `Random`.
    pub priority: Vec<CloudClass5>,
    /// Duty cycle β in (0, 1].
    pub budget_fraction: f64,
    /// Seed for the random policy.
    pub seed: u64,
}

impl Default for TargetingPolicy {
    fn default() -> Self {
        TargetingPolicy::priority(vec![CloudClass5::ConvectionCore, CloudClass5::RainyAnvil], 0.2)
    }
}

impl TargetingPolicy {
    pub fn random(budget_fraction: f64, seed: u64) -> Self {
        TargetingPolicy { kind: PolicyKind::Random, priority: Vec::new(), budget_fraction, seed }
    }

    pub fn priority(priority: Vec<CloudClass5>, budget_fraction: f64) -> Self {
        TargetingPolicy { kind: PolicyKind::PredictedClassPriority, priority, budget_fraction, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::Config(format!("budget_fraction must be in (0, 1], got {}", self.budget_fraction)));
        }
        if self.kind == PolicyKind::PredictedClassPriority && self.priority.is_empty() {
            return Err(Error::Config("priority policy needs at least one class".into()));
        }
        Ok(())
    }

    pub fn budget(&self, n: usize) -> usize {
        ((self.budget_fraction * n as f64).floor() as usize).min(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldReport {
    pub policy: TargetingPolicy,
    pub n_pixels: usize,
    pub budget: usize,
    pub sampled_count: usize,
    /// True-class counts among sampled pixels, in class order.
    pub sampled_counts: [u64; K],
    /// True-class distribution among sampled pixels (all zero if nothing was sampled).
    pub sampled_distribution: [f64; K],
    pub baseline_distribution: [f64; K],
    /// Sampled fraction over baseline fraction; `None` when either is undefined.
    pub yield_factors: [Option<f64>; K],
}

impl YieldReport {
    pub fn yield_factor(&self, class: CloudClass5) -> Option<f64> {
        self.yield_factors[class.index()]
    }

    /// Pixels of `class` captured per unit of budget.
    pub fn budget_share(&self, class: CloudClass5) -> f64 {
        if self.budget == 0 {
            0.0
        } else {
            self.sampled_counts[class.index()] as f64 / self.budget as f64
        }
    }
}

/// Indices chosen by the policy, in selection order.
pub fn select(predicted: &[CloudClass5], policy: &TargetingPolicy) -> Result<Vec<usize>> {
    policy.validate()?;
    let n = predicted.len();
    let budget = policy.budget(n);
    Ok(match policy.kind {
        PolicyKind::Random => {
            let mut idx = sample(&mut rng_for(policy.seed, &[0x7A26]), n, budget).into_vec();
            idx.sort_unstable();
            idx
        }
        PolicyKind::PredictedClassPriority => {
            let mut chosen = Vec::with_capacity(budget);
            for class in &policy.priority {
                for (i, p) in predicted.iter().enumerate() {
                    if chosen.len() == budget {
                        return Ok(chosen);
                    }
                    if p == class {
                        chosen.push(i);
                    }
                }
            }
            chosen
        }
    })
}

/// Core of the simulation: `truth` scores the selection made from `predicted`.
pub fn simulate_with_predictions(
    truth: &[CloudClass5],
    predicted: &[CloudClass5],
    policy: &TargetingPolicy,
) -> Result<YieldReport> {
    if truth.is_empty() {
        return Err(Error::EmptyInput("no pixels to target".into()));
    }
    assert_eq!(truth.len(), predicted.len(), "truth and predictions differ in length");
    let chosen = select(predicted, policy)?;
    let mut baseline = [0u64; K];
    truth.iter().for_each(|c| baseline[c.index()] += 1);
    let mut sampled_counts = [0u64; K];
    chosen.iter().for_each(|&i| sampled_counts[truth[i].index()] += 1);
    let n = truth.len() as f64;
    let m = chosen.len() as f64;
    let baseline_distribution = baseline.map(|c| c as f64 / n);
    let sampled_distribution = sampled_counts.map(|c| if m > 0.0 { c as f64 / m } else { 0.0 });
    let yield_factors = std::array::from_fn(|c| {
        (baseline[c] > 0 && m > 0.0).then(|| sampled_distribution[c] / baseline_distribution[c])
    });
    Ok(YieldReport {
        policy: policy.clone(),
        n_pixels: truth.len(),
        budget: policy.budget(truth.len()),
        sampled_count: chosen.len(),
        sampled_counts,
        sampled_distribution,
        baseline_distribution,
        yield_factors,
    })
}

pub fn simulate_targeting<C: Classifier + Sync + ?Sized>(
    model: &C,
    pixels: &[PixelRecord],
    policy: &TargetingPolicy,
) -> Result<YieldReport> {
    if pixels.is_empty() {
        return Err(Error::EmptyInput("no pixels to target".into()));
    }
    let truth = Dataset::from_pixels(pixels)?.y;
    let predicted = predict_all(model, pixels);
    simulate_with_predictions(&truth, &predicted, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    /// Ground-truth labels used as predictions.
    pub oracle: YieldReport,
    pub actual: YieldReport,
}

pub fn oracle_vs_actual<C: Classifier + Sync + ?Sized>(
    model: &C,
    pixels: &[PixelRecord],
    policy: &TargetingPolicy,
) -> Result<OracleComparison> {
    if pixels.is_empty() {
        return Err(Error::EmptyInput("no pixels to target".into()));
    }
    let truth = Dataset::from_pixels(pixels)?.y;
    let predicted = predict_all(model, pixels);
    Ok(OracleComparison {
        oracle: simulate_with_predictions(&truth, &truth, policy)?,
        actual: simulate_with_predictions(&truth, &predicted, policy)?,
    })
}

/// `class,random_frac,policy_frac,yield_factor` where the factor is policy over random.
pub fn comparison_csv(random: &YieldReport, policy: &YieldReport) -> String {
    let mut out = String::from("class,random_frac,policy_frac,yield_factor\n");
    for class in CloudClass5::ALL {
        let r = random.sampled_distribution[class.index()];
        let p = policy.sampled_distribution[class.index()];
        let factor = if r > 0.0 { (p / r).to_string() } else { String::new() };
        out.push_str(&format!("{},{},{},{}\n", class.name(), r, p, factor));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;
    use rand::Rng as _;
    use CloudClass5::*;

    fn stream(n: usize, seed: u64, weights: [f64; K]) -> Vec<CloudClass5> {
        let mut r = rng(seed);
        let total: f64 = weights.iter().sum();
        (0..n)
            .map(|_| {
                let mut u = r.random::<f64>() * total;
                for c in CloudClass5::ALL {
                    u -= weights[c.index()];
                    if u < 0.0 {
                        return c;
                    }
                }
                ConvectionCore
            })
            .collect()
    }

    #[test]
    fn random_budget_exact_and_unbiased() {
        let truth = stream(100_000, 1, [0.2; K]);
        let report = simulate_with_predictions(&truth, &truth, &TargetingPolicy::random(0.2, 9)).unwrap();
        assert_eq!(report.sampled_count, 20_000);
        for c in CloudClass5::ALL {
            let f = report.yield_factor(c).unwrap();
            assert!((f - 1.0).abs() < 0.05, "{c}: {f}");
            // Within 3 binomial sd of the baseline.
            let p = report.baseline_distribution[c.index()];
            let sd = (p * (1.0 - p) / 20_000.0).sqrt();
            assert!((report.sampled_distribution[c.index()] - p).abs() < 3.0 * sd);
        }
        let total: f64 = report.sampled_distribution.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_classifier_core_factor_is_inverse_frequency() {
        let truth = stream(5_000, 2, [0.5, 0.2, 0.2, 0.07, 0.03]);
        let storms = truth.iter().filter(|c| c.is_storm()).count();
        let beta = storms as f64 / truth.len() as f64 + 0.05;
        let report = simulate_with_predictions(&truth, &truth, &TargetingPolicy::priority(vec![ConvectionCore], beta)).unwrap();
        let base = report.baseline_distribution[ConvectionCore.index()];
        assert!((report.yield_factor(ConvectionCore).unwrap() - 1.0 / base).abs() < 1e-9);
    }

    #[test]
    fn priority_is_global_then_stream_order() {
        let predicted = vec![RainyAnvil, ClearSky, ConvectionCore, RainyAnvil, ConvectionCore, RainyAnvil, Cirrus, ClearSky, ClearSky, ClearSky];
        let policy = TargetingPolicy::priority(vec![ConvectionCore, RainyAnvil], 0.3);
        assert_eq!(select(&predicted, &policy).unwrap(), vec![2, 4, 0]);
        // Budget larger than storm predictions is left unspent.
        let wide = TargetingPolicy::priority(vec![ConvectionCore, RainyAnvil], 1.0);
        assert_eq!(select(&predicted, &wide).unwrap(), vec![2, 4, 0, 3, 5]);
    }

    #[test]
    fn no_anvil_before_all_cores_taken() {
        for seed in 0..20 {
            let predicted = stream(500, seed, [0.4, 0.1, 0.1, 0.3, 0.1]);
            let chosen = select(&predicted, &TargetingPolicy::default()).unwrap();
            assert!(chosen.len() <= 100);
            if chosen.iter().any(|&i| predicted[i] == RainyAnvil) {
                let cores = predicted.iter().filter(|c| **c == ConvectionCore).count();
                assert_eq!(chosen.iter().filter(|&&i| predicted[i] == ConvectionCore).count(), cores);
            }
        }
    }

    #[test]
    fn constant_nonstorm_predictor_selects_nothing() {
        let truth = stream(1_000, 3, [0.4, 0.1, 0.1, 0.3, 0.1]);
        let predicted = vec![ClearSky; truth.len()];
        let report = simulate_with_predictions(&truth, &predicted, &TargetingPolicy::default()).unwrap();
        assert_eq!(report.sampled_count, 0);
        assert!(report.yield_factors.iter().all(Option::is_none));
    }

    #[test]
    fn oracle_captures_at_least_as_many_cores() {
        for seed in 0..10 {
            let truth = stream(3_000, 10 + seed, [0.4, 0.14, 0.14, 0.28, 0.04]);
            let mut r = rng(100 + seed);
            // A noisy model: correct 70% of the time, otherwise a random class.
            let predicted: Vec<_> = truth
                .iter()
                .map(|&c| if r.random_bool(0.7) { c } else { CloudClass5::from_index(r.random_range(0..K)).unwrap() })
                .collect();
            let policy = TargetingPolicy::default();
            let oracle = simulate_with_predictions(&truth, &truth, &policy).unwrap();
            let actual = simulate_with_predictions(&truth, &predicted, &policy).unwrap();
            assert!(oracle.budget_share(ConvectionCore) >= actual.budget_share(ConvectionCore));
        }
    }

    #[test]
    fn perfect_model_reports_match() {
        let truth = stream(800, 4, [0.4, 0.14, 0.14, 0.28, 0.04]);
        let policy = TargetingPolicy::default();
        assert_eq!(
            simulate_with_predictions(&truth, &truth, &policy).unwrap(),
            simulate_with_predictions(&truth, &truth.clone(), &policy).unwrap()
        );
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(simulate_with_predictions(&[], &[], &TargetingPolicy::default()), Err(Error::EmptyInput(_))));
        let t = vec![ClearSky; 5];
        assert!(simulate_with_predictions(&t, &t, &TargetingPolicy::random(0.0, 0)).is_err());
        assert!(simulate_with_predictions(&t, &t, &TargetingPolicy::priority(vec![], 0.2)).is_err());
    }

    #[test]
    fn comparison_csv_layout() {
        let truth = stream(1_000, 5, [0.4, 0.14, 0.14, 0.28, 0.04]);
        let random = simulate_with_predictions(&truth, &truth, &TargetingPolicy::random(0.2, 1)).unwrap();
        let policy = simulate_with_predictions(&truth, &truth, &TargetingPolicy::default()).unwrap();
        let csv = comparison_csv(&random, &policy);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,random_frac,policy_frac,yield_factor");
        assert_eq!(lines.len(), 6);
        assert!(lines[5].starts_with("ConvectionCore,"));
    }
}
