//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failures are reported, not fatal, unless `ACCEPTANCE_STRICT=1` is set.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use cloudclass_core::classic::{train_gnb, train_rdf, ForestParams, GnbParams};
use cloudclass_core::classic::forest::Node;
use cloudclass_core::clustering::{fit_kmeans, silhouette_score, Standardizer};
use cloudclass_core::model::{CloudClass5, RadianceVector, ScienceVector, N_BANDS};
use cloudclass_core::neural::{gradient_check, Architecture, Network, NnParams};
use cloudclass_core::noise::{noise_experiment_with_model, NoiseSpec};
use cloudclass_core::pipeline::{run_pipeline, PipelineConfig, RunOptions, RunOutcome, MANIFEST_FILE};
use cloudclass_core::seed::rng;
use cloudclass_core::targeting::{simulate_targeting, TargetingPolicy};
use cloudclass_core::{Classifier, Dataset};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};

const TROPICAL: &str = r#"{
    "seed": 2023,
    "scenegen": { "preset": "Tropical" },
    "trainers": [{ "family": "rdf", "n_trees": 32, "max_depth": 14, "max_features": 3, "bootstrap": true, "balanced": true }]
}"#;

/// Full non-tropical geometry is 29 × 1998×270; the crop keeps the class mix.
const NONTROPICAL: &str = r#"{
    "seed": 2023,
    "scenegen": { "preset": "NonTropical", "height": 222, "width": 90 },
    "trainers": [
        { "family": "rdf", "n_trees": 32, "max_depth": 14, "max_features": 3, "bootstrap": true, "balanced": true },
        { "family": "mlp", "epochs": 10, "batch_size": 256, "lr": 0.001, "hidden": 32, "dropout": 0.1,
          "activation": "relu", "class_weighting": false, "standardize_inputs": false }
    ]
}"#;

struct Line {
    id: usize,
    pass: bool,
    detail: String,
    secs: f64,
    budget: f64,
}

fn check(id: usize, budget: f64, secs: f64, pass: bool, detail: String) -> Line {
    Line { id, pass: pass && secs < budget, detail, secs, budget }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn gnb_closed_form() -> (bool, String) {
    // Class A at {0, 2}, class B at {2, 4} on every band: means 1 and 3, variance 1,
    // equal priors, so the log-odds at x is Σ_b (μA − μB)(x − (μA + μB)/2) = 8 at x = 1.5.
    let x = vec![[0.0; N_BANDS], [2.0; N_BANDS], [2.0; N_BANDS], [4.0; N_BANDS]];
    let y = vec![CloudClass5::Cirrus, CloudClass5::Cirrus, CloudClass5::RainyAnvil, CloudClass5::RainyAnvil];
    let model = train_gnb(&Dataset::new(x, y), &GnbParams::default()).unwrap();
    let p = model.predict(&RadianceVector([1.5; N_BANDS]));
    let got = p.scores[CloudClass5::Cirrus.index()].exp();
    let want = 1.0 / (1.0 + (-8.0f64).exp());
    let mid = model.predict(&RadianceVector([2.0; N_BANDS])).scores[CloudClass5::Cirrus.index()].exp();
    let err = (got - want).abs().max((mid - 0.5).abs());
    (err < 1e-9, format!("gnb err {err:.1e}"))
}

fn silhouette_fixture() -> (bool, String) {
    let xs: [f64; 6] = [0.0, 0.1, 0.2, 10.0, 10.1, 10.2];
    let mut want = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let (own, other) = if i < 3 { (&xs[..3], &xs[3..]) } else { (&xs[3..], &xs[..3]) };
        let a = own.iter().map(|y| (x - y).abs()).sum::<f64>() / 2.0;
        let b = other.iter().map(|y| (x - y).abs()).sum::<f64>() / 3.0;
        want += (b - a) / a.max(b);
    }
    want /= 6.0;
    let pts: Vec<ScienceVector> = xs.iter().map(|&x| ScienceVector::new(x, 0.0, 0.0)).collect();
    let got = silhouette_score(&pts, &[0, 0, 0, 1, 1, 1], 100, 0).unwrap();
    let err = (got - want).abs();
    (err < 1e-9, format!("silhouette err {err:.1e}"))
}

fn kmeans_exhaustive() -> (bool, String) {
    let pts = [
        ScienceVector::new(1.0, 10.0, 100.0),
        ScienceVector::new(1.2, 11.0, 110.0),
        ScienceVector::new(0.9, 9.5, 95.0),
        ScienceVector::new(8.0, 60.0, 900.0),
        ScienceVector::new(8.5, 62.0, 910.0),
        ScienceVector::new(7.7, 59.0, 880.0),
    ];
    let (scaler, _) = Standardizer::fit(&pts);
    let z: Vec<[f64; 3]> = pts.iter().map(|p| scaler.apply(p)).collect();
    let sse = |idx: &[usize]| {
        let n = idx.len() as f64;
        let mean: [f64; 3] = std::array::from_fn(|d| idx.iter().map(|&i| z[i][d]).sum::<f64>() / n);
        idx.iter().map(|&i| (0..3).map(|d| (z[i][d] - mean[d]).powi(2)).sum::<f64>()).sum::<f64>()
    };
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << 5) {
        let (a, b): (Vec<usize>, Vec<usize>) = (0..6).partition(|i| mask >> i & 1 == 1);
        best = best.min(sse(&a) + sse(&b));
    }
    let model = fit_kmeans(&pts, 2, 17).unwrap();
    let err = (model.inertia - best).abs();
    (err < 1e-9, format!("k-means inertia err {err:.1e}"))
}

fn rdf_stump() -> (bool, String) {
    let mut r = rng(3);
    let noise = Normal::new(0.0, 1.5).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (c, class) in [CloudClass5::ClearSky, CloudClass5::Cirrus, CloudClass5::ConvectionCore].into_iter().enumerate() {
        for _ in 0..15 {
            x.push(std::array::from_fn(|b| (c * (b % 3 + 1)) as f64 * 2.0 + noise.sample(&mut r)));
            y.push(class);
        }
    }
    let data = Dataset::new(x, y);
    let gini = |idx: &[usize]| {
        let mut h = [0.0; CloudClass5::COUNT];
        idx.iter().for_each(|&i| h[data.y[i].index()] += 1.0);
        let n = idx.len() as f64;
        1.0 - h.iter().map(|c| (c / n).powi(2)).sum::<f64>()
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let mut best = (f64::NEG_INFINITY, 0, 0.0);
    for band in 0..N_BANDS {
        let mut vals: Vec<f64> = data.x.iter().map(|r| r[band]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let (l, rr): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| data.x[i][band] <= t);
            let n = data.len() as f64;
            let gain = gini(&all) - l.len() as f64 / n * gini(&l) - rr.len() as f64 / n * gini(&rr);
            if gain > best.0 {
                best = (gain, band, t);
            }
        }
    }
    let params = ForestParams { n_trees: 1, max_depth: 1, max_features: N_BANDS, bootstrap: false, balanced: false };
    let model = train_rdf(&data, &params, 0).unwrap();
    let ok = match &model.trees[0].nodes[0] {
        Node::Split { band, threshold, .. } => *band == best.1 && (threshold - best.2).abs() < 1e-9,
        Node::Leaf { .. } => false,
    };
    (ok, format!("stump band {} t {:.4}", best.1, best.2))
}

fn criterion1() -> Line {
    let (results, secs) = timed(|| [gnb_closed_form(), silhouette_fixture(), kmeans_exhaustive(), rdf_stump()]);
    let pass = results.iter().all(|(p, _)| *p);
    let detail = results.iter().map(|(_, d)| d.as_str()).collect::<Vec<_>>().join("; ");
    check(1, 10.0, secs, pass, detail)
}

fn criterion2() -> Line {
    let ((worst, checked, skipped), secs) = timed(|| {
        let (mut worst, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
        let mut fraction_ok = true;
        for arch in [Architecture::Mlp, Architecture::Cnn] {
            for seed in 0..5u64 {
                let mut net = Network::build(arch, &NnParams::default());
                net.init_he_uniform(&mut rng(1000 + seed));
                let mut r = rng(2000 + seed);
                let bias = Uniform::new(-0.1, 0.1).unwrap();
                for layer in &mut net.layers {
                    if let Some((_, b)) = layer.params_mut() {
                        b.values.iter_mut().for_each(|v| *v = bias.sample(&mut r));
                    }
                }
                let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..N_BANDS).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
                let ys: Vec<CloudClass5> = (0..6).map(|i| CloudClass5::from_index((i + seed as usize) % 5).unwrap()).collect();
                let g = gradient_check(&net, &xs, &ys, 1e-4);
                worst = worst.max(g.max_rel_error);
                checked += g.checked;
                skipped += g.skipped_at_kinks;
                fraction_ok &= g.skipped_at_kinks * 10 <= g.checked + g.skipped_at_kinks;
            }
        }
        (if fraction_ok { worst } else { f64::INFINITY }, checked, skipped)
    });
    check(
        2,
        60.0,
        secs,
        worst < 1e-3,
        format!("max rel err {worst:.2e} over {checked} params; {skipped} skipped at ReLU kinks"),
    )
}

fn run(cfg: &str, dir: &Path) -> (RunOutcome, f64) {
    let cfg = PipelineConfig::from_json_str(cfg).expect("acceptance config parses");
    let (out, secs) = timed(|| run_pipeline(&cfg, dir, &RunOptions::default()));
    (out.unwrap_or_else(|e| panic!("pipeline failed: {e}")), secs)
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut lines = vec![criterion1(), criterion2()];

    let (trop, trop_secs) = run(TROPICAL, &dir.path().join("tropical-a"));
    println!("tropical pipeline: {trop_secs:.1} s");
    let (nontrop, nontrop_secs) = run(NONTROPICAL, &dir.path().join("nontropical"));
    println!("non-tropical pipeline: {nontrop_secs:.1} s");

    // 3: labeling fidelity and silhouette curve.
    {
        let agreement = trop.label_agreement.unwrap_or(0.0);
        let sweep = &trop.cluster.as_ref().expect("cluster stage ran").sweep;
        let score = |k: usize| sweep.iter().find(|p| p.k == k).map(|p| p.score);
        let s5 = score(5).unwrap_or(f64::NAN);
        let local_max = s5 > score(4).unwrap_or(f64::NEG_INFINITY) && s5 > score(6).unwrap_or(f64::NEG_INFINITY);
        let curve: Vec<String> = sweep.iter().map(|p| format!("{}:{:.3}", p.k, p.score)).collect();
        lines.push(check(
            3,
            300.0,
            trop_secs,
            agreement >= 0.95 && local_max && s5 >= 0.6,
            format!("agreement {agreement:.4}; silhouette {}", curve.join(" ")),
        ));
    }

    // 4: two-class recalls and the tropical/non-tropical ordering.
    let trop_rdf = &trop.reports[0].1;
    let nt_rdf = &nontrop.reports[0].1;
    {
        let (tn, ts) = (trop_rdf.nonstorm_recall.unwrap_or(0.0), trop_rdf.storm_recall.unwrap_or(0.0));
        let (nn, ns) = (nt_rdf.nonstorm_recall.unwrap_or(0.0), nt_rdf.storm_recall.unwrap_or(0.0));
        lines.push(check(
            4,
            600.0,
            trop_secs + nontrop_secs,
            tn >= 0.80 && ts >= 0.75 && nn >= 0.85 && ns < ts,
            format!("tropical nonstorm {tn:.3} storm {ts:.3}; non-tropical nonstorm {nn:.3} storm {ns:.3}"),
        ));
    }

    // 5: unweighted MLP collapses, balanced RDF does not.
    {
        let mlp = &nontrop.reports[1].1;
        let (ms, rs) = (mlp.storm_recall.unwrap_or(0.0), nt_rdf.storm_recall.unwrap_or(0.0));
        lines.push(check(
            5,
            600.0,
            nontrop_secs,
            ms < 0.2 && rs > 0.4,
            format!("mlp storm {ms:.3} (nonstorm {:.3}); rdf storm {rs:.3}", mlp.nonstorm_recall.unwrap_or(0.0)),
        ));
    }

    // 6: noise robustness.
    {
        let model = &trop.models[0];
        let ((default_delta, zero_delta), secs) = timed(|| {
            let noisy = noise_experiment_with_model(model, &trop.test_pixels, &NoiseSpec::default().with_seed(11)).unwrap();
            let zero = noise_experiment_with_model(model, &trop.test_pixels, &NoiseSpec::zero(11)).unwrap();
            (noisy.delta, zero.delta)
        });
        lines.push(check(
            6,
            300.0,
            secs,
            default_delta <= 0.10 && zero_delta == 0.0,
            format!("3-class accuracy drop {:.2} pp (default), {} (zero sigma)", default_delta * 100.0, zero_delta),
        ));
    }

    // 7: targeting yield, sampling each predicted class on its own.
    {
        let model = &trop.models[0];
        let test = &trop.test_pixels;
        let (r, secs) = timed(|| {
            let core = simulate_targeting(model, test, &TargetingPolicy::priority(vec![CloudClass5::ConvectionCore], 0.2)).unwrap();
            let anvil = simulate_targeting(model, test, &TargetingPolicy::priority(vec![CloudClass5::RainyAnvil], 0.2)).unwrap();
            let combined = simulate_targeting(model, test, &TargetingPolicy::default()).unwrap();
            (core, anvil, combined)
        });
        let (core, anvil, combined) = r;
        let t = trop.targeting.as_ref().expect("target stage ran");
        let cc = CloudClass5::ConvectionCore;
        let cf = core.yield_factor(cc).unwrap_or(0.0);
        let af = anvil.yield_factor(CloudClass5::RainyAnvil).unwrap_or(0.0);
        let (oracle_share, actual_share) = (t.oracle.budget_share(cc), t.policy.budget_share(cc));
        lines.push(check(
            7,
            300.0,
            secs,
            cf > 5.0 && af > 1.5 && oracle_share >= actual_share,
            format!(
                "core factor {cf:.2}, anvil factor {af:.2}; core share of budget oracle {oracle_share:.3} >= actual {actual_share:.3}; \
                 combined core-then-anvil core factor {:.2} (at most 1/beta = 5 once the budget fills)",
                combined.yield_factor(cc).unwrap_or(0.0)
            ),
        ));
    }

    // 8: determinism of a full rerun.
    {
        let (_, rerun_secs) = run(TROPICAL, &dir.path().join("tropical-b"));
        let a = std::fs::read(dir.path().join("tropical-a").join(MANIFEST_FILE)).unwrap();
        let b = std::fs::read(dir.path().join("tropical-b").join(MANIFEST_FILE)).unwrap();
        lines.push(check(
            8,
            2.0 * trop_secs,
            rerun_secs,
            a == b,
            format!("manifests {} ({} bytes)", if a == b { "identical" } else { "differ" }, a.len()),
        ));
    }

    for l in &lines {
        println!(
            "criterion {}: {} ({:.1} s, budget {:.0} s) {}",
            l.id,
            if l.pass { "PASS" } else { "FAIL" },
            l.secs,
            l.budget,
            l.detail
        );
    }
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("{passed}/{} criteria passed", lines.len());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < lines.len() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
