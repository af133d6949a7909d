use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cloudclass_core::autolabel::{derive_label_map_with, label_pixels, LabelMap};
use cloudclass_core::classifier::{ModelFile, TrainedClassifier, TrainerConfig};
use cloudclass_core::clustering::ClusterModel;
use cloudclass_core::evaluation::{cross_validate, evaluate, make_split, predict_all};
use cloudclass_core::io::{hash_json, read_json, read_pixels, write_json, write_pixels, write_text};
use cloudclass_core::model::PixelRecord;
use cloudclass_core::noise::noise_experiment_with_model;
use cloudclass_core::pipeline::{
    accuracy_table_csv, cluster_pixels, cluster_table_csv, loss_curve_csv, noise_table_csv, predictions_csv,
    run_pipeline, science_points, sweep_csv, PipelineConfig, RunOptions, TargetingOutcome,
};
use cloudclass_core::scenegen::generate_scenes;
use cloudclass_core::seed::derive_named;
use cloudclass_core::targeting::{comparison_csv, simulate_with_predictions, TargetingPolicy};
use cloudclass_core::{Dataset, Error, Result};

/// Radiometer cloud-type classification pipeline.
#[derive(Parser)]
#[command(name = "cloudclass", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes to `pixels.csv`.
    Generate(Common),
    /// Sweep k, fit k-means on science vectors.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pixels: PathBuf,
    },
    /// Label pixels from a cluster model.
    Label {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pixels: PathBuf,
        #[arg(long)]
        cluster_model: PathBuf,
    },
    /// Train one classifier family on the training images of the split plan.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pixels: PathBuf,
        /// rdf, linear_svm, gnb, mlp or cnn; hyperparameters come from the config when listed there.
        #[arg(long)]
        family: String,
    },
    /// Predict classes for every pixel.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pixels: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model on labeled pixels.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pixels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate a family with folds over images.
    Crossval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pixels: PathBuf,
        #[arg(long)]
        family: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Compare clean and noisy accuracy on the test images.
    NoiseTest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pixels: PathBuf,
    },
    /// Simulate duty-cycle-limited targeting on the test images.
    TargetSim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pixels: PathBuf,
    },
    /// Run every stage and write a manifest.
    Run {
        #[command(flatten)]
        common: Common,
        /// Stop after this stage.
        #[arg(long)]
        stage: Option<String>,
    },
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn trainer_for(cfg: &PipelineConfig, family: &str) -> Result<TrainerConfig> {
    let wanted = TrainerConfig::default_for(family)?;
    Ok(cfg.trainers.iter().find(|t| t.family() == wanted.family()).cloned().unwrap_or(wanted))
}

fn read_model(path: &Path) -> Result<ModelFile> {
    let model: ModelFile = read_json(path)?;
    model.check_compatible()?;
    Ok(model)
}

/// Test pixels under the config's split plan.
fn test_pixels(cfg: &PipelineConfig, pixels: &[PixelRecord]) -> Result<Vec<PixelRecord>> {
    let split = make_split(pixels, &cfg.split_plan(&cfg.scene_config()?))?;
    split.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
    Ok(if split.test.is_empty() { split.train } else { split.test })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = load_config(&c)?;
            let scene = cfg.scene_config()?;
            let pixels: Vec<PixelRecord> = generate_scenes(&scene)?.into_iter().flat_map(|s| s.pixels).collect();
            write_json(&c.out.join("scenegen.json"), &scene)?;
            write_pixels(&c.out.join("pixels.csv"), &pixels)
        }
        Command::Cluster { common: c, pixels } => {
            let cfg = load_config(&c)?;
            let outcome = cluster_pixels(&read_pixels(&pixels)?, &cfg.clustering, cfg.stage_seed("cluster"))?;
            outcome.model.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            write_text(&c.out.join("sweep.csv"), &sweep_csv(&outcome.sweep))?;
            write_json(&c.out.join("model.json"), &outcome.model)?;
            println!("k = {}", outcome.chosen_k);
            Ok(())
        }
        Command::Label { common: c, pixels, cluster_model } => {
            let cfg = load_config(&c)?;
            let pixels = read_pixels(&pixels)?;
            let model: ClusterModel = read_json(&cluster_model)?;
            let map: LabelMap = derive_label_map_with(&model, &science_points(&pixels)?, cfg.labeling.zero_epsilon)?;
            map.warnings.iter().chain(&map.monotonicity_warnings).for_each(|w| eprintln!("warning: {w}"));
            write_json(&c.out.join("label_map.json"), &map)?;
            write_text(&c.out.join("clusters.csv"), &cluster_table_csv(&map))?;
            write_pixels(&c.out.join("pixels.csv"), &label_pixels(&model, &map, &pixels)?)
        }
        Command::Train { common: c, pixels, family } => {
            let cfg = load_config(&c)?;
            let trainer = trainer_for(&cfg, &family)?;
            let split = make_split(&read_pixels(&pixels)?, &cfg.split_plan(&cfg.scene_config()?))?;
            split.warnings.iter().for_each(|w| eprintln!("warning: {w}"));
            let seed = derive_named(cfg.stage_seed("train"), trainer.family());
            let model = ModelFile::train(&trainer, &Dataset::from_pixels(&split.train)?, seed)?;
            if let TrainedClassifier::Nn(nn) = &model.parameters {
                write_text(&c.out.join(format!("{}_loss.csv", model.family)), &loss_curve_csv(&nn.loss_curve))?;
            }
            write_json(&c.out.join(format!("{}.json", model.family)), &model)
        }
        Command::Predict { model, pixels, out } => {
            let model = read_model(&model)?;
            let pixels = read_pixels(&pixels)?;
            write_text(&out, &predictions_csv(&pixels, &predict_all(&model, &pixels)))
        }
        Command::Evaluate { model, pixels, out } => {
            let model = read_model(&model)?;
            let mut report = evaluate(&model, &read_pixels(&pixels)?)?;
            report.metadata.model_hash = Some(hash_json(&model));
            write_json(&out.join("report.json"), &report)?;
            write_text(&out.join("confusion5.csv"), &report.matrix5.to_csv())?;
            write_text(&out.join("confusion3.csv"), &report.matrix3.to_csv())?;
            write_text(&out.join("confusion2.csv"), &report.matrix2.to_csv())?;
            let table = accuracy_table_csv(&[(model.family.clone(), report)]);
            print!("{table}");
            write_text(&out.join("accuracy.csv"), &table)
        }
        Command::Crossval { common: c, pixels, family, folds } => {
            let cfg = load_config(&c)?;
            let trainer = trainer_for(&cfg, &family)?;
            let report = cross_validate(&trainer, &read_pixels(&pixels)?, folds, cfg.stage_seed("crossval"))?;
            let mut summary = String::from("metric,mean,sd,folds\n");
            for (k, v) in &report.summary {
                summary.push_str(&format!("{k},{},{},{}\n", v.mean, v.sd, v.n));
            }
            print!("{summary}");
            write_text(&c.out.join("crossval.csv"), &summary)?;
            write_json(&c.out.join("crossval.json"), &report)
        }
        Command::NoiseTest { common: c, model, pixels } => {
            let cfg = load_config(&c)?;
            let model = read_model(&model)?;
            let test = test_pixels(&cfg, &read_pixels(&pixels)?)?;
            let spec = cfg.noise.clone().with_seed(cfg.stage_seed("noise-test"));
            let report = noise_experiment_with_model(&model, &test, &spec)?;
            let table = noise_table_csv(&[(model.family.clone(), report.clone())]);
            print!("{table}");
            write_text(&c.out.join("noise.csv"), &table)?;
            write_json(&c.out.join("noise.json"), &report)
        }
        Command::TargetSim { common: c, model, pixels } => {
            let cfg = load_config(&c)?;
            let model = read_model(&model)?;
            let test = test_pixels(&cfg, &read_pixels(&pixels)?)?;
            let truth = Dataset::from_pixels(&test)?.y;
            let predicted = predict_all(&model, &test);
            let random = TargetingPolicy::random(cfg.targeting.budget_fraction, cfg.stage_seed("target-sim"));
            let random = simulate_with_predictions(&truth, &truth, &random)?;
            let policy = simulate_with_predictions(&truth, &predicted, &cfg.targeting)?;
            let oracle = simulate_with_predictions(&truth, &truth, &cfg.targeting)?;
            let table = comparison_csv(&random, &policy);
            print!("{table}");
            write_text(&c.out.join("targeting.csv"), &table)?;
            write_text(&c.out.join("oracle.csv"), &comparison_csv(&random, &oracle))?;
            write_json(&c.out.join("report.json"), &TargetingOutcome { random, policy, oracle })
        }
        Command::Run { common: c, stage } => {
            let cfg = load_config(&c)?;
            let outcome = run_pipeline(&cfg, &c.out, &RunOptions { until: stage })?;
            if let Some(m) = outcome.manifest {
                for s in &m.stages {
                    println!("{:<11} {} artifact(s)", s.name, s.artifacts.len());
                    s.warnings.iter().for_each(|w| eprintln!("warning [{}]: {w}", s.name));
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::ConfigSchema { .. } | Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
