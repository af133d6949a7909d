//! End-to-end runner: config loading, the seven stages, artifacts and the manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autolabel::{derive_label_map_with, label_pixels, LabelMap, DEFAULT_ZERO_EPSILON};
use crate::classifier::{ModelFile, TrainedClassifier, TrainerConfig};
use crate::clustering::{fit_kmeans, sweep_k, ClusterModel, SweepPoint, DEFAULT_SAMPLE_CAP};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, make_split, predict_all, EvalReport, SplitPlan};
use crate::io::{hash_json, sha256_hex, to_json_string, write_pixels_to};
use crate::model::{CloudClass5, PixelRecord, Region, ScienceVector};
use crate::noise::{noise_experiment_with_model, NoiseReport, NoiseSpec};
use crate::scenegen::{generate_scenes, SceneGenConfig};
use crate::seed::{derive, derive_named};
use crate::targeting::{comparison_csv, simulate_with_predictions, TargetingPolicy, YieldReport};

pub const STAGES: [&str; 7] = ["generate", "cluster", "label", "train", "evaluate", "noise-test", "target-sim"];
pub const LOCK_FILE: &str = ".cloudclass.lock";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Where the scene generator settings come from; exactly one source must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenegenSection {
    pub preset: Option<Region>,
    /// Path to a generator config, relative to the pipeline config file.
    pub file: Option<PathBuf>,
    pub config: Option<SceneGenConfig>,
    pub images: Option<usize>,
    /// Crop to this height and width, keeping the expected class mix.
    pub height: Option<usize>,
    pub width: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringSection {
    pub k_min: usize,
    pub k_max: usize,
    pub sample_cap: usize,
    /// Fixed k; when absent the sweep's best silhouette wins.
    pub k: Option<usize>,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        ClusteringSection { k_min: 2, k_max: 8, sample_cap: DEFAULT_SAMPLE_CAP, k: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelingSection {
    pub zero_epsilon: f64,
}

impl Default for LabelingSection {
    fn default() -> Self {
        LabelingSection { zero_epsilon: DEFAULT_ZERO_EPSILON }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scenegen: ScenegenSection,
    #[serde(default)]
    pub clustering: ClusteringSection,
    #[serde(default)]
    pub labeling: LabelingSection,
    /// Families to train; the first one drives the noise test and targeting.
    #[serde(default = "default_trainers")]
    pub trainers: Vec<TrainerConfig>,
    pub split: Option<SplitPlan>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub targeting: TargetingPolicy,
}

fn default_trainers() -> Vec<TrainerConfig> {
    vec![TrainerConfig::default_for("rdf").expect("rdf is a known family")]
}

fn schema(pointer: &str, msg: impl Into<String>) -> Error {
    Error::ConfigSchema { pointer: pointer.to_string(), msg: msg.into() }
}

/// `a.b[2].c` to `/a/b/2/c`.
fn json_pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            serde_path_to_error::Segment::Seq { index } => out.push_str(&format!("/{index}")),
            serde_path_to_error::Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            serde_path_to_error::Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            serde_path_to_error::Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

impl PipelineConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: PipelineConfig =
            serde_path_to_error::deserialize(de).map_err(|e| schema(&json_pointer(e.path()), e.inner().to_string()))?;
        Ok(cfg)
    }

    /// Parses and validates; relative scenegen files resolve against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text)?;
        if let Some(file) = &cfg.scenegen.file {
            if file.is_relative() {
                cfg.scenegen.file = Some(path.parent().unwrap_or(Path::new(".")).join(file));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let scene = self.scene_config()?;
        if self.clustering.k_min < 2 || self.clustering.k_max < self.clustering.k_min {
            return Err(schema("/clustering", "need 2 <= k_min <= k_max"));
        }
        if let Some(k) = self.clustering.k {
            if k < 2 {
                return Err(schema("/clustering/k", "k must be at least 2"));
            }
        }
        if self.clustering.sample_cap < 2 {
            return Err(schema("/clustering/sample_cap", "sample cap must be at least 2"));
        }
        if !(self.labeling.zero_epsilon >= 0.0) {
            return Err(schema("/labeling/zero_epsilon", "must be nonnegative"));
        }
        if self.trainers.is_empty() {
            return Err(schema("/trainers", "at least one trainer is required"));
        }
        for (i, t) in self.trainers.iter().enumerate() {
            if self.trainers[..i].iter().any(|u| u.family() == t.family()) {
                return Err(schema(&format!("/trainers/{i}"), format!("family `{}` listed twice", t.family())));
            }
        }
        let plan = self.split_plan(&scene);
        plan.validate().map_err(|e| schema("/split", e.to_string()))?;
        if let Some(id) = plan.train_image_ids.iter().chain(&plan.test_image_ids).find(|&&id| id == 0 || id as usize > scene.images) {
            return Err(schema("/split", format!("image {id} is outside 1..={}", scene.images)));
        }
        self.noise.validate().map_err(|e| schema("/noise", e.to_string()))?;
        self.targeting.validate().map_err(|e| schema("/targeting", e.to_string()))?;
        Ok(())
    }

    /// Generator settings after presets, files and overrides; the seed comes from the global seed.
    pub fn scene_config(&self) -> Result<SceneGenConfig> {
        let s = &self.scenegen;
        let sources = [s.preset.is_some(), s.file.is_some(), s.config.is_some()];
        if sources.iter().filter(|&&b| b).count() != 1 {
            return Err(schema("/scenegen", "set exactly one of `preset`, `file`, `config`"));
        }
        let mut cfg = if let Some(region) = s.preset {
            SceneGenConfig::default_for(region)
        } else if let Some(file) = &s.file {
            let text = fs::read_to_string(file).map_err(|e| schema("/scenegen/file", format!("{}: {e}", file.display())))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de)
                .map_err(|e| schema(&format!("/scenegen/file{}", json_pointer(e.path())), e.inner().to_string()))?
        } else {
            s.config.clone().expect("checked above")
        };
        if s.height.is_some() || s.width.is_some() {
            cfg = cfg.cropped(s.height.unwrap_or(cfg.height), s.width.unwrap_or(cfg.width));
        }
        if let Some(images) = s.images {
            cfg.images = images;
        }
        cfg.seed = derive_named(self.seed, "generate");
        cfg.validate().map_err(|e| schema("/scenegen", e.to_string()))?;
        Ok(cfg)
    }

    /// The configured plan, else the regional default when the image count
    /// matches it, else about three quarters of the images for training and
    /// at least one held out when there are two or more.
    pub fn split_plan(&self, scene: &SceneGenConfig) -> SplitPlan {
        if let Some(plan) = &self.split {
            return plan.clone();
        }
        let default = SplitPlan::default_for(scene.region);
        if default.train_image_ids.len() + default.test_image_ids.len() == scene.images {
            return default;
        }
        let n = scene.images as u32;
        let n_train = ((n as f64 * 0.75).round() as u32).min(n.saturating_sub(1)).max(1);
        SplitPlan::new(Some(scene.region), 1..=n_train, n_train + 1..=n)
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_named(self.seed, stage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub name: String,
    pub seed: u64,
    /// Relative path to SHA-256 of the bytes written.
    pub artifacts: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_sha256: String,
    pub stages: Vec<StageEntry>,
}

/// Writes files under the artifact directory and records their hashes.
struct ArtifactWriter<'a> {
    root: &'a Path,
    entry: StageEntry,
}

impl ArtifactWriter<'_> {
    fn bytes(&mut self, rel: &str, data: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, data).map_err(|e| Error::io(&path, e))?;
        self.entry.artifacts.insert(rel.to_string(), sha256_hex(data));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.bytes(rel, to_json_string(value).as_bytes())
    }

    fn pixels(&mut self, rel: &str, pixels: &[PixelRecord]) -> Result<()> {
        let mut buf = Vec::new();
        write_pixels_to(&mut buf, pixels).map_err(|e| Error::Schema { path: self.root.join(rel), msg: e.to_string() })?;
        self.bytes(rel, &buf)
    }
}

/// Held for the duration of a run; removed on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(File { .. }) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Config(format!("{} is locked by another run (remove {} if stale)", dir.display(), path.display())))
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutcome {
    pub sweep: Vec<SweepPoint>,
    pub chosen_k: usize,
    pub model: ClusterModel,
}

pub fn science_points(pixels: &[PixelRecord]) -> Result<Vec<ScienceVector>> {
    let missing: Vec<usize> = pixels.iter().enumerate().filter(|(_, p)| p.science.is_none()).map(|(i, _)| i).collect();
    if !missing.is_empty() {
        return Err(Error::MissingScience(missing));
    }
    Ok(pixels.iter().map(|p| p.science.expect("checked above")).collect())
}

/// Sweep k, then refit the chosen k with the same sub-seed the sweep used.
pub fn cluster_pixels(pixels: &[PixelRecord], section: &ClusteringSection, seed: u64) -> Result<ClusterOutcome> {
    let points = science_points(pixels)?;
    let k_max = section.k_max.min(points.len().saturating_sub(1));
    let sweep = sweep_k(&points, section.k_min..=k_max, section.sample_cap, seed)?;
    let chosen_k = match section.k {
        Some(k) => k,
        None => sweep.iter().fold(sweep[0], |best, p| if p.score > best.score { *p } else { best }).k,
    };
    let model = fit_kmeans(&points, chosen_k, derive(seed, &[chosen_k as u64]))?;
    Ok(ClusterOutcome { sweep, chosen_k, model })
}

pub fn loss_curve_csv(curve: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn accuracy_table_csv(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::from("family,accuracy5,accuracy3,accuracy2");
    for c in CloudClass5::ALL {
        out.push_str(&format!(",recall_{}", c.name()));
    }
    out.push_str(",nonstorm_recall,storm_recall\n");
    for (family, r) in rows {
        out.push_str(&format!("{family},{},{},{}", r.accuracy5, r.accuracy3, r.accuracy2));
        for v in &r.recalls5 {
            out.push_str(&format!(",{}", opt(*v)));
        }
        out.push_str(&format!(",{},{}\n", opt(r.nonstorm_recall), opt(r.storm_recall)));
    }
    out
}

pub fn noise_table_csv(rows: &[(String, NoiseReport)]) -> String {
    let mut out = String::from("family,clean_accuracy3,noisy_accuracy3,delta\n");
    for (family, r) in rows {
        out.push_str(&format!("{family},{},{},{}\n", r.clean.accuracy3, r.noisy.accuracy3, r.delta));
    }
    out
}

/// Per-class pixel counts for planted and cluster-derived labels.
pub fn class_table_csv(planted: &[PixelRecord], labeled: &[PixelRecord]) -> String {
    let count = |ps: &[PixelRecord]| {
        let mut c = [0u64; CloudClass5::COUNT];
        ps.iter().filter_map(|p| p.label).for_each(|l| c[l.index()] += 1);
        c
    };
    let (a, b) = (count(planted), count(labeled));
    let n = labeled.len().max(1) as f64;
    let mut out = String::from("class,planted_pixels,labeled_pixels,labeled_fraction\n");
    for c in CloudClass5::ALL {
        out.push_str(&format!("{},{},{},{}\n", c.name(), a[c.index()], b[c.index()], b[c.index()] as f64 / n));
    }
    out
}

pub fn cluster_table_csv(map: &LabelMap) -> String {
    let mut out = String::from("cluster,label,members,iwp,particle_size,cloud_top_height\n");
    for d in &map.diagnostics {
        let c = d.centroid;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            d.cluster,
            d.label.name(),
            d.members,
            c.iwp,
            c.particle_size,
            c.cloud_top_height
        ));
    }
    out
}

pub fn sweep_csv(sweep: &[SweepPoint]) -> String {
    let mut out = String::from("k,silhouette\n");
    sweep.iter().for_each(|p| out.push_str(&format!("{},{}\n", p.k, p.score)));
    out
}

pub fn predictions_csv(pixels: &[PixelRecord], predicted: &[CloudClass5]) -> String {
    let mut out = String::from("image_id,row,col,predicted\n");
    for (p, c) in pixels.iter().zip(predicted) {
        out.push_str(&format!("{},{},{},{}\n", p.image_id, p.row, p.col, c.name()));
    }
    out
}

/// Fraction of pixels whose label matches a reference labeling, keyed by position.
pub fn label_agreement(reference: &[PixelRecord], labeled: &[PixelRecord]) -> Option<f64> {
    let pairs: Vec<bool> = reference
        .iter()
        .zip(labeled)
        .filter_map(|(r, l)| Some(r.label? == l.label?))
        .collect();
    (!pairs.is_empty()).then(|| pairs.iter().filter(|&&b| b).count() as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetingOutcome {
    pub random: YieldReport,
    pub policy: YieldReport,
    pub oracle: YieldReport,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop after this stage.
    pub until: Option<String>,
}

/// Everything a run produced, for callers that want values rather than files.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub manifest: Option<Manifest>,
    pub label_agreement: Option<f64>,
    pub cluster: Option<ClusterOutcome>,
    pub models: Vec<ModelFile>,
    pub reports: Vec<(String, EvalReport)>,
    pub noise: Vec<(String, NoiseReport)>,
    pub targeting: Option<TargetingOutcome>,
    /// Pixels the evaluate, noise and targeting stages scored.
    pub test_pixels: Vec<PixelRecord>,
}

fn in_stage<T>(stage: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage: stage.to_string(), source: Box::new(e) })
}

/// Runs the stages in order into `out`, writing artifacts and `manifest.json`.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let last = match &opts.until {
        Some(s) => STAGES.iter().position(|x| x == s).ok_or_else(|| {
            Error::Config(format!("unknown stage `{s}`; expected one of {}", STAGES.join(", ")))
        })?,
        None => STAGES.len() - 1,
    };
    let _lock = DirLock::acquire(out)?;
    let config_text = to_json_string(cfg);
    let mut manifest = Manifest { seed: cfg.seed, config_sha256: sha256_hex(config_text.as_bytes()), stages: Vec::new() };
    fs::write(out.join("config.json"), &config_text).map_err(|e| Error::io(out.join("config.json"), e))?;

    let mut result = RunOutcome::default();
    let scene = cfg.scene_config()?;
    let plan = cfg.split_plan(&scene);
    let mut planted = Vec::new();
    let mut labeled = Vec::new();
    let mut split = None;

    for (i, &stage) in STAGES.iter().enumerate().take(last + 1) {
        let seed = cfg.stage_seed(stage);
        let mut w = ArtifactWriter {
            root: out,
            entry: StageEntry { name: stage.to_string(), seed, artifacts: BTreeMap::new(), warnings: Vec::new() },
        };
        let r: Result<()> = (|| {
            match i {
                0 => {
                    let scenes = generate_scenes(&scene)?;
                    planted = scenes.into_iter().flat_map(|s| s.pixels).collect();
                    w.json("generate/scenegen.json", &scene)?;
                    w.pixels("generate/pixels.csv", &planted)?;
                }
                1 => {
                    let c = cluster_pixels(&planted, &cfg.clustering, seed)?;
                    w.entry.warnings.extend(c.model.warnings.iter().cloned());
                    w.bytes("cluster/sweep.csv", sweep_csv(&c.sweep).as_bytes())?;
                    w.json("cluster/model.json", &c.model)?;
                    result.cluster = Some(c);
                }
                2 => {
                    let c = result.cluster.as_ref().expect("cluster stage ran");
                    let points = science_points(&planted)?;
                    let map = derive_label_map_with(&c.model, &points, cfg.labeling.zero_epsilon)?;
                    w.entry.warnings.extend(map.warnings.iter().chain(&map.monotonicity_warnings).cloned());
                    labeled = label_pixels(&c.model, &map, &planted)?;
                    result.label_agreement = label_agreement(&planted, &labeled);
                    w.json("label/label_map.json", &map)?;
                    w.bytes("label/clusters.csv", cluster_table_csv(&map).as_bytes())?;
                    w.bytes("label/classes.csv", class_table_csv(&planted, &labeled).as_bytes())?;
                    w.json("label/agreement.json", &result.label_agreement)?;
                    w.pixels("label/pixels.csv", &labeled)?;
                }
                3 => {
                    let mut s = make_split(&labeled, &plan)?;
                    w.entry.warnings.append(&mut s.warnings);
                    let train = Dataset::from_pixels(&s.train)?;
                    for t in &cfg.trainers {
                        let model = ModelFile::train(t, &train, derive_named(seed, t.family()))?;
                        w.json(&format!("train/{}.json", t.family()), &model)?;
                        if let TrainedClassifier::Nn(nn) = &model.parameters {
                            w.bytes(&format!("train/{}_loss.csv", t.family()), loss_curve_csv(&nn.loss_curve).as_bytes())?;
                        }
                        result.models.push(model);
                    }
                    if s.test.is_empty() {
                        w.entry.warnings.push("test split is empty; later stages score the training pixels".into());
                        s.test = s.train.clone();
                    }
                    result.test_pixels = s.test.clone();
                    split = Some(s);
                }
                4 => {
                    let test = &split.as_ref().expect("train stage ran").test;
                    for m in &result.models {
                        let mut report = evaluate(m, test)?;
                        report.metadata.model_hash = Some(hash_json(m));
                        w.json(&format!("evaluate/{}.json", m.family), &report)?;
                        w.bytes(&format!("evaluate/{}_confusion5.csv", m.family), report.matrix5.to_csv().as_bytes())?;
                        w.bytes(&format!("evaluate/{}_confusion3.csv", m.family), report.matrix3.to_csv().as_bytes())?;
                        w.bytes(&format!("evaluate/{}_confusion2.csv", m.family), report.matrix2.to_csv().as_bytes())?;
                        result.reports.push((m.family.clone(), report));
                    }
                    w.bytes("evaluate/accuracy.csv", accuracy_table_csv(&result.reports).as_bytes())?;
                }
                5 => {
                    let test = &split.as_ref().expect("train stage ran").test;
                    let spec = cfg.noise.clone().with_seed(seed);
                    for m in &result.models {
                        let r = noise_experiment_with_model(m, test, &spec)?;
                        w.json(&format!("noise-test/{}.json", m.family), &r)?;
                        result.noise.push((m.family.clone(), r));
                    }
                    w.bytes("noise-test/noise.csv", noise_table_csv(&result.noise).as_bytes())?;
                }
                _ => {
                    let test = &split.as_ref().expect("train stage ran").test;
                    let truth = Dataset::from_pixels(test)?.y;
                    let predicted = predict_all(&result.models[0], test);
                    let random = TargetingPolicy::random(cfg.targeting.budget_fraction, seed);
                    let t = TargetingOutcome {
                        random: simulate_with_predictions(&truth, &truth, &random)?,
                        policy: simulate_with_predictions(&truth, &predicted, &cfg.targeting)?,
                        oracle: simulate_with_predictions(&truth, &truth, &cfg.targeting)?,
                    };
                    w.json("target-sim/report.json", &t)?;
                    w.bytes("target-sim/targeting.csv", comparison_csv(&t.random, &t.policy).as_bytes())?;
                    w.bytes("target-sim/oracle.csv", comparison_csv(&t.random, &t.oracle).as_bytes())?;
                    result.targeting = Some(t);
                }
            }
            Ok(())
        })();
        in_stage(stage, r)?;
        manifest.stages.push(w.entry);
    }
    let text = to_json_string(&manifest);
    fs::write(out.join(MANIFEST_FILE), text).map_err(|e| Error::io(out.join(MANIFEST_FILE), e))?;
    result.manifest = Some(manifest);
    Ok(result)
}
