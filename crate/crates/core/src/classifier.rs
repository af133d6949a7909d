//! Common prediction interface shared by every classifier family.

use serde::{Deserialize, Serialize};

use crate::model::{argmax_prefer_storm, CloudClass5, RadianceVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: CloudClass5,
    /// Per-class scores; probabilities for the forest and the networks,
    /// log-posteriors for naive Bayes, margins for the SVM.
    pub scores: [f64; CloudClass5::COUNT],
}

impl Prediction {
    pub fn from_scores(scores: [f64; CloudClass5::COUNT]) -> Self {
        Prediction { class: argmax_prefer_storm(&scores), scores }
    }
}

pub trait Classifier {
    fn predict(&self, x: &RadianceVector) -> Prediction;

    fn predict_batch(&self, xs: &[RadianceVector]) -> Vec<Prediction> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

use crate::classic::{
    forest::{train_rdf, ForestModel, ForestParams},
    gnb::{train_gnb, GnbModel, GnbParams},
    svm::{train_linear_svm, LinearSvmModel, SvmParams},
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::BandId;
use crate::neural::{train_nn, Architecture, NnModel, NnParams};

/// Classifier family plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TrainerConfig {
    Rdf(ForestParams),
    LinearSvm(SvmParams),
    Gnb(GnbParams),
    Mlp(NnParams),
    Cnn(NnParams),
    /// Predicts one fixed class; a baseline.
    Constant { class: CloudClass5 },
}

impl TrainerConfig {
    pub fn family(&self) -> &'static str {
        match self {
            TrainerConfig::Rdf(_) => "rdf",
            TrainerConfig::LinearSvm(_) => "linear_svm",
            TrainerConfig::Gnb(_) => "gnb",
            TrainerConfig::Mlp(_) => "mlp",
            TrainerConfig::Cnn(_) => "cnn",
            TrainerConfig::Constant { .. } => "constant",
        }
    }

    pub fn default_for(family: &str) -> Result<Self> {
        Ok(match family {
            "rdf" => TrainerConfig::Rdf(ForestParams::default()),
            "linear_svm" | "svm" => TrainerConfig::LinearSvm(SvmParams::default()),
            "gnb" => TrainerConfig::Gnb(GnbParams::default()),
            "mlp" => TrainerConfig::Mlp(NnParams::default()),
            "cnn" => TrainerConfig::Cnn(NnParams::default()),
            other => return Err(Error::Config(format!("unknown classifier family `{other}`"))),
        })
    }

    pub fn train(&self, data: &Dataset, seed: u64) -> Result<TrainedClassifier> {
        Ok(match self {
            TrainerConfig::Rdf(p) => TrainedClassifier::Rdf(train_rdf(data, p, seed)?),
            TrainerConfig::LinearSvm(p) => TrainedClassifier::LinearSvm(train_linear_svm(data, p, seed)?),
            TrainerConfig::Gnb(p) => TrainedClassifier::Gnb(train_gnb(data, p)?),
            TrainerConfig::Mlp(p) => TrainedClassifier::Nn(train_nn(Architecture::Mlp, data, p, seed)?),
            TrainerConfig::Cnn(p) => TrainedClassifier::Nn(train_nn(Architecture::Cnn, data, p, seed)?),
            TrainerConfig::Constant { class } => TrainedClassifier::Constant { class: *class },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedClassifier {
    Rdf(ForestModel),
    LinearSvm(LinearSvmModel),
    Gnb(GnbModel),
    Nn(NnModel),
    Constant { class: CloudClass5 },
}

impl Classifier for TrainedClassifier {
    fn predict(&self, x: &RadianceVector) -> Prediction {
        match self {
            TrainedClassifier::Rdf(m) => m.predict(x),
            TrainedClassifier::LinearSvm(m) => m.predict(x),
            TrainedClassifier::Gnb(m) => m.predict(x),
            TrainedClassifier::Nn(m) => m.predict(x),
            TrainedClassifier::Constant { class } => {
                let mut scores = [0.0; CloudClass5::COUNT];
                scores[class.index()] = 1.0;
                Prediction { class: *class, scores }
            }
        }
    }
}

/// On-disk model: family tag, hyperparameters, seed, band order, class list, parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub family: String,
    pub seed: u64,
    pub band_order: Vec<String>,
    pub classes: Vec<String>,
    pub hyperparameters: TrainerConfig,
    pub parameters: TrainedClassifier,
}

impl ModelFile {
    pub fn train(trainer: &TrainerConfig, data: &Dataset, seed: u64) -> Result<Self> {
        Ok(ModelFile {
            family: trainer.family().to_string(),
            seed,
            band_order: BandId::order_names(),
            classes: CloudClass5::names(),
            hyperparameters: trainer.clone(),
            parameters: trainer.train(data, seed)?,
        })
    }

    /// Refuses models whose stored band order or class list differ from this build's.
    pub fn check_compatible(&self) -> Result<()> {
        let expected = BandId::order_names();
        if self.band_order != expected {
            return Err(Error::BandOrder { expected: self.band_order.clone(), found: expected });
        }
        if self.classes != CloudClass5::names() {
            return Err(Error::Config(format!("model class list {:?} is not {:?}", self.classes, CloudClass5::names())));
        }
        if self.family != self.hyperparameters.family() {
            return Err(Error::Config(format!(
                "model family `{}` does not match hyperparameters `{}`",
                self.family,
                self.hyperparameters.family()
            )));
        }
        Ok(())
    }
}

impl Classifier for ModelFile {
    fn predict(&self, x: &RadianceVector) -> Prediction {
        self.parameters.predict(x)
    }
}
