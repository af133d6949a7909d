pub mod autolabel;
pub mod classic;
pub mod classifier;
pub mod clustering;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod noise;
pub mod pipeline;
pub mod neural;
pub mod scenegen;
pub mod seed;
pub mod targeting;

pub use classifier::{Classifier, Prediction};
pub use dataset::Dataset;
pub use error::{Error, Result};
