pub mod forest;
pub mod gnb;
pub mod svm;
pub mod weights;

pub use forest::{predict_rdf, train_rdf, ForestModel, ForestParams};
pub use gnb::{predict_gnb, train_gnb, GnbModel, GnbParams};
pub use svm::{predict_linear_svm, train_linear_svm, LinearSvmModel, SvmParams};
pub use weights::{compute_balanced_weights, ClassWeights};
