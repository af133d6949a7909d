//! Domain types shared by every stage of the pipeline.

mod bands;
mod classes;
mod confusion;
mod scene;

pub use bands::{BandId, RadianceVector, ScienceVector, N_BANDS};
pub use classes::{
    argmax_prefer_storm, collapse3to2, collapse5to2, collapse5to3, ClassMapping, CloudClass2, CloudClass3, CloudClass5,
};
pub use confusion::{collapse_matrix, ConfusionMatrix};
pub use scene::{PixelRecord, Region, SceneGrid};
