//! Shared fixtures for the benchmarks.

use cloudclass_core::model::{PixelRecord, ScienceVector};
use cloudclass_core::scenegen::{generate_scenes, SceneGenConfig};
use cloudclass_core::Dataset;

/// Planted-label tropical pixels on a cropped grid.
pub fn tropical_pixels(images: usize, height: usize, width: usize) -> Vec<PixelRecord> {
    let mut cfg = SceneGenConfig::tropical_default().cropped(height, width);
    cfg.images = images;
    generate_scenes(&cfg).expect("bundled config generates").into_iter().flat_map(|s| s.pixels).collect()
}

pub fn dataset(pixels: &[PixelRecord]) -> Dataset {
    Dataset::from_pixels(pixels).expect("generated pixels are labeled")
}

pub fn science(pixels: &[PixelRecord]) -> Vec<ScienceVector> {
    pixels.iter().filter_map(|p| p.science).collect()
}
