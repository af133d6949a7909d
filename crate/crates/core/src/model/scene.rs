use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bands::{RadianceVector, ScienceVector};
use super::classes::CloudClass5;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Tropical,
    NonTropical,
}

impl Region {
    /// Default (height, width, pixel size in km) of one image or cutout.
    pub fn default_geometry(self) -> (usize, usize, f64) {
        match self {
            Region::Tropical => (119, 208, 15.0),
            Region::NonTropical => (1998, 270, 1.33),
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Tropical => "Tropical",
            Region::NonTropical => "NonTropical",
        })
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "Tropical" | "tropical" => Ok(Region::Tropical),
            "NonTropical" | "non-tropical" | "nontropical" => Ok(Region::NonTropical),
            _ => Err(format!("unknown region `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRecord {
    pub image_id: u32,
    pub row: u32,
    pub col: u32,
    pub radiance: RadianceVector,
    pub science: Option<ScienceVector>,
    pub label: Option<CloudClass5>,
}

impl PixelRecord {
    pub fn key(&self) -> (u32, u32, u32) {
        (self.image_id, self.row, self.col)
    }
}

/// One region-tagged raster of pixels, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGrid {
    pub region: Region,
    pub pixel_size_km: f64,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<PixelRecord>,
}

impl SceneGrid {
    pub fn new(region: Region, pixel_size_km: f64, height: usize, width: usize, pixels: Vec<PixelRecord>) -> Result<Self> {
        if !(pixel_size_km > 0.0) || height == 0 || width == 0 {
            return Err(Error::Config(format!(
                "scene geometry must be positive, got {height}x{width} at {pixel_size_km} km"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::Config(format!(
                "scene has {} pixels, expected {height}x{width} = {}",
                pixels.len(),
                height * width
            )));
        }
        if let Some(p) = pixels.iter().find(|p| p.row as usize >= height || p.col as usize >= width) {
            return Err(Error::Config(format!("pixel ({}, {}) lies outside the {height}x{width} grid", p.row, p.col)));
        }
        Ok(SceneGrid { region, pixel_size_km, height, width, pixels })
    }

    pub fn image_id(&self) -> Option<u32> {
        self.pixels.first().map(|p| p.image_id)
    }

    pub fn pixel(&self, row: usize, col: usize) -> &PixelRecord {
        &self.pixels[row * self.width + col]
    }
}
